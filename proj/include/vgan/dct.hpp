#pragma once

#include <vector>

#include "vgan/volume.hpp"

namespace vgan {

// Orthonormal separable 3D DCT-II over a row-major (d1,d2,d3) grid.
std::vector<double> dct3(const std::vector<double>& values, Shape3 shape);

// Orthonormal 3D DCT-III, the exact inverse of dct3.
std::vector<double> idct3(const std::vector<double>& coeffs, Shape3 shape);

}  // namespace vgan
