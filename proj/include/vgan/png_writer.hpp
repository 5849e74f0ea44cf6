#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vgan/volume.hpp"

namespace vgan {

enum class SliceAxis { Axial, Coronal, Sagittal };  // fixed d1, d2, d3

SliceAxis parse_axis(const std::string& s);
int64_t axis_extent(const Shape3& s, SliceAxis axis);

struct GrayImage {
  int64_t width = 0, height = 0;
  std::vector<uint8_t> pixels;  // row-major
};

// Linear map 0.0 -> 0, 1.0 -> 255, clamped outside, rounded to nearest.
uint8_t to_gray8(float v);

// Throws NotFoundError when index is outside the axis extent.
GrayImage extract_slice(const Volume& v, SliceAxis axis, int64_t index);

std::string encode_png(const GrayImage& img);
GrayImage decode_png(const std::string& bytes);

}  // namespace vgan
