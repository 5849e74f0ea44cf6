#pragma once

#include <cstdint>
#include <vector>

#include "vgan/volume.hpp"

namespace vgan {

// Procedural stand-in for a distal-radius scan: a bright cylindrical shell
// (cortex) around a speckled interior (trabecular network) over noisy background.
// The cylinder axis runs along d1.
struct PhantomSpec {
  double outer_radius_frac = 0.7;        // outer radius / half the smaller cross-section extent
  double cortical_thickness_frac = 0.2;  // shell thickness / outer radius, in (0, 0.5)
  double trabecular_density = 0.4;       // fraction of interior voxels that are trabecular
  int trabecular_scale_vox = 2;          // smoothing radius of the trabecular field
  double noise_sigma = 0.04;
  uint64_t seed = 0;
};

inline constexpr float kPhantomBackground = 0.1f;
inline constexpr float kPhantomTrabecular = 0.55f;
inline constexpr float kPhantomCortical = 0.9f;

// Throws ParameterError when the spec is out of range or the shell does not fit.
void validate_phantom(const PhantomSpec& spec, Shape3 shape);

Volume make_phantom(const PhantomSpec& spec, Shape3 shape);

// Voxel masks (1 = inside) of the phantom compartments.
std::vector<uint8_t> phantom_shell_mask(const PhantomSpec& spec, Shape3 shape);
std::vector<uint8_t> phantom_interior_mask(const PhantomSpec& spec, Shape3 shape);

struct PhantomRanges {
  double outer_radius_lo = 0.55, outer_radius_hi = 0.8;
  double thickness_lo = 0.1, thickness_hi = 0.3;
  double density_lo = 0.2, density_hi = 0.6;
  int trabecular_scale_vox = 2;
  double noise_sigma = 0.04;
};

struct LabeledPhantom {
  PhantomSpec spec;
  Volume volume;
  int label = 0;  // 1 when cortical thickness is above the midpoint of the range
};

// Parameters drawn uniformly per volume from a counter stream keyed by (seed, index).
std::vector<LabeledPhantom> make_phantom_corpus(int64_t count, Shape3 shape, uint64_t seed,
                                                const PhantomRanges& ranges = {});

// Two-class corpus (thin vs thick cortex), alternating labels.
std::vector<LabeledPhantom> make_thickness_classes(int64_t count, Shape3 shape, uint64_t seed,
                                                   double thin = 0.1, double thick = 0.3);

}  // namespace vgan
