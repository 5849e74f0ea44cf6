#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "vgan/volume.hpp"

namespace vgan {

struct PreprocessConfig {
  Shape3 target_shape{168, 576, 448};
  double dct_clip = 1000.0;
  int subsample_factor = 2;
  int stack_depth = 32;
  int n_stacks = 4;
  std::pair<double, double> rot_range_deg{-10.0, 10.0};
  std::pair<double, double> zoom_range{1.0, 1.15};
  int aug_per_stack = 1;  // 0 keeps the plain stacks
};

// Throws ParameterError on violated invariants (divisibility by 32 after
// subsampling, stack depth within the subsampled depth, ...).
void validate(const PreprocessConfig& cfg);

// One byte per voxel, 1 marks a padded voxel.
struct VoxelMask {
  Shape3 shape;
  std::vector<uint8_t> bits;

  int64_t count() const;
};

// Mirror index into [0, n) reflecting about the boundary voxel without
// repeating it; pads wider than the source keep tiling the reflection.
int64_t mirror_index(int64_t i, int64_t n);

struct PaddedVolume {
  Volume volume;
  VoxelMask pad_mask;
};

// Centered crop or mirror pad of every axis to `target`.
PaddedVolume pad_or_crop_with_mask(const Volume& v, Shape3 target);
Volume pad_or_crop(const Volume& v, Shape3 target);

// IDCT(clamp(DCT(v), -clip, clip)) with the orthonormal DCT-II/III pair.
Volume dct_clip_noise(const Volume& v, double clip);

Volume composite_padded_regions(const Volume& padded, const Volume& noise, const VoxelMask& pad_mask);

// Block-average downsampling; spacing grows by `factor`.
Volume subsample(const Volume& v, int factor);

// Start offsets of the slice stacks: even spacing over [0, d1 - depth],
// rounded to the nearest integer.
std::vector<int64_t> stack_offsets(int64_t d1, int stack_depth, int n_stacks);
std::vector<Volume> split_stacks(const Volume& v, int stack_depth, int n_stacks);

// Axial in-plane rotation about the slice center followed by a central
// isotropic zoom-in, sampled trilinearly with mirrored out-of-bounds reads.
Volume augment(const Volume& v, double angle_deg, double zoom);

struct AugmentDraw {
  double angle_deg;
  double zoom;
};

// Uniform draw keyed by (seed, volume id, stack, copy); independent of worker order.
AugmentDraw draw_augmentation(const PreprocessConfig& cfg, uint64_t seed, uint64_t volume_id,
                              uint64_t stack_index, uint64_t copy_index);

// Linear rescale of every volume to [0,1] by the corpus-wide min/max.
void normalize_corpus(std::vector<Volume>& corpus);

// pad/crop -> DCT-clip noise -> composite -> subsample -> split -> augment,
// clamped to [0,1].
std::vector<Volume> preprocess_volume(const Volume& v, const PreprocessConfig& cfg, uint64_t seed,
                                      uint64_t volume_id);

}  // namespace vgan
