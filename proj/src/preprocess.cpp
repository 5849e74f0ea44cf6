#include "vgan/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "vgan/dct.hpp"
#include "vgan/errors.hpp"
#include "vgan/rng.hpp"

namespace vgan {
namespace {

struct AxisMap {
  std::vector<int64_t> source;  // source index per output index
  std::vector<uint8_t> padded;
};

AxisMap axis_map(int64_t n, int64_t target) {
  AxisMap m;
  m.source.resize(static_cast<size_t>(target));
  m.padded.resize(static_cast<size_t>(target));
  if (target >= n) {
    const int64_t before = (target - n) / 2;
    for (int64_t t = 0; t < target; ++t) {
      const int64_t s = t - before;
      m.source[t] = mirror_index(s, n);
      m.padded[t] = (s < 0 || s >= n) ? 1 : 0;
    }
  } else {
    const int64_t start = (n - target) / 2;
    for (int64_t t = 0; t < target; ++t) {
      m.source[t] = t + start;
      m.padded[t] = 0;
    }
  }
  return m;
}

float trilinear_mirrored(const Volume& v, double x1, double x2, double x3) {
  const Shape3& s = v.shape();
  const double f1 = std::floor(x1), f2 = std::floor(x2), f3 = std::floor(x3);
  const double t1 = x1 - f1, t2 = x2 - f2, t3 = x3 - f3;
  const auto i0 = static_cast<int64_t>(f1), j0 = static_cast<int64_t>(f2), k0 = static_cast<int64_t>(f3);
  const int64_t is[2] = {mirror_index(i0, s.d1), mirror_index(i0 + 1, s.d1)};
  const int64_t js[2] = {mirror_index(j0, s.d2), mirror_index(j0 + 1, s.d2)};
  const int64_t ks[2] = {mirror_index(k0, s.d3), mirror_index(k0 + 1, s.d3)};
  const double w1[2] = {1.0 - t1, t1}, w2[2] = {1.0 - t2, t2}, w3[2] = {1.0 - t3, t3};
  double acc = 0.0;
  for (int a = 0; a < 2; ++a) {
    if (w1[a] == 0.0) continue;
    for (int b = 0; b < 2; ++b) {
      if (w2[b] == 0.0) continue;
      for (int c = 0; c < 2; ++c) {
        if (w3[c] == 0.0) continue;
        acc += w1[a] * w2[b] * w3[c] * v.at(is[a], js[b], ks[c]);
      }
    }
  }
  return static_cast<float>(acc);
}

void clamp_unit(Volume& v) {
  for (float& x : v.data()) x = std::clamp(x, 0.0f, 1.0f);
}

}  // namespace

void validate(const PreprocessConfig& cfg) {
  const Shape3& t = cfg.target_shape;
  if (!t.valid()) throw ParameterError("target shape must be positive");
  if (!(cfg.dct_clip > 0.0)) throw ParameterError("dct_clip must be > 0");
  if (cfg.subsample_factor < 1) throw ParameterError("subsample factor must be >= 1");
  const int f = cfg.subsample_factor;
  if (t.d1 % f || t.d2 % f || t.d3 % f)
    throw ParameterError("target shape " + t.str() + " not divisible by subsample factor");
  const Shape3 sub = t.scaled_down(f);
  if (sub.d2 % 32 || sub.d3 % 32)
    throw ParameterError("subsampled in-plane extent " + sub.str() + " must be divisible by 32");
  if (cfg.stack_depth < 1 || cfg.stack_depth % 32)
    throw ParameterError("stack depth must be a positive multiple of 32");
  if (cfg.stack_depth > sub.d1) throw ParameterError("stack depth exceeds subsampled depth");
  if (cfg.n_stacks < 1) throw ParameterError("n_stacks must be >= 1");
  if (cfg.aug_per_stack < 0) throw ParameterError("aug_per_stack must be >= 0");
  if (cfg.rot_range_deg.first > cfg.rot_range_deg.second) throw ParameterError("rotation range reversed");
  if (cfg.zoom_range.first < 1.0 || cfg.zoom_range.first > cfg.zoom_range.second)
    throw ParameterError("zoom range must satisfy 1 <= lo <= hi");
}

int64_t VoxelMask::count() const {
  return std::count(bits.begin(), bits.end(), uint8_t{1});
}

int64_t mirror_index(int64_t i, int64_t n) {
  if (n <= 1) return 0;
  const int64_t period = 2 * (n - 1);
  int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - m;
}

PaddedVolume pad_or_crop_with_mask(const Volume& v, Shape3 target) {
  if (v.empty()) throw InvariantError("pad_or_crop on an empty volume");
  if (!target.valid()) throw ParameterError("target shape must be positive, got " + target.str());
  const Shape3& s = v.shape();
  const AxisMap m1 = axis_map(s.d1, target.d1), m2 = axis_map(s.d2, target.d2),
                m3 = axis_map(s.d3, target.d3);
  PaddedVolume out{Volume(target, v.spacing_um()),
                   VoxelMask{target, std::vector<uint8_t>(static_cast<size_t>(target.voxels()))}};
  size_t p = 0;
  for (int64_t i = 0; i < target.d1; ++i)
    for (int64_t j = 0; j < target.d2; ++j)
      for (int64_t k = 0; k < target.d3; ++k, ++p) {
        out.volume.data()[p] = v.at(m1.source[i], m2.source[j], m3.source[k]);
        out.pad_mask.bits[p] = m1.padded[i] | m2.padded[j] | m3.padded[k];
      }
  return out;
}

Volume pad_or_crop(const Volume& v, Shape3 target) {
  return std::move(pad_or_crop_with_mask(v, target).volume);
}

Volume dct_clip_noise(const Volume& v, double clip) {
  if (!(clip > 0.0)) throw ParameterError("clip must be > 0");
  if (!v.all_finite()) throw InvariantError("dct_clip_noise needs finite voxels");
  std::vector<double> values(v.data().begin(), v.data().end());
  std::vector<double> coeffs = dct3(values, v.shape());
  for (double& c : coeffs) c = std::clamp(c, -clip, clip);
  const std::vector<double> back = idct3(coeffs, v.shape());
  Volume out(v.shape(), v.spacing_um());
  std::transform(back.begin(), back.end(), out.data().begin(),
                 [](double x) { return static_cast<float>(x); });
  return out;
}

Volume composite_padded_regions(const Volume& padded, const Volume& noise, const VoxelMask& pad_mask) {
  if (padded.shape() != noise.shape() || padded.shape() != pad_mask.shape ||
      static_cast<int64_t>(pad_mask.bits.size()) != padded.shape().voxels())
    throw ShapeError("composite operands disagree on shape");
  Volume out = padded;
  for (size_t p = 0; p < pad_mask.bits.size(); ++p)
    if (pad_mask.bits[p]) out.data()[p] = noise.data()[p];
  return out;
}

Volume subsample(const Volume& v, int factor) {
  if (factor < 1) throw ParameterError("subsample factor must be >= 1");
  const Shape3& s = v.shape();
  if (s.d1 % factor || s.d2 % factor || s.d3 % factor)
    throw ParameterError("shape " + s.str() + " not divisible by " + std::to_string(factor));
  if (factor == 1) return v;
  const Shape3 o = s.scaled_down(factor);
  Volume out(o, v.spacing_um() * static_cast<float>(factor));
  const double norm = 1.0 / static_cast<double>(factor * factor * factor);
  for (int64_t i = 0; i < o.d1; ++i)
    for (int64_t j = 0; j < o.d2; ++j)
      for (int64_t k = 0; k < o.d3; ++k) {
        double acc = 0.0;
        for (int a = 0; a < factor; ++a)
          for (int b = 0; b < factor; ++b)
            for (int c = 0; c < factor; ++c) acc += v.at(i * factor + a, j * factor + b, k * factor + c);
        out.at(i, j, k) = static_cast<float>(acc * norm);
      }
  return out;
}

std::vector<int64_t> stack_offsets(int64_t d1, int stack_depth, int n_stacks) {
  if (n_stacks < 1) throw ParameterError("n_stacks must be >= 1");
  if (stack_depth < 1 || stack_depth > d1)
    throw ParameterError("stack depth " + std::to_string(stack_depth) + " outside [1, " +
                         std::to_string(d1) + "]");
  std::vector<int64_t> offsets(static_cast<size_t>(n_stacks), 0);
  const int64_t span = d1 - stack_depth;
  for (int s = 1; s < n_stacks; ++s)
    offsets[s] = std::llround(static_cast<double>(span) * s / (n_stacks - 1));
  return offsets;
}

std::vector<Volume> split_stacks(const Volume& v, int stack_depth, int n_stacks) {
  const Shape3& s = v.shape();
  std::vector<Volume> out;
  for (int64_t off : stack_offsets(s.d1, stack_depth, n_stacks)) {
    Volume stack({stack_depth, s.d2, s.d3}, v.spacing_um());
    const auto slice = static_cast<size_t>(s.d2 * s.d3);
    std::copy_n(v.data().begin() + static_cast<std::ptrdiff_t>(off * slice), stack_depth * slice,
                stack.data().begin());
    out.push_back(std::move(stack));
  }
  return out;
}

Volume augment(const Volume& v, double angle_deg, double zoom) {
  if (!(zoom >= 1.0)) throw ParameterError("zoom must be >= 1 (zoom-in only)");
  if (!std::isfinite(angle_deg)) throw ParameterError("angle must be finite");
  const Shape3& s = v.shape();
  const double c1 = 0.5 * static_cast<double>(s.d1 - 1);
  const double c2 = 0.5 * static_cast<double>(s.d2 - 1);
  const double c3 = 0.5 * static_cast<double>(s.d3 - 1);
  const double theta = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  Volume out(s, v.spacing_um());
  for (int64_t i = 0; i < s.d1; ++i) {
    const double x1 = c1 + (static_cast<double>(i) - c1) / zoom;
    for (int64_t j = 0; j < s.d2; ++j) {
      const double y = (static_cast<double>(j) - c2) / zoom;
      for (int64_t k = 0; k < s.d3; ++k) {
        const double x = (static_cast<double>(k) - c3) / zoom;
        // Inverse map of a rotation by theta in the (d2, d3) plane.
        const double x2 = c2 + cs * y + sn * x;
        const double x3 = c3 - sn * y + cs * x;
        out.at(i, j, k) = trilinear_mirrored(v, x1, x2, x3);
      }
    }
  }
  return out;
}

AugmentDraw draw_augmentation(const PreprocessConfig& cfg, uint64_t seed, uint64_t volume_id,
                              uint64_t stack_index, uint64_t copy_index) {
  const CounterStream s(derive_seed(seed, {volume_id, stack_index, copy_index}));
  return {s.uniform(0, cfg.rot_range_deg.first, cfg.rot_range_deg.second),
          s.uniform(1, cfg.zoom_range.first, cfg.zoom_range.second)};
}

void normalize_corpus(std::vector<Volume>& corpus) {
  float lo = std::numeric_limits<float>::infinity(), hi = -lo;
  for (const Volume& v : corpus) {
    if (!v.all_finite()) throw InvariantError("corpus contains non-finite voxels");
    const auto [mn, mx] = std::minmax_element(v.data().begin(), v.data().end());
    lo = std::min(lo, *mn);
    hi = std::max(hi, *mx);
  }
  if (corpus.empty()) return;
  const float range = hi > lo ? hi - lo : 1.0f;
  for (Volume& v : corpus)
    for (float& x : v.data()) x = (x - lo) / range;
}

std::vector<Volume> preprocess_volume(const Volume& v, const PreprocessConfig& cfg, uint64_t seed,
                                      uint64_t volume_id) {
  validate(cfg);
  PaddedVolume padded = pad_or_crop_with_mask(v, cfg.target_shape);
  Volume composed = padded.volume;
  if (padded.pad_mask.count() > 0) {
    const Volume noise = dct_clip_noise(padded.volume, cfg.dct_clip);
    composed = composite_padded_regions(padded.volume, noise, padded.pad_mask);
  }
  padded = {};
  const Volume small = subsample(composed, cfg.subsample_factor);
  std::vector<Volume> stacks = split_stacks(small, cfg.stack_depth, cfg.n_stacks);

  std::vector<Volume> out;
  for (size_t s = 0; s < stacks.size(); ++s) {
    if (cfg.aug_per_stack == 0) {
      clamp_unit(stacks[s]);
      out.push_back(std::move(stacks[s]));
      continue;
    }
    for (int c = 0; c < cfg.aug_per_stack; ++c) {
      const AugmentDraw d = draw_augmentation(cfg, seed, volume_id, s, static_cast<uint64_t>(c));
      Volume a = augment(stacks[s], d.angle_deg, d.zoom);
      clamp_unit(a);
      out.push_back(std::move(a));
    }
  }
  return out;
}

}  // namespace vgan
