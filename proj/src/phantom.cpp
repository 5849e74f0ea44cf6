#include "vgan/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/distributions/normal.hpp>

#include "vgan/errors.hpp"
#include "vgan/rng.hpp"

namespace vgan {
namespace {

struct Geometry {
  double c2, c3, outer, inner;
};

Geometry geometry(const PhantomSpec& spec, Shape3 shape) {
  const double half = 0.5 * static_cast<double>(std::min(shape.d2, shape.d3));
  const double outer = spec.outer_radius_frac * half;
  return {0.5 * static_cast<double>(shape.d2 - 1), 0.5 * static_cast<double>(shape.d3 - 1), outer,
          outer * (1.0 - spec.cortical_thickness_frac)};
}

double radius_at(const Geometry& g, int64_t j, int64_t k) {
  return std::hypot(static_cast<double>(j) - g.c2, static_cast<double>(k) - g.c3);
}

// Running-sum box blur of radius r along one axis of a row-major (n0,n1,n2) grid.
void box_blur_axis(std::vector<double>& f, Shape3 s, int axis, int r) {
  const int64_t n[3] = {s.d1, s.d2, s.d3};
  const int64_t stride[3] = {s.d2 * s.d3, s.d3, 1};
  const int64_t len = n[axis];
  std::vector<double> line(static_cast<size_t>(len));
  const int a = (axis + 1) % 3, b = (axis + 2) % 3;
  for (int64_t ia = 0; ia < n[a]; ++ia) {
    for (int64_t ib = 0; ib < n[b]; ++ib) {
      const int64_t base = ia * stride[a] + ib * stride[b];
      for (int64_t t = 0; t < len; ++t) line[t] = f[base + t * stride[axis]];
      for (int64_t t = 0; t < len; ++t) {
        double acc = 0.0;
        int cnt = 0;
        for (int64_t u = std::max<int64_t>(0, t - r); u <= std::min<int64_t>(len - 1, t + r); ++u) {
          acc += line[u];
          ++cnt;
        }
        f[base + t * stride[axis]] = acc / cnt;
      }
    }
  }
}

}  // namespace

void validate_phantom(const PhantomSpec& spec, Shape3 shape) {
  if (!shape.valid()) throw ParameterError("phantom shape must be positive, got " + shape.str());
  if (!(spec.outer_radius_frac > 0.0 && spec.outer_radius_frac < 1.0))
    throw ParameterError("outer_radius_frac must lie in (0,1)");
  if (!(spec.cortical_thickness_frac > 0.0 && spec.cortical_thickness_frac < 0.5))
    throw ParameterError("cortical_thickness_frac must lie in (0,0.5)");
  if (!(spec.trabecular_density >= 0.0 && spec.trabecular_density <= 1.0))
    throw ParameterError("trabecular_density must lie in [0,1]");
  if (spec.trabecular_scale_vox < 1) throw ParameterError("trabecular_scale_vox must be >= 1");
  if (!(spec.noise_sigma >= 0.0)) throw ParameterError("noise_sigma must be >= 0");

  const Geometry g = geometry(spec, shape);
  const double half = 0.5 * static_cast<double>(std::min(shape.d2, shape.d3));
  if (g.outer < 2.0 || g.outer > half - 1.0)
    throw ParameterError("shell of outer radius " + std::to_string(g.outer) +
                         " voxels does not fit the cross-section of " + shape.str());
  if (g.outer - g.inner < 0.5)
    throw ParameterError("cortical shell thinner than half a voxel");
}

std::vector<uint8_t> phantom_shell_mask(const PhantomSpec& spec, Shape3 shape) {
  validate_phantom(spec, shape);
  const Geometry g = geometry(spec, shape);
  std::vector<uint8_t> mask(static_cast<size_t>(shape.voxels()), 0);
  for (int64_t i = 0; i < shape.d1; ++i)
    for (int64_t j = 0; j < shape.d2; ++j)
      for (int64_t k = 0; k < shape.d3; ++k) {
        const double r = radius_at(g, j, k);
        mask[(i * shape.d2 + j) * shape.d3 + k] = (r <= g.outer && r > g.inner) ? 1 : 0;
      }
  return mask;
}

std::vector<uint8_t> phantom_interior_mask(const PhantomSpec& spec, Shape3 shape) {
  validate_phantom(spec, shape);
  const Geometry g = geometry(spec, shape);
  std::vector<uint8_t> mask(static_cast<size_t>(shape.voxels()), 0);
  for (int64_t i = 0; i < shape.d1; ++i)
    for (int64_t j = 0; j < shape.d2; ++j)
      for (int64_t k = 0; k < shape.d3; ++k)
        mask[(i * shape.d2 + j) * shape.d3 + k] = radius_at(g, j, k) <= g.inner ? 1 : 0;
  return mask;
}

Volume make_phantom(const PhantomSpec& spec, Shape3 shape) {
  validate_phantom(spec, shape);
  const Geometry g = geometry(spec, shape);
  const auto n = static_cast<size_t>(shape.voxels());

  // Trabecular field: smoothed white noise standardized to unit variance, then
  // thresholded at the (1 - density) normal quantile. The threshold is monotone
  // in density, so denser specs only ever add trabecular voxels.
  const CounterStream field_stream(derive_seed(spec.seed, {1}));
  std::vector<double> field(n);
  for (size_t p = 0; p < n; ++p) field[p] = field_stream.normal(p);
  for (int pass = 0; pass < 2; ++pass)
    for (int axis = 0; axis < 3; ++axis) box_blur_axis(field, shape, axis, spec.trabecular_scale_vox);
  double mean = 0.0, sq = 0.0;
  for (double v : field) mean += v;
  mean /= static_cast<double>(n);
  for (double v : field) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / static_cast<double>(n));

  double threshold = std::numeric_limits<double>::infinity();
  if (spec.trabecular_density >= 1.0) {
    threshold = -std::numeric_limits<double>::infinity();
  } else if (spec.trabecular_density > 0.0) {
    boost::math::normal_distribution<double> unit;
    threshold = boost::math::quantile(unit, 1.0 - spec.trabecular_density);
  }

  const CounterStream noise_stream(derive_seed(spec.seed, {2}));
  Volume v(shape);
  for (int64_t i = 0; i < shape.d1; ++i) {
    for (int64_t j = 0; j < shape.d2; ++j) {
      for (int64_t k = 0; k < shape.d3; ++k) {
        const size_t p = v.index(i, j, k);
        const double r = radius_at(g, j, k);
        float base = kPhantomBackground;
        if (r <= g.outer && r > g.inner) {
          base = kPhantomCortical;
        } else if (r <= g.inner && sd > 0.0 && (field[p] - mean) / sd > threshold) {
          base = kPhantomTrabecular;
        }
        const double value = base + spec.noise_sigma * noise_stream.normal(p);
        v.data()[p] = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return v;
}

std::vector<LabeledPhantom> make_phantom_corpus(int64_t count, Shape3 shape, uint64_t seed,
                                                const PhantomRanges& ranges) {
  std::vector<LabeledPhantom> out;
  out.reserve(static_cast<size_t>(count));
  const double mid = 0.5 * (ranges.thickness_lo + ranges.thickness_hi);
  for (int64_t idx = 0; idx < count; ++idx) {
    const CounterStream s(derive_seed(seed, {static_cast<uint64_t>(idx)}));
    PhantomSpec spec;
    spec.outer_radius_frac = s.uniform(0, ranges.outer_radius_lo, ranges.outer_radius_hi);
    spec.cortical_thickness_frac = s.uniform(1, ranges.thickness_lo, ranges.thickness_hi);
    spec.trabecular_density = s.uniform(2, ranges.density_lo, ranges.density_hi);
    spec.trabecular_scale_vox = ranges.trabecular_scale_vox;
    spec.noise_sigma = ranges.noise_sigma;
    spec.seed = s.bits(3);
    out.push_back({spec, make_phantom(spec, shape), spec.cortical_thickness_frac > mid ? 1 : 0});
  }
  return out;
}

std::vector<LabeledPhantom> make_thickness_classes(int64_t count, Shape3 shape, uint64_t seed,
                                                   double thin, double thick) {
  PhantomRanges ranges;
  std::vector<LabeledPhantom> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t idx = 0; idx < count; ++idx) {
    const CounterStream s(derive_seed(seed, {static_cast<uint64_t>(idx), 7}));
    PhantomSpec spec;
    const int label = static_cast<int>(idx % 2);
    spec.outer_radius_frac = s.uniform(0, ranges.outer_radius_lo, ranges.outer_radius_hi);
    spec.cortical_thickness_frac = label ? thick : thin;
    spec.trabecular_density = s.uniform(2, ranges.density_lo, ranges.density_hi);
    spec.trabecular_scale_vox = ranges.trabecular_scale_vox;
    spec.noise_sigma = ranges.noise_sigma;
    spec.seed = s.bits(3);
    out.push_back({spec, make_phantom(spec, shape), label});
  }
  return out;
}

}  // namespace vgan
