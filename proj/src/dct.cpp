#include "vgan/dct.hpp"

#include <cmath>
#include <mutex>

#include <fftw3.h>

#include "vgan/errors.hpp"

namespace vgan {
namespace {

// FFTW's planner is not thread-safe; execution of a finished plan is.
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// REDFT10 yields 2*sum x_n cos(pi (n+1/2) k / N). The orthonormal DCT-II
// divides that by sqrt(2N), and additionally by sqrt(2) at k = 0.
double forward_scale(int64_t k, int64_t n) {
  const double s = 1.0 / std::sqrt(2.0 * static_cast<double>(n));
  return k == 0 ? s / std::sqrt(2.0) : s;
}

// REDFT01 yields X_0 + 2*sum_{k>=1} X_k cos(...). Pre-scaling makes it the
// orthonormal DCT-III.
double inverse_scale(int64_t k, int64_t n) {
  return k == 0 ? 1.0 / std::sqrt(static_cast<double>(n)) : 1.0 / std::sqrt(2.0 * static_cast<double>(n));
}

template <typename ScaleFn>
void apply_scale(std::vector<double>& v, Shape3 s, ScaleFn scale) {
  std::vector<double> s1(s.d1), s2(s.d2), s3(s.d3);
  for (int64_t i = 0; i < s.d1; ++i) s1[i] = scale(i, s.d1);
  for (int64_t j = 0; j < s.d2; ++j) s2[j] = scale(j, s.d2);
  for (int64_t k = 0; k < s.d3; ++k) s3[k] = scale(k, s.d3);
  size_t p = 0;
  for (int64_t i = 0; i < s.d1; ++i)
    for (int64_t j = 0; j < s.d2; ++j)
      for (int64_t k = 0; k < s.d3; ++k) v[p++] *= s1[i] * s2[j] * s3[k];
}

void run_r2r(std::vector<double>& data, Shape3 s, fftw_r2r_kind kind) {
  fftw_plan plan;
  {
    std::lock_guard lock(planner_mutex());
    plan = fftw_plan_r2r_3d(static_cast<int>(s.d1), static_cast<int>(s.d2), static_cast<int>(s.d3),
                            data.data(), data.data(), kind, kind, kind, FFTW_ESTIMATE);
  }
  if (!plan) throw Error("FFTW could not plan a transform for shape " + s.str());
  fftw_execute(plan);
  std::lock_guard lock(planner_mutex());
  fftw_destroy_plan(plan);
}

void check_size(const std::vector<double>& v, Shape3 s) {
  if (!s.valid() || static_cast<int64_t>(v.size()) != s.voxels())
    throw ShapeError("DCT input size does not match shape " + s.str());
}

}  // namespace

std::vector<double> dct3(const std::vector<double>& values, Shape3 shape) {
  check_size(values, shape);
  std::vector<double> out = values;
  run_r2r(out, shape, FFTW_REDFT10);
  apply_scale(out, shape, forward_scale);
  return out;
}

std::vector<double> idct3(const std::vector<double>& coeffs, Shape3 shape) {
  check_size(coeffs, shape);
  std::vector<double> out = coeffs;
  apply_scale(out, shape, inverse_scale);
  run_r2r(out, shape, FFTW_REDFT01);
  return out;
}

}  // namespace vgan
