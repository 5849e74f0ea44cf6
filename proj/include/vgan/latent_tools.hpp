#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "vgan/inversion.hpp"
#include "vgan/model.hpp"

namespace vgan {

enum class TruncationMode { None, ProGanTruncNorm, StyleGanPsi };

struct TruncationConfig {
  TruncationMode mode = TruncationMode::None;
  double level = 1.8;  // truncnorm bound
  double psi = 1.0;
  std::optional<torch::Tensor> w_bar;  // required for StyleGanPsi

  void validate() const;
};

// N(0,1) conditioned on |x| <= level, by rejection. [count, dim].
torch::Tensor truncated_normal(int64_t count, int64_t dim, double level, uint64_t seed);

// Closed-form variance of a standard normal truncated to [-a, a].
double truncated_normal_variance(double a);

// Plain N(0, I) codes from the counter stream. [count, dim].
torch::Tensor standard_normal(int64_t count, int64_t dim, uint64_t seed);

// w_bar + psi (w - w_bar).
torch::Tensor apply_psi(const torch::Tensor& w, const torch::Tensor& w_bar, double psi);

// Codes in the model's code space (z for ProGAN, w for StyleGAN).
torch::Tensor sample_codes(GanModel& model, const TruncationConfig& cfg, int64_t count, uint64_t seed);

// G(alpha z1 + (1 - alpha) z2) for each alpha, in order.
std::vector<torch::Tensor> transition(GanModel& model, const torch::Tensor& code1, const torch::Tensor& code2,
                                      const std::vector<double>& alphas);

// Evenly spaced interior alphas i/(n+1), i = 1..n, ascending.
std::vector<double> transition_alphas(int64_t n);

// Source styles for the first `boundary` convolutions, target for the rest.
torch::Tensor style_mix(GanModel& model, const torch::Tensor& w_source, const torch::Tensor& w_target,
                        int boundary);

enum class DirectionSource { ProGanFirstLinear, StyleGanConcat15, Custom };
std::string to_string(DirectionSource s);

struct DirectionSet {
  Eigen::MatrixXd directions;  // [k, 512], rows orthonormal
  Eigen::VectorXd eigenvalues;  // descending, non-negative
  DirectionSource source = DirectionSource::Custom;

  torch::Tensor direction(int64_t i) const;  // [1,512] float
};

// Leading k eigenvectors of A^T A. Sign: first nonzero component positive.
// Within a group of tied eigenvalues the basis is the Gram-Schmidt
// orthogonalization of the projected canonical vectors, taken in index order.
DirectionSet find_directions(const Eigen::MatrixXd& a, int64_t k, double tie_tol = 1e-9);

// A for the model: the effective first dense layer (ProGAN) or the row
// concatenation of the 15 style affine maps (StyleGAN).
Eigen::MatrixXd direction_matrix(const GanModel& model);
DirectionSet find_model_directions(const GanModel& model, int64_t k);

struct EditResult {
  torch::Tensor edited;          // G(code + strength n)
  torch::Tensor reconstruction;  // G(code)
  torch::Tensor residual;        // edited - original
  torch::Tensor code;
};

// Decode code + strength n and report the residual against `original`.
EditResult edit_code(GanModel& model, const torch::Tensor& original, const torch::Tensor& code,
                     const torch::Tensor& direction, double strength);

// Full path: invert x, then edit_code.
EditResult edit(GanModel& model, const Volume& x, const torch::Tensor& direction, double strength,
                const InversionConfig& cfg);

}  // namespace vgan
