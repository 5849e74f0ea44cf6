#include "vgan/latent_tools.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vgan/errors.hpp"
#include "vgan/rng.hpp"

namespace vgan {

void TruncationConfig::validate() const {
  switch (mode) {
    case TruncationMode::None:
      break;
    case TruncationMode::ProGanTruncNorm:
      if (!(level > 0) || !std::isfinite(level)) throw ParameterError("truncation level must be positive");
      break;
    case TruncationMode::StyleGanPsi:
      if (!(psi >= 0.0 && psi <= 1.0)) throw ParameterError("psi must lie in [0,1]");
      if (!w_bar) throw ParameterError("psi truncation needs w_bar; the checkpoint has none");
      break;
  }
}

torch::Tensor standard_normal(int64_t count, int64_t dim, uint64_t seed) {
  CounterStream cs(derive_seed(seed, {0x7a}));
  auto out = torch::empty({count, dim}, torch::kFloat32);
  auto* p = out.data_ptr<float>();
  for (int64_t i = 0; i < count * dim; ++i) p[i] = static_cast<float>(cs.normal(static_cast<uint64_t>(i)));
  return out;
}

torch::Tensor truncated_normal(int64_t count, int64_t dim, double level, uint64_t seed) {
  if (!(level > 0)) throw ParameterError("truncation level must be positive");
  CounterStream cs(derive_seed(seed, {0x7b}));
  auto out = torch::empty({count, dim}, torch::kFloat32);
  auto* p = out.data_ptr<float>();
  uint64_t n = 0;
  for (int64_t i = 0; i < count * dim; ++i) {
    double v;
    do {
      v = cs.normal(n++);
    } while (std::abs(v) > level || std::abs(static_cast<float>(v)) > level);
    p[i] = static_cast<float>(v);
  }
  return out;
}

double truncated_normal_variance(double a) {
  const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * std::numbers::pi);
  const double mass = std::erf(a / std::numbers::sqrt2);  // 2 Phi(a) - 1
  return 1.0 - 2.0 * a * phi / mass;
}

torch::Tensor apply_psi(const torch::Tensor& w, const torch::Tensor& w_bar, double psi) {
  if (psi == 1.0) return w.clone();
  if (psi == 0.0) return w_bar.reshape({1, -1}).expand_as(w).clone();
  return w_bar + psi * (w - w_bar);
}

torch::Tensor sample_codes(GanModel& model, const TruncationConfig& cfg, int64_t count, uint64_t seed) {
  cfg.validate();
  if (count < 1) throw ParameterError("count must be positive");
  const int64_t dim = model.cfg.latent_dim;
  if (model.cfg.arch == Arch::ProGan) {
    if (cfg.mode == TruncationMode::StyleGanPsi) throw ParameterError("psi truncation applies to StyleGAN only");
    return cfg.mode == TruncationMode::ProGanTruncNorm ? truncated_normal(count, dim, cfg.level, seed)
                                                       : standard_normal(count, dim, seed);
  }
  if (cfg.mode == TruncationMode::ProGanTruncNorm) throw ParameterError("truncated-normal sampling applies to ProGAN only");
  torch::NoGradGuard ng;
  auto w = model.style->mapping->forward(standard_normal(count, dim, seed));
  if (cfg.mode == TruncationMode::StyleGanPsi) w = apply_psi(w, *cfg.w_bar, cfg.psi);
  return w;
}

std::vector<double> transition_alphas(int64_t n) {
  if (n < 1) throw ParameterError("transition needs at least one step");
  std::vector<double> a(n);
  for (int64_t i = 0; i < n; ++i) a[i] = static_cast<double>(i + 1) / static_cast<double>(n + 1);
  return a;
}

std::vector<torch::Tensor> transition(GanModel& model, const torch::Tensor& code1, const torch::Tensor& code2,
                                      const std::vector<double>& alphas) {
  if (code1.sizes() != code2.sizes()) throw ShapeError("transition codes differ in shape");
  for (double a : alphas)
    if (!(a >= 0.0 && a <= 1.0)) throw ParameterError("transition alpha " + std::to_string(a) + " outside [0,1]");
  torch::NoGradGuard ng;
  std::vector<torch::Tensor> out;
  for (double a : alphas) {
    torch::Tensor c = a == 1.0 ? code1 : a == 0.0 ? code2 : a * code1 + (1.0 - a) * code2;
    out.push_back(model.decode(c, NoiseSpec::pinned()));
  }
  return out;
}

torch::Tensor style_mix(GanModel& model, const torch::Tensor& w_source, const torch::Tensor& w_target,
                        int boundary) {
  if (model.cfg.arch != Arch::StyleGan) throw ParameterError("style mixing needs a StyleGAN model");
  torch::NoGradGuard ng;
  return model.decode_layers(mix_latents(w_source, w_target, boundary), NoiseSpec::pinned());
}

std::string to_string(DirectionSource s) {
  switch (s) {
    case DirectionSource::ProGanFirstLinear:
      return "progan_first_linear";
    case DirectionSource::StyleGanConcat15:
      return "stylegan_concat_15";
    case DirectionSource::Custom:
      break;
  }
  return "custom";
}

torch::Tensor DirectionSet::direction(int64_t i) const {
  if (i < 0 || i >= directions.rows()) throw ParameterError("direction index out of range");
  auto t = torch::empty({1, directions.cols()}, torch::kFloat32);
  for (int64_t j = 0; j < directions.cols(); ++j) t[0][j] = static_cast<float>(directions(i, j));
  return t;
}

DirectionSet find_directions(const Eigen::MatrixXd& a, int64_t k, double tie_tol) {
  const int64_t n = a.cols();
  if (k < 1 || k > n) throw ParameterError("k must lie in 1.." + std::to_string(n));
  if (!a.allFinite()) throw InvariantError("direction matrix has non-finite entries");

  const Eigen::MatrixXd ata = a.transpose() * a;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(ata);
  if (es.info() != Eigen::Success) throw InvariantError("eigendecomposition failed");
  // Eigen sorts ascending; walk from the top.
  Eigen::VectorXd vals = es.eigenvalues().reverse();
  Eigen::MatrixXd vecs = es.eigenvectors().rowwise().reverse();
  const double scale = std::max(1.0, std::abs(vals(0)));

  DirectionSet out;
  out.directions.resize(k, n);
  out.eigenvalues.resize(k);
  int64_t filled = 0;
  int64_t g0 = 0;
  while (filled < k) {
    int64_t g1 = g0 + 1;
    while (g1 < n && vals(g1 - 1) - vals(g1) < tie_tol * scale) ++g1;
    const int64_t gsize = g1 - g0;
    const Eigen::MatrixXd basis = vecs.middleCols(g0, gsize);  // [n, gsize]

    std::vector<Eigen::VectorXd> chosen;
    if (gsize == 1) {
      chosen.push_back(basis.col(0));
    } else {
      for (double thresh : {0.5, 0.1, 1e-3}) {
        for (int64_t j = 0; j < n && static_cast<int64_t>(chosen.size()) < gsize; ++j) {
          Eigen::VectorXd v = basis * basis.row(j).transpose();  // projector applied to e_j
          for (const auto& c : chosen) v -= c.dot(v) * c;
          const double nv = v.norm();
          if (nv > thresh) chosen.push_back(v / nv);
        }
        if (static_cast<int64_t>(chosen.size()) == gsize) break;
      }
    }
    for (size_t c = 0; c < chosen.size() && filled < k; ++c) {
      Eigen::VectorXd v = chosen[c];
      for (int64_t j = 0; j < n; ++j) {
        if (std::abs(v(j)) > 1e-12) {
          if (v(j) < 0) v = -v;
          break;
        }
      }
      out.directions.row(filled) = v.transpose();
      out.eigenvalues(filled) = std::max(0.0, (a * v).squaredNorm());
      ++filled;
    }
    g0 = g1;
  }
  // Recomputed Rayleigh quotients can reorder within numerical noise.
  for (int64_t i = 1; i < k; ++i) out.eigenvalues(i) = std::min(out.eigenvalues(i), out.eigenvalues(i - 1));
  return out;
}

Eigen::MatrixXd direction_matrix(const GanModel& model) {
  torch::Tensor a;
  if (model.cfg.arch == Arch::ProGan) {
    a = model.progan->dense->weight.detach() * model.progan->dense->runtime_scale;
  } else {
    a = model.style->synthesis->concatenated_affine().detach();
  }
  a = a.to(torch::kFloat64).contiguous();
  Eigen::MatrixXd m(a.size(0), a.size(1));
  auto acc = a.accessor<double, 2>();
  for (int64_t i = 0; i < a.size(0); ++i)
    for (int64_t j = 0; j < a.size(1); ++j) m(i, j) = acc[i][j];
  return m;
}

DirectionSet find_model_directions(const GanModel& model, int64_t k) {
  auto d = find_directions(direction_matrix(model), k);
  d.source = model.cfg.arch == Arch::ProGan ? DirectionSource::ProGanFirstLinear : DirectionSource::StyleGanConcat15;
  return d;
}

EditResult edit_code(GanModel& model, const torch::Tensor& original, const torch::Tensor& code,
                     const torch::Tensor& direction, double strength) {
  if (!std::isfinite(strength)) throw ParameterError("edit strength must be finite");
  torch::NoGradGuard ng;
  EditResult r;
  r.code = strength == 0.0 ? code.clone() : code + strength * direction.reshape({1, -1}).to(code.dtype());
  r.reconstruction = model.decode(code, NoiseSpec::pinned());
  r.edited = strength == 0.0 ? r.reconstruction.clone() : model.decode(r.code, NoiseSpec::pinned());
  if (original.sizes() != r.edited.sizes()) throw ShapeError("original volume does not match the generator output");
  r.residual = r.edited - original;
  return r;
}

EditResult edit(GanModel& model, const Volume& x, const torch::Tensor& direction, double strength,
                const InversionConfig& cfg) {
  auto inv = invert(model, x, cfg);
  return edit_code(model, to_tensor(x), inv.code, direction, strength);
}

}  // namespace vgan
