#include "vgan/inversion.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "vgan/errors.hpp"

namespace vgan {

namespace {

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ShapeError(std::string(what) + ": shapes differ");
}

NoiseSpec inversion_noise(const GanModel& m) { return m.cfg.arch == Arch::StyleGan ? NoiseSpec::pinned() : NoiseSpec{}; }

class FreezeGuard {
 public:
  explicit FreezeGuard(std::vector<torch::Tensor> params) : params_(std::move(params)) {
    for (auto& p : params_) {
      saved_.push_back(p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FreezeGuard() {
    for (size_t i = 0; i < params_.size(); ++i) params_[i].set_requires_grad(saved_[i]);
  }

 private:
  std::vector<torch::Tensor> params_;
  std::vector<bool> saved_;
};

}  // namespace

void InversionConfig::validate() const {
  if (!(encoder_lr > 0) || !(refine_lr > 0)) throw ParameterError("inversion learning rates must be positive");
  if (!(encoder_beta1 >= 0 && encoder_beta1 < 1) || !(encoder_beta2 > 0 && encoder_beta2 < 1))
    throw ParameterError("encoder Adam betas out of range");
  if (encoder_steps < 0 || encoder_batch < 1) throw ParameterError("encoder steps/batch out of range");
  if (refine_steps < 0) throw ParameterError("refine_steps must be non-negative");
  if (!(style_w_dist > 0) || !(style_w_perc > 0) || !(style_w_latent > 0))
    throw ParameterError("StyleGAN encoder weights must be positive");
}

torch::Tensor loss_dist(const torch::Tensor& x, const torch::Tensor& recon) {
  require_same_shape(x, recon, "loss_dist");
  return 0.5 * (x - recon).pow(2).mean();
}

torch::Tensor loss_perc_features(const torch::Tensor& fx, const torch::Tensor& frecon) {
  require_same_shape(fx, frecon, "loss_perc");
  return 0.5 * (fx - frecon).pow(2).mean();
}

torch::Tensor loss_perc(PatchCritic& critic, const torch::Tensor& x, const torch::Tensor& recon, StageState st) {
  require_same_shape(x, recon, "loss_perc");
  return loss_perc_features(critic->forward(x, st).penultimate, critic->forward(recon, st).penultimate);
}

torch::Tensor loss_latent(const torch::Tensor& code) {
  if (code.dim() != 2) throw ShapeError("loss_latent expects [B,512] codes");
  return code.pow(2).sum(1).mean() / 1024.0;
}

torch::Tensor loss_latent_style_from_prob(const torch::Tensor& d_w_output) {
  return -torch::log(d_w_output).mean();
}

torch::Tensor loss_latent_style(LatentDiscriminator& d_w, const torch::Tensor& code) {
  // log(sigmoid(l)) computed stably.
  return -torch::log_sigmoid(d_w->logits(code)).mean();
}

torch::Tensor encode(GanModel& model, const torch::Tensor& x) {
  if (!model.encoder) throw ParameterError("model has no encoder; run train-encoder first");
  return model.encoder->forward(x);
}

EncoderObjective encoder_objective(GanModel& model, const torch::Tensor& x, const InversionConfig& cfg,
                                   int64_t* d_w_evals) {
  auto code = encode(model, x);
  auto recon = model.decode(code, inversion_noise(model));
  EncoderObjective o;
  o.dist = loss_dist(x, recon);
  o.perc = loss_perc(model.critic, x, recon, model.stage);
  if (model.cfg.arch == Arch::ProGan) {
    o.latent = loss_latent(code);
    o.total = o.dist + o.perc + o.latent;
  } else {
    if (!model.latent_disc) throw ParameterError("StyleGAN inversion needs a latent discriminator");
    o.latent = loss_latent_style(model.latent_disc, code);
    if (d_w_evals) ++*d_w_evals;
    o.total = cfg.style_w_dist * o.dist + cfg.style_w_perc * o.perc + cfg.style_w_latent * o.latent;
  }
  return o;
}

EncoderTrainResult train_encoder(GanModel& model, const std::vector<Volume>& corpus, const InversionConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw ParameterError("encoder corpus is empty");
  model.ensure_inversion_modules(cfg.seed);
  model.stage = StageState{};
  torch::manual_seed(cfg.seed);
  std::mt19937_64 rng(cfg.seed);

  auto data = stack_volumes(corpus);
  if (data.size(2) != model.cfg.full_shape.d1 || data.size(3) != model.cfg.full_shape.d2 ||
      data.size(4) != model.cfg.full_shape.d3)
    throw ShapeError("encoder corpus does not match the model shape " + model.cfg.full_shape.str());

  auto frozen = model.generator_parameters();
  for (auto& p : model.critic->parameters()) frozen.push_back(p);
  FreezeGuard guard(frozen);

  auto opts = torch::optim::AdamOptions(cfg.encoder_lr).betas({cfg.encoder_beta1, cfg.encoder_beta2});
  torch::optim::Adam opt_e(model.encoder->parameters(), opts);
  std::unique_ptr<torch::optim::Adam> opt_d;
  const bool style = model.cfg.arch == Arch::StyleGan;
  if (style) opt_d = std::make_unique<torch::optim::Adam>(model.latent_disc->parameters(), opts);

  model.encoder->train(true);
  EncoderTrainResult res;
  const auto n = static_cast<int64_t>(corpus.size());
  const int64_t batch = std::min(cfg.encoder_batch, n);
  std::uniform_int_distribution<int64_t> pick(0, n - 1);

  for (int64_t step = 0; step < cfg.encoder_steps; ++step) {
    std::vector<int64_t> idx(batch);
    for (auto& i : idx) i = pick(rng);
    auto x = data.index_select(0, torch::tensor(idx, torch::kLong));

    auto obj = encoder_objective(model, x, cfg, &res.d_w_evaluations);
    if (!torch::isfinite(obj.total).item<bool>())
      throw DivergenceError("encoder objective became non-finite at step " + std::to_string(step));
    opt_e.zero_grad();
    obj.total.backward();
    opt_e.step();
    res.objective_trace.push_back(obj.total.item<double>());

    if (style) {
      torch::Tensor real_codes, fake_codes;
      {
        torch::NoGradGuard ng;
        real_codes = model.style->mapping->forward(torch::randn({batch, model.cfg.latent_dim}));
        fake_codes = model.encoder->forward(x);
      }
      auto lr = model.latent_disc->logits(real_codes);
      auto lf = model.latent_disc->logits(fake_codes);
      res.d_w_evaluations += 2;
      auto d_loss = torch::binary_cross_entropy_with_logits(lr, torch::ones_like(lr)) +
                    torch::binary_cross_entropy_with_logits(lf, torch::zeros_like(lf));
      if (!torch::isfinite(d_loss).item<bool>())
        throw DivergenceError("latent discriminator loss became non-finite at step " + std::to_string(step));
      opt_d->zero_grad();
      d_loss.backward();
      opt_d->step();
      res.d_w_loss_trace.push_back(d_loss.item<double>());
    }
  }
  model.encoder->train(false);
  return res;
}

namespace {

struct RefineTerms {
  torch::Tensor objective;
  double dist;
};

// f_hat: critic features of x_hat, fixed over the whole refinement.
RefineTerms refine_terms(GanModel& model, const torch::Tensor& x_hat, const torch::Tensor& f_hat,
                         const torch::Tensor& code) {
  auto recon = model.decode(code, inversion_noise(model));
  auto f_rec = model.critic->forward(recon, model.stage).penultimate;
  auto perc = (f_hat - f_rec).pow(2).mean();
  const double dist = loss_dist(x_hat, recon.detach()).item<double>();
  if (model.cfg.arch == Arch::StyleGan) return {perc, dist};
  return {(x_hat - recon).pow(2).mean() + perc + code.pow(2).sum() / 512.0, dist};
}

torch::Tensor critic_features(GanModel& model, const torch::Tensor& x) {
  torch::NoGradGuard ng;
  return model.critic->forward(x, model.stage).penultimate;
}

}  // namespace

torch::Tensor refine_objective(GanModel& model, const torch::Tensor& x_hat, const torch::Tensor& code) {
  return refine_terms(model, x_hat, critic_features(model, x_hat), code).objective;
}

RefineResult refine(GanModel& model, const torch::Tensor& x_hat, const torch::Tensor& init_code,
                    const InversionConfig& cfg) {
  cfg.validate();
  if (init_code.dim() != 2 || init_code.size(0) != 1 || init_code.size(1) != model.cfg.latent_dim)
    throw ShapeError("refine expects a [1,512] initial code");
  if (x_hat.size(0) != 1) throw ShapeError("refine works on one volume at a time");

  auto frozen = model.generator_parameters();
  for (auto& p : model.critic->parameters()) frozen.push_back(p);
  FreezeGuard guard(frozen);

  const auto f_hat = critic_features(model, x_hat);
  RefineResult r;
  auto code = init_code.detach().clone().requires_grad_(true);
  torch::optim::Adam opt({code}, torch::optim::AdamOptions(cfg.refine_lr).betas({cfg.encoder_beta1, cfg.encoder_beta2}));

  r.code = init_code.detach().clone();
  r.best_objective = std::numeric_limits<double>::infinity();

  for (int64_t step = 0; step <= cfg.refine_steps; ++step) {
    auto [obj, d] = refine_terms(model, x_hat, f_hat, code);
    const double v = obj.item<double>();
    r.objective_trace.push_back(v);
    if (step == 0) {
      r.initial_objective = v;
      r.initial_dist = r.best_dist = d;
    }
    if (!std::isfinite(v)) {
      r.warning = true;
      break;
    }
    if (v < r.best_objective) {
      if (d <= r.initial_dist) {
        r.best_objective = v;
        r.best_step = step;
        r.best_dist = d;
        r.code = code.detach().clone();
      }
    }
    if (step == cfg.refine_steps) break;
    opt.zero_grad();
    obj.backward();
    opt.step();
  }
  if (!std::isfinite(r.best_objective)) r.best_objective = r.initial_objective;
  return r;
}

InversionResult invert(GanModel& model, const Volume& x_hat, const InversionConfig& cfg) {
  model.stage = StageState{};
  auto x = to_tensor(x_hat);
  if (!(x_hat.shape() == model.cfg.full_shape))
    throw ShapeError("volume " + x_hat.shape().str() + " does not match model shape " + model.cfg.full_shape.str());
  InversionResult out;
  {
    torch::NoGradGuard ng;
    out.encoder_code = encode(model, x).detach();
  }
  out.refinement = refine(model, x, out.encoder_code, cfg);
  out.code = out.refinement.code;
  return out;
}

}  // namespace vgan
