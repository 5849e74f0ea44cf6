#include "vgan/training.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "vgan/checkpoint.hpp"
#include "vgan/errors.hpp"

namespace vgan {

namespace {

bool positive(double x) { return x > 0.0 && std::isfinite(x); }

// Average-pool a full-resolution batch down to the given stage.
torch::Tensor to_stage(const torch::Tensor& x, int stage) {
  const int64_t f = int64_t{1} << (kNumStages - stage);
  return f == 1 ? x : torch::avg_pool3d(x, {f, f, f});
}

torch::optim::AdamOptions& adam_opts(torch::optim::OptimizerParamGroup& g) {
  return static_cast<torch::optim::AdamOptions&>(g.options());
}

}  // namespace

void TrainConfig::validate() const {
  if (!(p1 >= 0.0) || !(p2 >= 0.0)) throw ParameterError("penalty weights must be non-negative");
  if (!positive(lr_g) || !positive(lr_c)) throw ParameterError("learning rates must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw ParameterError("Adam betas out of range");
  if (!positive(eps_g) || !positive(eps_c)) throw ParameterError("Adam eps must be positive");
  if (n_critic < 1) throw ParameterError("n_critic must be >= 1");
  if (!positive(grad_clip_norm)) throw ParameterError("grad_clip_norm must be positive");
  if (stage1_samples < 1 || stage_samples < 1) throw ParameterError("stage sample budgets must be positive");
  if (!(fade_fraction >= 0.0 && fade_fraction <= 1.0)) throw ParameterError("fade_fraction must be in [0,1]");
  if (!positive(lr_decay_per_stage)) throw ParameterError("lr_decay_per_stage must be positive");
  for (auto b : batch_per_stage)
    if (b < 1) throw ParameterError("batch sizes must be positive");
  if (!positive(map_lr_mult)) throw ParameterError("map_lr_mult must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ParameterError("val_fraction must be in [0,1)");
  if (steps_per_stage && *steps_per_stage < 1) throw ParameterError("steps_per_stage must be positive");
  if (first_stage < 1 || last_stage > kNumStages || first_stage > last_stage)
    throw ParameterError("stage range must satisfy 1 <= first <= last <= 5");
  if (log_every < 1 || val_every < 1 || checkpoint_every < 0) throw ParameterError("intervals must be positive");
  if (!positive(val_divergence_factor) || val_patience < 1) throw ParameterError("validation watch settings must be positive");
}

TrainConfig TrainConfig::desk_scale() {
  TrainConfig c;
  c.steps_per_stage = 300;
  return c;
}

CriticLossTerms critic_loss(const ScoreFn& f, const torch::Tensor& real, const torch::Tensor& fake,
                            const torch::Tensor& u, const PenaltyWeights& w) {
  if (real.sizes() != fake.sizes()) throw ShapeError("real and fake batches differ in shape");
  const auto b = real.size(0);
  auto uu = u.reshape({b, 1, 1, 1, 1}).to(real.dtype());
  auto fake_d = fake.detach();

  CriticLossTerms t;
  auto f_real = f(real);
  auto f_fake = f(fake_d);
  t.wasserstein = f_fake.mean() - f_real.mean();

  auto x_tilde = (uu * real.detach() + (1 - uu) * fake_d).requires_grad_(true);
  auto f_tilde = f(x_tilde);
  auto grads = torch::autograd::grad({f_tilde.sum()}, {x_tilde}, {}, /*retain_graph=*/true,
                                     /*create_graph=*/true);
  t.grad_norm = grads[0].flatten(1).norm(2, 1);
  t.gradient_penalty = (t.grad_norm - 1).pow(2).mean();
  t.drift = f_real.pow(2).mean();
  t.total = t.wasserstein + w.p1 * t.gradient_penalty + w.p2 * t.drift;
  return t;
}

torch::Tensor generator_loss(const ScoreFn& f, const torch::Tensor& fake) { return -f(fake).mean(); }

void require_finite_loss(const torch::Tensor& loss, const std::string& what, int64_t step) {
  if (!torch::isfinite(loss).all().item<bool>())
    throw DivergenceError(what + " became non-finite at generator step " + std::to_string(step));
}

double fade_alpha_at(int stage, double progress, double fade_fraction) {
  if (stage <= 1 || fade_fraction <= 0.0) return 1.0;
  return std::clamp(progress / fade_fraction, 0.0, 1.0);
}

JsonlTrainSink::JsonlTrainSink(std::filesystem::path root, bool echo) : root_(std::move(root)), echo_(echo) {
  std::filesystem::create_directories(root_);
  log_.open(root_ / "metrics.jsonl", std::ios::app);
  if (!log_) throw IoError("cannot open " + (root_ / "metrics.jsonl").string());
}

void JsonlTrainSink::log(const TrainLogRecord& r) {
  nlohmann::json j{{"step", r.step}, {"stage", r.stage}, {"fade", r.fade}, {"loss_c", r.loss_c},
                   {"loss_g", r.loss_g}, {"lr", r.lr}};
  j["val_loss_c"] = r.val_loss_c ? nlohmann::json(*r.val_loss_c) : nlohmann::json(nullptr);
  log_ << j.dump() << '\n';
  log_.flush();
  if (echo_) std::cerr << j.dump() << '\n';
}

void JsonlTrainSink::checkpoint(const GanModel& model, const std::string& tag) {
  save_checkpoint(model, root_ / ("ckpt_" + tag));
  tags_.push_back(tag);
}

void JsonlTrainSink::warn(const std::string& message) {
  std::cerr << "warning: " << message << '\n';
  nlohmann::json j{{"warning", message}};
  log_ << j.dump() << '\n';
  log_.flush();
}

Trainer::Trainer(GanModel& model, std::vector<Volume> corpus, TrainConfig cfg, TrainSink& sink)
    : model_(model), cfg_(std::move(cfg)), sink_(sink), rng_(cfg_.seed) {
  cfg_.validate();
  if (corpus.empty()) throw ParameterError("training corpus is empty");
  for (const auto& v : corpus)
    if (!(v.shape() == model_.cfg.full_shape))
      throw ShapeError("corpus volume " + v.shape().str() + " does not match model shape " +
                       model_.cfg.full_shape.str());

  std::vector<int64_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng_);
  const auto n_val = static_cast<int64_t>(std::floor(cfg_.val_fraction * static_cast<double>(corpus.size())));
  val_idx_.assign(order.begin(), order.begin() + n_val);
  train_idx_.assign(order.begin() + n_val, order.end());

  int64_t max_batch = 0;
  for (int s = cfg_.first_stage; s <= cfg_.last_stage; ++s) max_batch = std::max(max_batch, cfg_.batch_per_stage[s - 1]);
  if (static_cast<int64_t>(train_idx_.size()) < max_batch)
    throw ParameterError("training split has " + std::to_string(train_idx_.size()) +
                         " volumes, fewer than one batch of " + std::to_string(max_batch));

  corpus_ = stack_volumes(corpus);

  using torch::optim::AdamOptions;
  using torch::optim::OptimizerParamGroup;
  auto g_opts = AdamOptions(cfg_.lr_g).betas({cfg_.beta1, cfg_.beta2}).eps(cfg_.eps_g);
  std::vector<OptimizerParamGroup> g_groups;
  if (model_.cfg.arch == Arch::ProGan) {
    g_groups.emplace_back(model_.progan->parameters(), std::make_unique<AdamOptions>(g_opts));
  } else {
    auto map_opts = g_opts;
    map_opts.lr(cfg_.lr_g * cfg_.map_lr_mult);
    g_groups.emplace_back(model_.style->synthesis->parameters(), std::make_unique<AdamOptions>(g_opts));
    g_groups.emplace_back(model_.style->mapping->parameters(), std::make_unique<AdamOptions>(map_opts));
  }
  opt_g_ = std::make_unique<torch::optim::Adam>(std::move(g_groups), g_opts);
  auto c_opts = AdamOptions(cfg_.lr_c).betas({cfg_.beta1, cfg_.beta2}).eps(cfg_.eps_c);
  opt_c_ = std::make_unique<torch::optim::Adam>(model_.critic->parameters(), c_opts);
}

double Trainer::lr_g_for_stage(int stage) const { return cfg_.lr_g * std::pow(cfg_.lr_decay_per_stage, stage - 1); }
double Trainer::lr_c_for_stage(int stage) const { return cfg_.lr_c * std::pow(cfg_.lr_decay_per_stage, stage - 1); }

void Trainer::set_learning_rates(int stage) {
  const double lg = lr_g_for_stage(stage);
  auto& gg = opt_g_->param_groups();
  adam_opts(gg[0]).lr(lg);
  if (gg.size() > 1) adam_opts(gg[1]).lr(lg * cfg_.map_lr_mult);
  adam_opts(opt_c_->param_groups()[0]).lr(lr_c_for_stage(stage));
  stats_.stage_lr_g[stage - 1] = adam_opts(gg[0]).lr();
  stats_.stage_lr_c[stage - 1] = adam_opts(opt_c_->param_groups()[0]).lr();
}

torch::Tensor Trainer::real_batch(const std::vector<int64_t>& pool, int64_t batch, StageState st) {
  std::uniform_int_distribution<size_t> pick(0, pool.size() - 1);
  std::vector<int64_t> idx(batch);
  for (auto& i : idx) i = pool[pick(rng_)];
  auto x = corpus_.index_select(0, torch::tensor(idx, torch::kLong));
  auto cur = to_stage(x, st.stage);
  if (st.stage > 1 && st.fade_alpha < 1.0) {
    auto prev = upsample2(downsample2(cur));
    cur = st.fade_alpha * cur + (1.0 - st.fade_alpha) * prev;
  }
  return cur;
}

double Trainer::critic_step(StageState st, int64_t batch) {
  auto real = real_batch(train_idx_, batch, st);
  torch::Tensor fake;
  {
    torch::NoGradGuard ng;
    fake = model_.generate(torch::randn({batch, model_.cfg.latent_dim}), st);
  }
  auto u = torch::rand({batch});
  ScoreFn f = [&](const torch::Tensor& x) { return model_.critic->score(x, st); };
  auto terms = critic_loss(f, real, fake, u, {cfg_.p1, cfg_.p2});
  require_finite_loss(terms.total, "critic loss", stats_.generator_steps);
  opt_c_->zero_grad();
  terms.total.backward();
  torch::nn::utils::clip_grad_norm_(model_.critic->parameters(), cfg_.grad_clip_norm);
  opt_c_->step();
  ++stats_.critic_steps;
  stats_.samples_seen += batch;
  return terms.total.item<double>();
}

double Trainer::generator_step(StageState st, int64_t batch) {
  for (auto& p : model_.critic->parameters()) p.set_requires_grad(false);
  auto fake = model_.generate(torch::randn({batch, model_.cfg.latent_dim}), st);
  auto loss = generator_loss([&](const torch::Tensor& x) { return model_.critic->score(x, st); }, fake);
  for (auto& p : model_.critic->parameters()) p.set_requires_grad(true);
  require_finite_loss(loss, "generator loss", stats_.generator_steps);
  opt_g_->zero_grad();
  loss.backward();
  torch::nn::utils::clip_grad_norm_(model_.generator_parameters(), cfg_.grad_clip_norm);
  opt_g_->step();
  ++stats_.generator_steps;
  return loss.item<double>();
}

double Trainer::validation_loss(StageState st, int64_t batch) {
  auto real = real_batch(val_idx_, std::min<int64_t>(batch, static_cast<int64_t>(val_idx_.size())), st);
  torch::Tensor fake;
  {
    torch::NoGradGuard ng;
    fake = model_.generate(torch::randn({real.size(0), model_.cfg.latent_dim}), st);
  }
  auto u = torch::rand({real.size(0)});
  ScoreFn f = [&](const torch::Tensor& x) { return model_.critic->score(x, st); };
  auto terms = critic_loss(f, real, fake, u, {cfg_.p1, cfg_.p2});
  return terms.total.item<double>();
}

void Trainer::watch_validation(double train_loss, double val_loss) {
  const double gap = std::abs(val_loss - train_loss);
  const double scale = std::max(std::abs(train_loss), 1e-3);
  if (gap > cfg_.val_divergence_factor * scale) {
    ++diverging_checks_;
  } else {
    diverging_checks_ = 0;
  }
  if (diverging_checks_ >= cfg_.val_patience) {
    sink_.warn("validation critic loss " + std::to_string(val_loss) + " diverges from training critic loss " +
               std::to_string(train_loss) + " for " + std::to_string(diverging_checks_) + " consecutive checks");
    if (cfg_.early_stop_on_overfit) stats_.early_stopped = true;
    diverging_checks_ = 0;
  }
}

TrainStats Trainer::run() {
  torch::manual_seed(cfg_.seed);
  model_.set_train(true);
  std::optional<std::string> last_checkpoint;

  for (int s = cfg_.first_stage; s <= cfg_.last_stage && !stats_.early_stopped; ++s) {
    set_learning_rates(s);
    const int64_t batch = cfg_.batch_per_stage[s - 1];
    const int64_t budget = s == 1 ? cfg_.stage1_samples : cfg_.stage_samples;
    const int64_t seen_at_start = stats_.samples_seen;
    int64_t stage_steps = 0;

    auto progress = [&]() -> double {
      if (cfg_.steps_per_stage) return static_cast<double>(stage_steps) / static_cast<double>(*cfg_.steps_per_stage);
      return static_cast<double>(stats_.samples_seen - seen_at_start) / static_cast<double>(budget);
    };

    while (progress() < 1.0 && !stats_.early_stopped) {
      StageState st{s, fade_alpha_at(s, progress(), cfg_.fade_fraction)};
      model_.stage = st;
      double loss_g = 0.0, loss_c = 0.0;
      try {
        loss_g = generator_step(st, batch);
        for (int k = 0; k < cfg_.n_critic; ++k) loss_c += critic_step(st, batch);
      } catch (const DivergenceError& e) {
        std::string msg = e.what();
        msg += last_checkpoint ? "; last good checkpoint: " + *last_checkpoint : "; no checkpoint written yet";
        sink_.warn(msg);
        throw DivergenceError(msg);
      }
      loss_c /= cfg_.n_critic;
      ++stage_steps;
      model_.step = stats_.generator_steps;
      stats_.loss_g_trace.push_back(loss_g);
      stats_.loss_c_trace.push_back(loss_c);

      std::optional<double> val;
      if (!val_idx_.empty() && stats_.generator_steps % cfg_.val_every == 0) {
        val = validation_loss(st, batch);
        watch_validation(loss_c, *val);
      }
      if (stats_.generator_steps % cfg_.log_every == 0 || val) {
        sink_.log({stats_.generator_steps, s, st.fade_alpha, loss_c, loss_g, lr_g_for_stage(s), val});
      }
      if (cfg_.checkpoint_every > 0 && stats_.generator_steps % cfg_.checkpoint_every == 0) {
        const auto tag = "step" + std::to_string(stats_.generator_steps);
        sink_.checkpoint(model_, tag);
        last_checkpoint = tag;
      }
    }
    model_.stage = StageState{s, 1.0};
    const auto tag = "stage" + std::to_string(s);
    sink_.checkpoint(model_, tag);
    last_checkpoint = tag;
  }
  model_.set_train(false);
  return stats_;
}

}  // namespace vgan
