#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vgan/model.hpp"
#include "vgan/volume.hpp"

namespace vgan {

struct TrainConfig {
  double p1 = 10.0;    // gradient-penalty weight
  double p2 = 1e-3;    // drift-penalty weight
  double lr_g = 4e-3;
  double lr_c = 4e-3;
  double beta1 = 0.0;
  double beta2 = 0.98;
  double eps_g = 1e-7;
  double eps_c = 5e-5;
  int n_critic = 5;
  double grad_clip_norm = 2.0;
  int64_t stage1_samples = 180000;
  int64_t stage_samples = 360000;  // stages 2-5; the first half fades in
  double fade_fraction = 0.5;
  double lr_decay_per_stage = 0.85;
  std::array<int64_t, kNumStages> batch_per_stage{24, 24, 12, 6, 3};
  double map_lr_mult = 0.02;
  double val_fraction = 0.10;

  // When set, every stage runs this many generator steps instead of a
  // sample budget (desk scale).
  std::optional<int64_t> steps_per_stage;
  int first_stage = 1;
  int last_stage = kNumStages;
  int64_t log_every = 10;
  int64_t val_every = 50;
  int64_t checkpoint_every = 0;  // 0: stage boundaries only
  double val_divergence_factor = 3.0;
  int val_patience = 3;
  bool early_stop_on_overfit = false;
  uint64_t seed = 0;

  void validate() const;

  // Paper-scale defaults with steps_per_stage = 300.
  static TrainConfig desk_scale();
};

struct PenaltyWeights {
  double p1 = 10.0;
  double p2 = 1e-3;
};

struct CriticLossTerms {
  torch::Tensor total;        // scalar, mean over the batch
  torch::Tensor wasserstein;  // mean f(G(z)) - mean f(x)
  torch::Tensor gradient_penalty;
  torch::Tensor drift;
  torch::Tensor grad_norm;  // per-sample ||grad f(x~)||
};

// Per-sample critic: [B,1,D,H,W] -> [B].
using ScoreFn = std::function<torch::Tensor(const torch::Tensor&)>;

// Empirical mean of f(G(z)) - f(x) + p1 (||grad f(x~)|| - 1)^2 + p2 f(x)^2 with
// x~ = u x + (1 - u) G(z). `u` is [B] (or broadcastable) in [0,1].
CriticLossTerms critic_loss(const ScoreFn& f, const torch::Tensor& real, const torch::Tensor& fake,
                            const torch::Tensor& u, const PenaltyWeights& w);

// mean of -f(G(z)).
torch::Tensor generator_loss(const ScoreFn& f, const torch::Tensor& fake);

// Throws DivergenceError if `loss` is not finite.
void require_finite_loss(const torch::Tensor& loss, const std::string& what, int64_t step);

struct TrainLogRecord {
  int64_t step = 0;  // generator steps so far
  int stage = 1;
  double fade = 1.0;
  double loss_c = 0.0;
  double loss_g = 0.0;
  double lr = 0.0;
  std::optional<double> val_loss_c;
};

// Receives logs and checkpoints. The default JSONL sink writes
// metrics.jsonl and checkpoint directories under a root directory.
class TrainSink {
 public:
  virtual ~TrainSink() = default;
  virtual void log(const TrainLogRecord& rec) = 0;
  virtual void checkpoint(const GanModel& model, const std::string& tag) = 0;
  virtual void warn(const std::string& message) = 0;
};

class JsonlTrainSink : public TrainSink {
 public:
  explicit JsonlTrainSink(std::filesystem::path root, bool echo = false);
  void log(const TrainLogRecord& rec) override;
  void checkpoint(const GanModel& model, const std::string& tag) override;
  void warn(const std::string& message) override;

  const std::vector<std::string>& checkpoint_tags() const { return tags_; }
  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
  std::ofstream log_;
  bool echo_;
  std::vector<std::string> tags_;
};

// In-memory sink for tests.
class MemoryTrainSink : public TrainSink {
 public:
  void log(const TrainLogRecord& rec) override { records.push_back(rec); }
  void checkpoint(const GanModel&, const std::string& tag) override { checkpoints.push_back(tag); }
  void warn(const std::string& m) override { warnings.push_back(m); }

  std::vector<TrainLogRecord> records;
  std::vector<std::string> checkpoints;
  std::vector<std::string> warnings;
};

struct TrainStats {
  int64_t generator_steps = 0;
  int64_t critic_steps = 0;
  int64_t samples_seen = 0;  // real volumes shown to the critic
  std::array<double, kNumStages> stage_lr_g{};
  std::array<double, kNumStages> stage_lr_c{};
  std::vector<double> loss_c_trace;
  std::vector<double> loss_g_trace;
  bool early_stopped = false;
};

// Linear fade over the first fade_fraction of a stage; stage 1 is never faded.
double fade_alpha_at(int stage, double progress, double fade_fraction);

// WGAN-GP training of generator and critic through stages first..last.
class Trainer {
 public:
  Trainer(GanModel& model, std::vector<Volume> corpus, TrainConfig cfg, TrainSink& sink);

  TrainStats run();

  // Learning rates in effect for a given stage (initial * decay^(stage-1)).
  double lr_g_for_stage(int stage) const;
  double lr_c_for_stage(int stage) const;

  const std::vector<int64_t>& train_indices() const { return train_idx_; }
  const std::vector<int64_t>& val_indices() const { return val_idx_; }

 private:
  torch::Tensor real_batch(const std::vector<int64_t>& pool, int64_t batch, StageState st);
  double critic_step(StageState st, int64_t batch);
  double generator_step(StageState st, int64_t batch);
  double validation_loss(StageState st, int64_t batch);
  void set_learning_rates(int stage);
  void watch_validation(double train_loss, double val_loss);

  GanModel& model_;
  torch::Tensor corpus_;  // [N,1,D,H,W] at full shape
  TrainConfig cfg_;
  TrainSink& sink_;
  std::vector<int64_t> train_idx_, val_idx_;
  std::mt19937_64 rng_;
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_c_;
  TrainStats stats_;
  int diverging_checks_ = 0;
};

}  // namespace vgan
