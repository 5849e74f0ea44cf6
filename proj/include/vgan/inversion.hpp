#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "vgan/model.hpp"
#include "vgan/volume.hpp"

namespace vgan {

struct InversionConfig {
  double encoder_lr = 3e-3;
  double encoder_beta1 = 0.5;
  double encoder_beta2 = 0.9;
  int64_t encoder_steps = 200;
  int64_t encoder_batch = 4;
  int64_t refine_steps = 100;
  double refine_lr = 7e-3;
  // StyleGAN encoder weights for dist, perc and the latent-discriminator term.
  double style_w_dist = 5.0;
  double style_w_perc = 1.0;
  double style_w_latent = 0.04;
  uint64_t seed = 0;

  void validate() const;
};

// 0.5 * mean squared voxel error.
torch::Tensor loss_dist(const torch::Tensor& x, const torch::Tensor& recon);

// 0.5 * mean squared error between penultimate critic features.
torch::Tensor loss_perc(PatchCritic& critic, const torch::Tensor& x, const torch::Tensor& recon, StageState st);
torch::Tensor loss_perc_features(const torch::Tensor& fx, const torch::Tensor& frecon);

// sum(code^2) / 1024, averaged over the batch. code: [B,512].
torch::Tensor loss_latent(const torch::Tensor& code);

// -(1/512) sum_r log D_W(code), i.e. -log D_W(code), averaged over the batch.
torch::Tensor loss_latent_style(LatentDiscriminator& d_w, const torch::Tensor& code);
torch::Tensor loss_latent_style_from_prob(const torch::Tensor& d_w_output);

struct EncoderObjective {
  torch::Tensor dist, perc, latent, total;
};

// Encoder risk on one batch. Counts D_W forward passes into *d_w_evals when given.
EncoderObjective encoder_objective(GanModel& model, const torch::Tensor& x, const InversionConfig& cfg,
                                   int64_t* d_w_evals = nullptr);

struct EncoderTrainResult {
  std::vector<double> objective_trace;
  std::vector<double> d_w_loss_trace;
  int64_t d_w_evaluations = 0;
};

// Trains model.encoder (and model.latent_disc for StyleGAN, 1:1 alternation)
// against the frozen generator and critic.
EncoderTrainResult train_encoder(GanModel& model, const std::vector<Volume>& corpus, const InversionConfig& cfg);

// Encoder forward on a single volume: [1,512] code.
torch::Tensor encode(GanModel& model, const torch::Tensor& x);

// Refinement objective of `code` for target x_hat. ProGAN: voxel MSE + feature
// MSE + ||z||^2/512. StyleGAN: feature MSE only.
torch::Tensor refine_objective(GanModel& model, const torch::Tensor& x_hat, const torch::Tensor& code);

struct RefineResult {
  torch::Tensor code;  // [1,512]
  std::vector<double> objective_trace;  // entry 0 is the initial objective
  double initial_objective = 0.0;
  double best_objective = 0.0;
  int64_t best_step = 0;
  double initial_dist = 0.0;
  double best_dist = 0.0;
  bool warning = false;  // non-finite objective encountered
};

// Adam on the code only for refine_steps updates. Returns the best iterate by
// objective among those whose reconstruction error does not exceed the
// encoder's initial guess.
RefineResult refine(GanModel& model, const torch::Tensor& x_hat, const torch::Tensor& init_code,
                    const InversionConfig& cfg);

struct InversionResult {
  torch::Tensor code;
  torch::Tensor encoder_code;
  RefineResult refinement;
};

// encode() followed by refine().
InversionResult invert(GanModel& model, const Volume& x_hat, const InversionConfig& cfg);

}  // namespace vgan
