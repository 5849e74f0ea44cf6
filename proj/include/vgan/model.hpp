#pragma once

#include <cstdint>
#include <optional>

#include <torch/torch.h>

#include "vgan/networks.hpp"

namespace vgan {

// Everything a trained run owns: the generator of one architecture, the
// critic, and optionally the inversion encoder and latent discriminator.
//
// "Code space" is where inversion, transition and editing happen: z for
// ProGAN, w (post-mapping) for StyleGAN.
struct GanModel {
  ModelConfig cfg;
  ProGanGenerator progan{nullptr};
  StyleGenerator style{nullptr};
  PatchCritic critic{nullptr};
  Encoder encoder{nullptr};
  LatentDiscriminator latent_disc{nullptr};
  StageState stage;
  std::optional<torch::Tensor> w_bar;
  int64_t w_bar_samples = 0;
  int64_t step = 0;

  static GanModel create(const ModelConfig& cfg, uint64_t seed);

  // Adds a fresh encoder (and D_W for StyleGAN) if missing.
  void ensure_inversion_modules(uint64_t seed);

  // Sample path: z ~ N(0, I) -> volume.
  torch::Tensor generate(const torch::Tensor& z, StageState st, const NoiseSpec& noise = {});
  torch::Tensor generate(const torch::Tensor& z, const NoiseSpec& noise = {}) { return generate(z, stage, noise); }

  // Code path: z for ProGAN, w for StyleGAN.
  torch::Tensor decode(const torch::Tensor& code, const NoiseSpec& noise = {});
  torch::Tensor decode_layers(const LayerLatents& w, const NoiseSpec& noise = {});
  torch::Tensor to_code(const torch::Tensor& z);

  std::vector<torch::Tensor> generator_parameters() const;
  void set_train(bool on);
  void to(torch::Dtype dtype);
};

// Monte-Carlo estimate of E[Phi(z)], z ~ N(0, I).
torch::Tensor estimate_w_bar(GanModel& model, int64_t samples = 10000, uint64_t seed = 0);

}  // namespace vgan
