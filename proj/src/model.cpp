#include "vgan/model.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "vgan/errors.hpp"

namespace vgan {

GanModel GanModel::create(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  torch::manual_seed(seed);
  GanModel m;
  m.cfg = cfg;
  if (cfg.arch == Arch::ProGan) {
    m.progan = ProGanGenerator(cfg);
  } else {
    m.style = StyleGenerator(cfg);
  }
  m.critic = PatchCritic(cfg);
  return m;
}

void GanModel::ensure_inversion_modules(uint64_t seed) {
  torch::manual_seed(seed);
  if (!encoder) encoder = Encoder(cfg, cfg.arch);
  if (cfg.arch == Arch::StyleGan && !latent_disc) latent_disc = LatentDiscriminator(cfg.latent_dim);
}

torch::Tensor GanModel::generate(const torch::Tensor& z, StageState st, const NoiseSpec& noise) {
  if (cfg.arch == Arch::ProGan) return progan->forward(z, st);
  return style->forward(z, st, noise);
}

torch::Tensor GanModel::decode(const torch::Tensor& code, const NoiseSpec& noise) {
  if (cfg.arch == Arch::ProGan) return progan->forward(code, stage);
  return style->synthesis->forward(broadcast_latent(code), stage, noise);
}

torch::Tensor GanModel::decode_layers(const LayerLatents& w, const NoiseSpec& noise) {
  if (cfg.arch != Arch::StyleGan) throw ParameterError("per-layer latents need a StyleGAN model");
  return style->synthesis->forward(w, stage, noise);
}

torch::Tensor GanModel::to_code(const torch::Tensor& z) {
  return cfg.arch == Arch::ProGan ? z : style->mapping->forward(z);
}

std::vector<torch::Tensor> GanModel::generator_parameters() const {
  return cfg.arch == Arch::ProGan ? progan->parameters() : style->parameters();
}

void GanModel::set_train(bool on) {
  if (progan) progan->train(on);
  if (style) style->train(on);
  if (critic) critic->train(on);
  if (encoder) encoder->train(on);
  if (latent_disc) latent_disc->train(on);
}

void GanModel::to(torch::Dtype dtype) {
  if (progan) progan->to(dtype);
  if (style) style->to(dtype);
  if (critic) critic->to(dtype);
  if (encoder) encoder->to(dtype);
  if (latent_disc) latent_disc->to(dtype);
  if (w_bar) w_bar = w_bar->to(dtype);
}

torch::Tensor estimate_w_bar(GanModel& model, int64_t samples, uint64_t seed) {
  if (model.cfg.arch != Arch::StyleGan) throw ParameterError("w_bar only exists for StyleGAN models");
  if (samples < 1) throw ParameterError("w_bar needs at least one sample");
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  auto sum = torch::zeros({model.cfg.latent_dim}, torch::kFloat64);
  constexpr int64_t kChunk = 1000;
  for (int64_t done = 0; done < samples; done += kChunk) {
    const int64_t n = std::min(kChunk, samples - done);
    auto z = torch::randn({n, model.cfg.latent_dim}, gen);
    sum += model.style->mapping->forward(z).to(torch::kFloat64).sum(0);
  }
  return (sum / static_cast<double>(samples)).to(torch::kFloat32);
}

}  // namespace vgan
