#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "vgan/layers.hpp"
#include "vgan/volume.hpp"

namespace vgan {

inline constexpr int kNumStages = 5;
inline constexpr int kNumStyles = 15;
inline constexpr int64_t kLatentDim = 512;

enum class Arch { ProGan, StyleGan };

std::string to_string(Arch a);
Arch parse_arch(const std::string& s);

// Growth state: stage s in 1..5 emits full_shape / 2^(5-s); fade_alpha = 1
// means the newest block is fully blended in.
struct StageState {
  int stage = kNumStages;
  double fade_alpha = 1.0;

  void validate() const;
};

Shape3 stage_shape(Shape3 full_shape, int stage);

// Generator channels per stage (8c, 8c, 4c, 2c, c); the critic reads the same
// ladder backwards.
int64_t stage_channels(int64_t c, int stage);

struct ModelConfig {
  Arch arch = Arch::ProGan;
  Shape3 full_shape{32, 64, 64};
  int64_t gen_channels = 4;     // c_g
  int64_t critic_channels = 4;  // c_c
  int64_t latent_dim = kLatentDim;

  void validate() const;
  Shape3 base_shape() const { return full_shape.scaled_down(32); }
};

// Progressive-growing generator: dense -> reshape [8c, d/32] -> five
// (upsample, conv, conv) blocks with pixel norm and swish; sigmoid toImage per stage.
struct ProGanGeneratorImpl : torch::nn::Module {
  explicit ProGanGeneratorImpl(const ModelConfig& cfg);

  torch::Tensor forward(const torch::Tensor& z, StageState stage);
  std::vector<std::string> layer_inventory() const;

  ModelConfig cfg;
  EqualizedLinear dense{nullptr};
  torch::nn::ModuleList conv_a, conv_b, to_image;
};
TORCH_MODULE(ProGanGenerator);

// z -> w through six 512-wide dense layers with LReLU.
struct MappingNetworkImpl : torch::nn::Module {
  explicit MappingNetworkImpl(int64_t latent_dim = kLatentDim, int depth = 6);
  torch::Tensor forward(const torch::Tensor& z);

  torch::nn::ModuleList layers;
};
TORCH_MODULE(MappingNetwork);

// One latent per modulated convolution; entries may come from different w's.
using LayerLatents = std::array<torch::Tensor, kNumStyles>;

LayerLatents broadcast_latent(const torch::Tensor& w);
LayerLatents mix_latents(const torch::Tensor& w_source, const torch::Tensor& w_target, int boundary);

// Noise for the 15 injection points. Pinned noise comes from a dedicated
// generator seeded with `seed`; otherwise the global torch generator is used.
struct NoiseSpec {
  std::optional<uint64_t> seed;

  // Fixed noise used wherever outputs must be reproducible (inversion, service).
  static NoiseSpec pinned() { return NoiseSpec{0x5eedULL}; }
};

// Synthesis network: learned constant [8c, d/32], three modulated convs per
// stage (one before the upsample, two after), noise + bias + LReLU after each.
struct StyleSynthesisImpl : torch::nn::Module {
  explicit StyleSynthesisImpl(const ModelConfig& cfg);

  // The 15 post-affine style codes, dims per layer input channels.
  std::vector<torch::Tensor> style_codes(const LayerLatents& w) ;
  torch::Tensor forward(const LayerLatents& w, StageState stage, const NoiseSpec& noise = {});

  // Row-concatenation of the 15 affine weight matrices (runtime-scaled), [sum(in_i), 512].
  torch::Tensor concatenated_affine() const;

  ModelConfig cfg;
  torch::Tensor constant;
  torch::nn::ModuleList convs, noises, to_image;
  std::vector<torch::Tensor> biases;
};
TORCH_MODULE(StyleSynthesis);

struct StyleGeneratorImpl : torch::nn::Module {
  explicit StyleGeneratorImpl(const ModelConfig& cfg);

  torch::Tensor forward(const torch::Tensor& z, StageState stage, const NoiseSpec& noise = {});

  MappingNetwork mapping{nullptr};
  StyleSynthesis synthesis{nullptr};
};
TORCH_MODULE(StyleGenerator);

struct CriticOutput {
  torch::Tensor score_map;    // [B,1,d1/32,d2/32,d3/32], unbounded
  torch::Tensor score;        // [B], mean of the map
  torch::Tensor penultimate;  // activations of the last strided conv, f_{L-1}
};

// PatchGAN-style Wasserstein critic: fromImage conv, one strided conv per
// stage (c, 2c, 4c, 8c, 8c), LReLU, final 1-channel conv.
struct PatchCriticImpl : torch::nn::Module {
  explicit PatchCriticImpl(const ModelConfig& cfg);

  CriticOutput forward(const torch::Tensor& x, StageState stage);
  torch::Tensor score(const torch::Tensor& x, StageState stage) { return forward(x, stage).score; }

  ModelConfig cfg;
  torch::nn::ModuleList from_image, down;
  EqualizedConv3d out{nullptr};
};
TORCH_MODULE(PatchCritic);

// Generator reversed: fromImage, two convs per level then mean-pool, dense to
// 512. No pixel norm. The StyleGAN variant appends two LReLU dense layers.
struct EncoderImpl : torch::nn::Module {
  EncoderImpl(const ModelConfig& cfg, Arch arch);

  torch::Tensor forward(const torch::Tensor& x);
  std::vector<std::string> layer_inventory() const;

  ModelConfig cfg;
  Arch arch;
  EqualizedConv3d from_image{nullptr};
  torch::nn::ModuleList conv_a, conv_b, head;
  EqualizedLinear dense{nullptr};
};
TORCH_MODULE(Encoder);

// D_W: 512 -> 256 -> 128 -> 1 with LReLU and a sigmoid head.
struct LatentDiscriminatorImpl : torch::nn::Module {
  explicit LatentDiscriminatorImpl(int64_t latent_dim = kLatentDim);

  torch::Tensor logits(const torch::Tensor& code);
  torch::Tensor forward(const torch::Tensor& code) { return torch::sigmoid(logits(code)); }

  EqualizedLinear l1{nullptr}, l2{nullptr}, l3{nullptr};
};
TORCH_MODULE(LatentDiscriminator);

// Conversions between Volume and [B,1,D,H,W] float tensors.
torch::Tensor to_tensor(const Volume& v);
torch::Tensor stack_volumes(const std::vector<Volume>& vs);
Volume to_volume(const torch::Tensor& t, float spacing_um = kDefaultSpacingUm);

void check_finite(const torch::Tensor& t, const std::string& what);

}  // namespace vgan
