#pragma once

#include <optional>

#include <torch/torch.h>

namespace vgan {

inline constexpr double kLeakySlope = 0.2;
inline constexpr double kDemodEps = 1e-8;

torch::Tensor swish(const torch::Tensor& x);
torch::Tensor lrelu(const torch::Tensor& x);
torch::Tensor pixel_norm(const torch::Tensor& x);

// Nearest-neighbour x2 upsampling and 2x2x2 mean pooling of [B,C,D,H,W],
// written with views so they stay twice differentiable.
torch::Tensor upsample2(const torch::Tensor& x);
torch::Tensor downsample2(const torch::Tensor& x);

// Dense layer with equalized learning rate: stored weights ~ N(0,1), the
// forward pass multiplies by runtime_scale = gain / sqrt(fan_in).
struct EqualizedLinearImpl : torch::nn::Module {
  EqualizedLinearImpl(int64_t in_features, int64_t out_features, double gain = std::sqrt(2.0),
                      double bias_init = 0.0);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_features, out_features;
  double runtime_scale;
  torch::Tensor weight, bias;
};
TORCH_MODULE(EqualizedLinear);

// 3x3x3 (or kxkxk) 3D convolution with equalized learning rate and "same"
// padding for stride 1.
struct EqualizedConv3dImpl : torch::nn::Module {
  EqualizedConv3dImpl(int64_t in_channels, int64_t out_channels, int64_t kernel = 3, int64_t stride = 1,
                      double gain = std::sqrt(2.0));
  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_channels, out_channels, kernel, stride;
  double runtime_scale;
  torch::Tensor weight, bias;
};
TORCH_MODULE(EqualizedConv3d);

// Style-modulated 3D convolution with weight demodulation:
//   w'_{o,i,k} = scale * w_{o,i,k} * s_i
//   w''_{o,i,k} = w'_{o,i,k} / sqrt(sum_{i,k} w'^2 + eps)
// The style s comes from an affine map of the layer's latent w (bias init 1).
struct ModulatedConv3dImpl : torch::nn::Module {
  ModulatedConv3dImpl(int64_t w_dim, int64_t in_channels, int64_t out_channels, int64_t kernel = 3,
                      bool demodulate = true);

  torch::Tensor style(const torch::Tensor& w) { return affine->forward(w); }
  // x: [B,in,D,H,W], style: [B,in] (already passed through the affine map).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

  int64_t in_channels, out_channels, kernel;
  bool demodulate;
  double runtime_scale;
  torch::Tensor weight;
  EqualizedLinear affine{nullptr};
};
TORCH_MODULE(ModulatedConv3d);

// Adds a per-voxel noise map scaled by one learnable scalar.
struct NoiseInjectionImpl : torch::nn::Module {
  NoiseInjectionImpl();
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& noise);

  torch::Tensor strength;
};
TORCH_MODULE(NoiseInjection);

}  // namespace vgan
