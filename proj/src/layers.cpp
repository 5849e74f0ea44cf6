#include "vgan/layers.hpp"

namespace vgan {

torch::Tensor swish(const torch::Tensor& x) { return x * torch::sigmoid(x); }

torch::Tensor lrelu(const torch::Tensor& x) { return torch::leaky_relu(x, kLeakySlope); }

torch::Tensor pixel_norm(const torch::Tensor& x) {
  return x * torch::rsqrt(x.pow(2).mean(1, /*keepdim=*/true) + 1e-8);
}

torch::Tensor upsample2(const torch::Tensor& x) {
  const auto s = x.sizes();
  return x.reshape({s[0], s[1], s[2], 1, s[3], 1, s[4], 1})
      .expand({s[0], s[1], s[2], 2, s[3], 2, s[4], 2})
      .reshape({s[0], s[1], s[2] * 2, s[3] * 2, s[4] * 2});
}

torch::Tensor downsample2(const torch::Tensor& x) {
  const auto s = x.sizes();
  return x.reshape({s[0], s[1], s[2] / 2, 2, s[3] / 2, 2, s[4] / 2, 2}).mean({3, 5, 7});
}

EqualizedLinearImpl::EqualizedLinearImpl(int64_t in, int64_t out, double gain, double bias_init)
    : in_features(in), out_features(out), runtime_scale(gain / std::sqrt(static_cast<double>(in))) {
  weight = register_parameter("weight", torch::randn({out, in}));
  bias = register_parameter("bias", torch::full({out}, bias_init));
}

torch::Tensor EqualizedLinearImpl::forward(const torch::Tensor& x) {
  return torch::nn::functional::linear(x, weight * runtime_scale, bias);
}

EqualizedConv3dImpl::EqualizedConv3dImpl(int64_t in, int64_t out, int64_t k, int64_t s, double gain)
    : in_channels(in),
      out_channels(out),
      kernel(k),
      stride(s),
      runtime_scale(gain / std::sqrt(static_cast<double>(in * k * k * k))) {
  weight = register_parameter("weight", torch::randn({out, in, k, k, k}));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor EqualizedConv3dImpl::forward(const torch::Tensor& x) {
  return torch::conv3d(x, weight * runtime_scale, bias, stride, kernel / 2);
}

ModulatedConv3dImpl::ModulatedConv3dImpl(int64_t w_dim, int64_t in, int64_t out, int64_t k, bool demod)
    : in_channels(in),
      out_channels(out),
      kernel(k),
      demodulate(demod),
      runtime_scale(1.0 / std::sqrt(static_cast<double>(in * k * k * k))) {
  weight = register_parameter("weight", torch::randn({out, in, k, k, k}));
  affine = register_module("affine", EqualizedLinear(w_dim, in, 1.0, 1.0));
}

torch::Tensor ModulatedConv3dImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  const int64_t batch = x.size(0);
  auto w = weight.unsqueeze(0) * runtime_scale * style.reshape({batch, 1, in_channels, 1, 1, 1});
  if (demodulate) {
    w = w * torch::rsqrt(w.pow(2).sum({2, 3, 4, 5}, /*keepdim=*/true) + kDemodEps);
  }
  // Grouped convolution applies a different kernel to every batch element.
  const auto grouped = x.reshape({1, batch * in_channels, x.size(2), x.size(3), x.size(4)});
  auto y = torch::conv3d(grouped, w.reshape({batch * out_channels, in_channels, kernel, kernel, kernel}),
                         {}, 1, kernel / 2, 1, batch);
  return y.reshape({batch, out_channels, y.size(2), y.size(3), y.size(4)});
}

NoiseInjectionImpl::NoiseInjectionImpl() {
  strength = register_parameter("strength", torch::zeros({1}));
}

torch::Tensor NoiseInjectionImpl::forward(const torch::Tensor& x, const torch::Tensor& noise) {
  return x + strength * noise;
}

}  // namespace vgan
