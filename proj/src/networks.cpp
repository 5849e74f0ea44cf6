#include "vgan/networks.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include "vgan/errors.hpp"

namespace vgan {
namespace {

void check_spatial(const torch::Tensor& x, Shape3 expected, const char* who) {
  if (x.dim() != 5 || x.size(2) != expected.d1 || x.size(3) != expected.d2 || x.size(4) != expected.d3) {
    std::ostringstream os;
    os << who << " expects [B,C," << expected.d1 << "," << expected.d2 << "," << expected.d3
       << "] input, got " << x.sizes();
    throw ShapeError(os.str());
  }
}

torch::Tensor blend(const torch::Tensor& fresh, const torch::Tensor& old, double alpha) {
  return alpha * fresh + (1.0 - alpha) * old;
}

}  // namespace

std::string to_string(Arch a) { return a == Arch::ProGan ? "progan" : "stylegan"; }

Arch parse_arch(const std::string& s) {
  if (s == "progan") return Arch::ProGan;
  if (s == "stylegan") return Arch::StyleGan;
  throw ParameterError("unknown architecture '" + s + "' (expected progan|stylegan)");
}

void StageState::validate() const {
  if (stage < 1 || stage > kNumStages)
    throw ParameterError("stage must lie in 1..5, got " + std::to_string(stage));
  if (!(fade_alpha >= 0.0 && fade_alpha <= 1.0))
    throw ParameterError("fade_alpha must lie in [0,1]");
}

Shape3 stage_shape(Shape3 full, int stage) {
  if (stage < 1 || stage > kNumStages) throw ParameterError("stage must lie in 1..5");
  return full.scaled_down(int64_t{1} << (kNumStages - stage));
}

int64_t stage_channels(int64_t c, int stage) {
  static constexpr int64_t mult[kNumStages + 1] = {8, 8, 8, 4, 2, 1};  // index 0: below stage 1
  if (stage < 0 || stage > kNumStages) throw ParameterError("stage out of range");
  return mult[stage] * c;
}

void ModelConfig::validate() const {
  if (!full_shape.valid() || full_shape.d1 % 32 || full_shape.d2 % 32 || full_shape.d3 % 32)
    throw ParameterError("full shape " + full_shape.str() + " must be divisible by 32");
  if (gen_channels < 1 || critic_channels < 1) throw ParameterError("channel base must be >= 1");
  if (latent_dim < 1) throw ParameterError("latent_dim must be >= 1");
}

// ---------------------------------------------------------------- ProGAN

ProGanGeneratorImpl::ProGanGeneratorImpl(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  const Shape3 base = cfg.base_shape();
  dense = register_module("dense", EqualizedLinear(cfg.latent_dim, stage_channels(cfg.gen_channels, 0) *
                                                                       base.voxels(), 1.0));
  conv_a = register_module("conv_a", torch::nn::ModuleList());
  conv_b = register_module("conv_b", torch::nn::ModuleList());
  to_image = register_module("to_image", torch::nn::ModuleList());
  for (int s = 1; s <= kNumStages; ++s) {
    const int64_t in = stage_channels(cfg.gen_channels, s - 1), out = stage_channels(cfg.gen_channels, s);
    conv_a->push_back(EqualizedConv3d(in, out));
    conv_b->push_back(EqualizedConv3d(out, out));
    to_image->push_back(EqualizedConv3d(out, 1, 3, 1, 1.0));
  }
}

torch::Tensor ProGanGeneratorImpl::forward(const torch::Tensor& z, StageState st) {
  st.validate();
  check_finite(z, "latent code");
  const Shape3 base = cfg.base_shape();
  auto h = dense->forward(z).reshape(
      {z.size(0), stage_channels(cfg.gen_channels, 0), base.d1, base.d2, base.d3});
  torch::Tensor h_prev;
  for (int s = 1; s <= st.stage; ++s) {
    h_prev = h;
    h = upsample2(h);
    h = pixel_norm(swish(conv_a[s - 1]->as<EqualizedConv3d>()->forward(h)));
    h = pixel_norm(swish(conv_b[s - 1]->as<EqualizedConv3d>()->forward(h)));
  }
  auto img = torch::sigmoid(to_image[st.stage - 1]->as<EqualizedConv3d>()->forward(h));
  if (st.stage > 1 && st.fade_alpha < 1.0) {
    auto prev = torch::sigmoid(to_image[st.stage - 2]->as<EqualizedConv3d>()->forward(h_prev));
    img = blend(img, upsample2(prev), st.fade_alpha);
  }
  return img;
}

std::vector<std::string> ProGanGeneratorImpl::layer_inventory() const {
  std::vector<std::string> inv = {"dense", "reshape"};
  for (int s = 1; s <= kNumStages; ++s) {
    for (const char* l : {"upsample", "conv3d", "swish", "pixel_norm", "conv3d", "swish", "pixel_norm"})
      inv.emplace_back(l);
  }
  inv.emplace_back("conv3d");
  inv.emplace_back("sigmoid");
  return inv;
}

// ---------------------------------------------------------------- StyleGAN

MappingNetworkImpl::MappingNetworkImpl(int64_t latent_dim, int depth) {
  layers = register_module("layers", torch::nn::ModuleList());
  for (int i = 0; i < depth; ++i) layers->push_back(EqualizedLinear(latent_dim, latent_dim));
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& z) {
  check_finite(z, "latent code");
  auto h = z;
  for (const auto& layer : *layers) h = lrelu(layer->as<EqualizedLinear>()->forward(h));
  return h;
}

LayerLatents broadcast_latent(const torch::Tensor& w) {
  LayerLatents out;
  out.fill(w);
  return out;
}

LayerLatents mix_latents(const torch::Tensor& w_source, const torch::Tensor& w_target, int boundary) {
  if (boundary < 0 || boundary > kNumStyles)
    throw ParameterError("style-mix boundary must lie in 0..15, got " + std::to_string(boundary));
  LayerLatents out;
  for (int i = 0; i < kNumStyles; ++i) out[i] = i < boundary ? w_source : w_target;
  return out;
}

StyleSynthesisImpl::StyleSynthesisImpl(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  const Shape3 base = cfg.base_shape();
  const int64_t c0 = stage_channels(cfg.gen_channels, 0);
  constant = register_parameter("constant", torch::randn({1, c0, base.d1, base.d2, base.d3}));
  convs = register_module("convs", torch::nn::ModuleList());
  noises = register_module("noises", torch::nn::ModuleList());
  to_image = register_module("to_image", torch::nn::ModuleList());
  for (int s = 1; s <= kNumStages; ++s) {
    const int64_t in = stage_channels(cfg.gen_channels, s - 1), out = stage_channels(cfg.gen_channels, s);
    for (int j = 0; j < 3; ++j) {
      const int idx = 3 * (s - 1) + j;
      const int64_t cin = j == 0 ? in : out;
      convs->push_back(ModulatedConv3d(cfg.latent_dim, cin, out));
      noises->push_back(NoiseInjection());
      biases.push_back(register_parameter("bias" + std::to_string(idx), torch::zeros({1, out, 1, 1, 1})));
    }
    to_image->push_back(EqualizedConv3d(out, 1, 3, 1, 1.0));
  }
}

std::vector<torch::Tensor> StyleSynthesisImpl::style_codes(const LayerLatents& w) {
  std::vector<torch::Tensor> codes;
  for (int i = 0; i < kNumStyles; ++i) codes.push_back(convs[i]->as<ModulatedConv3d>()->style(w[i]));
  return codes;
}

torch::Tensor StyleSynthesisImpl::forward(const LayerLatents& w, StageState st, const NoiseSpec& noise) {
  st.validate();
  for (const auto& wi : w) {
    if (!wi.defined()) throw ParameterError("style generation needs 15 defined layer latents");
    check_finite(wi, "style latent");
  }
  const int64_t batch = w[0].size(0);
  std::optional<at::Generator> gen;
  if (noise.seed) gen = at::make_generator<at::CPUGeneratorImpl>(*noise.seed);

  auto layer = [&](int idx, const torch::Tensor& x) {
    auto conv = convs[idx]->as<ModulatedConv3d>();
    auto y = conv->forward(x, conv->style(w[idx]));
    const std::vector<int64_t> shape = {batch, 1, y.size(2), y.size(3), y.size(4)};
    auto n = gen ? torch::randn(shape, *gen, y.options()) : torch::randn(shape, y.options());
    y = noises[idx]->as<NoiseInjection>()->forward(y, n);
    return lrelu(y + biases[idx]);
  };

  auto x = constant.expand({batch, -1, -1, -1, -1});
  torch::Tensor x_prev;
  for (int s = 1; s <= st.stage; ++s) {
    x_prev = x;
    const int idx = 3 * (s - 1);
    x = layer(idx, x);
    x = upsample2(x);
    x = layer(idx + 1, x);
    x = layer(idx + 2, x);
  }
  auto img = torch::sigmoid(to_image[st.stage - 1]->as<EqualizedConv3d>()->forward(x));
  if (st.stage > 1 && st.fade_alpha < 1.0) {
    auto prev = torch::sigmoid(to_image[st.stage - 2]->as<EqualizedConv3d>()->forward(x_prev));
    img = blend(img, upsample2(prev), st.fade_alpha);
  }
  return img;
}

torch::Tensor StyleSynthesisImpl::concatenated_affine() const {
  std::vector<torch::Tensor> rows;
  for (const auto& m : *convs) {
    const auto& affine = m->as<ModulatedConv3d>()->affine;
    rows.push_back(affine->weight * affine->runtime_scale);
  }
  return torch::cat(rows, 0);
}

StyleGeneratorImpl::StyleGeneratorImpl(const ModelConfig& cfg) {
  mapping = register_module("mapping", MappingNetwork(cfg.latent_dim));
  synthesis = register_module("synthesis", StyleSynthesis(cfg));
}

torch::Tensor StyleGeneratorImpl::forward(const torch::Tensor& z, StageState stage, const NoiseSpec& noise) {
  return synthesis->forward(broadcast_latent(mapping->forward(z)), stage, noise);
}

// ---------------------------------------------------------------- critic

PatchCriticImpl::PatchCriticImpl(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  from_image = register_module("from_image", torch::nn::ModuleList());
  down = register_module("down", torch::nn::ModuleList());
  for (int s = 1; s <= kNumStages; ++s) {
    const int64_t ch = stage_channels(cfg.critic_channels, s);
    from_image->push_back(EqualizedConv3d(1, ch));
    down->push_back(EqualizedConv3d(ch, stage_channels(cfg.critic_channels, s - 1), 3, 2));
  }
  out = register_module("out", EqualizedConv3d(stage_channels(cfg.critic_channels, 0), 1, 3, 1, 1.0));
}

CriticOutput PatchCriticImpl::forward(const torch::Tensor& x, StageState st) {
  st.validate();
  check_spatial(x, stage_shape(cfg.full_shape, st.stage), "critic");
  auto from = [&](int s, const torch::Tensor& v) {
    return lrelu(from_image[s - 1]->as<EqualizedConv3d>()->forward(v));
  };
  auto h = lrelu(down[st.stage - 1]->as<EqualizedConv3d>()->forward(from(st.stage, x)));
  if (st.stage > 1 && st.fade_alpha < 1.0) h = blend(h, from(st.stage - 1, downsample2(x)), st.fade_alpha);
  for (int s = st.stage - 1; s >= 1; --s) h = lrelu(down[s - 1]->as<EqualizedConv3d>()->forward(h));
  auto map = out->forward(h);
  return {map, map.mean({1, 2, 3, 4}), h};
}

// ---------------------------------------------------------------- encoder

EncoderImpl::EncoderImpl(const ModelConfig& c, Arch a) : cfg(c), arch(a) {
  cfg.validate();
  from_image = register_module("from_image", EqualizedConv3d(1, stage_channels(cfg.gen_channels, kNumStages)));
  conv_a = register_module("conv_a", torch::nn::ModuleList());
  conv_b = register_module("conv_b", torch::nn::ModuleList());
  for (int s = kNumStages; s >= 1; --s) {
    const int64_t ch = stage_channels(cfg.gen_channels, s);
    conv_a->push_back(EqualizedConv3d(ch, ch));
    conv_b->push_back(EqualizedConv3d(ch, stage_channels(cfg.gen_channels, s - 1)));
  }
  dense = register_module("dense", EqualizedLinear(stage_channels(cfg.gen_channels, 0) *
                                                       cfg.base_shape().voxels(),
                                                   cfg.latent_dim, 1.0));
  head = register_module("head", torch::nn::ModuleList());
  if (arch == Arch::StyleGan) {
    head->push_back(EqualizedLinear(cfg.latent_dim, cfg.latent_dim));
    head->push_back(EqualizedLinear(cfg.latent_dim, cfg.latent_dim));
  }
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& x) {
  check_spatial(x, cfg.full_shape, "encoder");
  auto h = swish(from_image->forward(x));
  for (size_t i = 0; i < conv_a->size(); ++i) {
    h = swish(conv_a[i]->as<EqualizedConv3d>()->forward(h));
    h = swish(conv_b[i]->as<EqualizedConv3d>()->forward(h));
    h = downsample2(h);
  }
  auto code = dense->forward(h.flatten(1));
  for (const auto& l : *head) code = lrelu(l->as<EqualizedLinear>()->forward(code));
  return code;
}

std::vector<std::string> EncoderImpl::layer_inventory() const {
  std::vector<std::string> inv = {"conv3d", "swish"};
  for (size_t i = 0; i < conv_a->size(); ++i) {
    for (const char* l : {"conv3d", "swish", "conv3d", "swish", "downsample"}) inv.emplace_back(l);
  }
  inv.emplace_back("flatten");
  inv.emplace_back("dense");
  for (size_t i = 0; i < head->size(); ++i) {
    inv.emplace_back("dense");
    inv.emplace_back("lrelu");
  }
  return inv;
}

// ---------------------------------------------------------------- D_W

LatentDiscriminatorImpl::LatentDiscriminatorImpl(int64_t latent_dim) {
  l1 = register_module("l1", EqualizedLinear(latent_dim, 256));
  l2 = register_module("l2", EqualizedLinear(256, 128));
  // Small head gain keeps the untrained output near 0.5 for any init seed.
  l3 = register_module("l3", EqualizedLinear(128, 1, 0.25));
}

torch::Tensor LatentDiscriminatorImpl::logits(const torch::Tensor& code) {
  return l3->forward(lrelu(l2->forward(lrelu(l1->forward(code))))).squeeze(-1);
}

// ---------------------------------------------------------------- helpers

torch::Tensor to_tensor(const Volume& v) {
  const Shape3& s = v.shape();
  return torch::from_blob(const_cast<float*>(v.data().data()), {1, 1, s.d1, s.d2, s.d3}, torch::kFloat32)
      .clone();
}

torch::Tensor stack_volumes(const std::vector<Volume>& vs) {
  if (vs.empty()) throw ParameterError("cannot stack an empty volume list");
  std::vector<torch::Tensor> ts;
  ts.reserve(vs.size());
  for (const auto& v : vs) {
    if (v.shape() != vs.front().shape()) throw ShapeError("volumes in a batch must share one shape");
    ts.push_back(to_tensor(v));
  }
  return torch::cat(ts, 0);
}

Volume to_volume(const torch::Tensor& t, float spacing_um) {
  auto x = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
  while (x.dim() > 3) {
    if (x.size(0) != 1) throw ShapeError("to_volume expects a single volume");
    x = x.squeeze(0);
  }
  if (x.dim() != 3) throw ShapeError("to_volume expects a 3D tensor");
  std::vector<float> data(x.data_ptr<float>(), x.data_ptr<float>() + x.numel());
  return Volume({x.size(0), x.size(1), x.size(2)}, std::move(data), spacing_um);
}

void check_finite(const torch::Tensor& t, const std::string& what) {
  if (!torch::isfinite(t).all().item<bool>()) throw InvariantError(what + " contains non-finite values");
}

}  // namespace vgan
