#include <cmath>
#include <filesystem>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>
#include <unistd.h>

#include "vgan/checkpoint.hpp"
#include "vgan/errors.hpp"
#include "vgan/model.hpp"

using namespace vgan;
namespace fs = std::filesystem;

namespace {

ModelConfig desk_cfg(Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.full_shape = {32, 64, 64};
  c.gen_channels = 4;
  c.critic_channels = 4;
  return c;
}

double max_abs(const torch::Tensor& a, const torch::Tensor& b) {
  return (a - b).abs().max().item<double>();
}

class ArchTest : public ::testing::TestWithParam<Arch> {};

}  // namespace

TEST(Stages, ChannelScheduleAndShapes) {
  const std::vector<int64_t> want{32, 32, 16, 8, 4};
  for (int s = 1; s <= 5; ++s) EXPECT_EQ(stage_channels(4, s), want[s - 1]);
  EXPECT_EQ(stage_shape({32, 288, 224}, 1), (Shape3{2, 18, 14}));
  EXPECT_EQ(stage_shape({32, 288, 224}, 5), (Shape3{32, 288, 224}));
  EXPECT_THROW(stage_shape({32, 64, 64}, 0), ParameterError);
  EXPECT_THROW((StageState{6, 1.0}).validate(), ParameterError);
  EXPECT_THROW((StageState{2, 1.5}).validate(), ParameterError);
  ModelConfig bad;
  bad.full_shape = {32, 60, 64};
  EXPECT_THROW(bad.validate(), ParameterError);
}

TEST_P(ArchTest, ShapeLadderAndCriticContract) {
  auto m = GanModel::create(desk_cfg(GetParam()), 1);
  torch::NoGradGuard ng;
  const auto z = torch::randn({2, kLatentDim});
  for (int s = 1; s <= 5; ++s) {
    const StageState st{s, 1.0};
    const auto x = m.generate(z, st);
    const Shape3 sh = stage_shape(m.cfg.full_shape, s);
    EXPECT_EQ(x.sizes(), (std::vector<int64_t>{2, 1, sh.d1, sh.d2, sh.d3}));
    EXPECT_GT(x.min().item<float>(), 0.0f);
    EXPECT_LT(x.max().item<float>(), 1.0f);
    const auto out = m.critic->forward(x, st);
    EXPECT_EQ(out.score.sizes(), (std::vector<int64_t>{2}));
    EXPECT_TRUE(torch::isfinite(out.score).all().item<bool>());
    for (int other = 1; other <= 5; ++other) {
      if (other == s) continue;
      const Shape3 o = stage_shape(m.cfg.full_shape, other);
      EXPECT_THROW(m.critic->forward(torch::rand({1, 1, o.d1, o.d2, o.d3}), st), ShapeError);
    }
  }
}

TEST_P(ArchTest, FadeZeroEqualsUpsampledPreviousStage) {
  auto m = GanModel::create(desk_cfg(GetParam()), 2);
  torch::NoGradGuard ng;
  const auto z = torch::randn({2, kLatentDim});
  const auto pin = NoiseSpec::pinned();
  for (int s = 2; s <= 5; ++s) {
    const auto faded = m.generate(z, {s, 0.0}, pin);
    const auto prev = m.generate(z, {s - 1, 1.0}, pin);
    EXPECT_LE(max_abs(faded, upsample2(prev)), 1e-5) << "stage " << s;
  }
}

TEST_P(ArchTest, OutputContinuousInFadeAlpha) {
  auto m = GanModel::create(desk_cfg(GetParam()), 3);
  torch::NoGradGuard ng;
  const auto z = torch::randn({1, kLatentDim});
  const auto pin = NoiseSpec::pinned();
  const auto a = m.generate(z, {3, 0.5}, pin);
  const auto b = m.generate(z, {3, 0.5 + 1e-6}, pin);
  EXPECT_LE(max_abs(a, b), 1e-5);
  // The blend is affine in alpha.
  const auto lo = m.generate(z, {3, 0.0}, pin), hi = m.generate(z, {3, 1.0}, pin);
  EXPECT_LE(max_abs(a, 0.5 * lo + 0.5 * hi), 1e-5);
}

TEST_P(ArchTest, CheckpointRoundTrip) {
  auto m = GanModel::create(desk_cfg(GetParam()), 4);
  m.ensure_inversion_modules(5);
  m.stage = {4, 0.25};
  m.step = 77;
  if (GetParam() == Arch::StyleGan) {
    m.w_bar = estimate_w_bar(m, 100, 1);
    m.w_bar_samples = 100;
  }
  const auto dir = fs::temp_directory_path() / ("vgan_ckpt_" + std::to_string(::getpid()) + "_" +
                                                to_string(GetParam()));
  fs::remove_all(dir);
  save_checkpoint(m, dir);
  ASSERT_TRUE(is_checkpoint_dir(dir));
  auto r = load_checkpoint(dir);
  EXPECT_EQ(r.cfg.arch, m.cfg.arch);
  EXPECT_EQ(r.cfg.full_shape, m.cfg.full_shape);
  EXPECT_EQ(r.stage.stage, 4);
  EXPECT_DOUBLE_EQ(r.stage.fade_alpha, 0.25);
  EXPECT_EQ(r.step, 77);
  ASSERT_TRUE(r.encoder);
  torch::NoGradGuard ng;
  const auto z = torch::randn({1, kLatentDim});
  const auto pin = NoiseSpec::pinned();
  EXPECT_EQ(max_abs(m.generate(z, pin), r.generate(z, pin)), 0.0);
  const auto x = m.generate(z, {5, 1.0}, pin);
  EXPECT_EQ(max_abs(m.critic->score(x, {5, 1.0}), r.critic->score(x, {5, 1.0})), 0.0);
  EXPECT_EQ(max_abs(m.encoder->forward(x), r.encoder->forward(x)), 0.0);
  if (GetParam() == Arch::StyleGan) {
    ASSERT_TRUE(r.w_bar.has_value());
    EXPECT_EQ(r.w_bar_samples, 100);
    EXPECT_EQ(max_abs(*m.w_bar, *r.w_bar), 0.0);
  }
  fs::remove_all(dir);
}

TEST_P(ArchTest, EncoderOutputsDeterministic512Vector) {
  auto m = GanModel::create(desk_cfg(GetParam()), 6);
  m.ensure_inversion_modules(7);
  torch::NoGradGuard ng;
  const auto x = torch::rand({2, 1, 32, 64, 64});
  const auto a = m.encoder->forward(x), b = m.encoder->forward(x);
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{2, 512}));
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_THROW(m.encoder->forward(torch::rand({1, 1, 16, 32, 32})), ShapeError);
}

INSTANTIATE_TEST_SUITE_P(BothArchitectures, ArchTest, ::testing::Values(Arch::ProGan, Arch::StyleGan),
                         [](const auto& info) { return to_string(info.param); });

TEST(Generator, RejectsNonFiniteLatent) {
  auto m = GanModel::create(desk_cfg(Arch::ProGan), 1);
  auto z = torch::zeros({1, kLatentDim});
  z[0][3] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(m.generate(z, {1, 1.0}), InvariantError);
  EXPECT_THROW(m.generate(torch::zeros({1, kLatentDim}), {0, 1.0}), ParameterError);
}

TEST(Generator, ProGanInventoryHasPixelNormEncoderDoesNot) {
  auto m = GanModel::create(desk_cfg(Arch::ProGan), 1);
  m.ensure_inversion_modules(1);
  const auto g = m.progan->layer_inventory();
  EXPECT_NE(std::find(g.begin(), g.end(), "pixel_norm"), g.end());
  const auto e = m.encoder->layer_inventory();
  EXPECT_EQ(std::find(e.begin(), e.end(), "pixel_norm"), e.end());
  EXPECT_EQ(std::count(e.begin(), e.end(), "lrelu"), 0);

  auto s = GanModel::create(desk_cfg(Arch::StyleGan), 1);
  s.ensure_inversion_modules(1);
  const auto se = s.encoder->layer_inventory();
  EXPECT_EQ(std::find(se.begin(), se.end(), "pixel_norm"), se.end());
  EXPECT_EQ(std::count(se.begin(), se.end(), "lrelu"), 2);
}

TEST(Layers, StandardNormalInitialization) {
  torch::manual_seed(0);
  EqualizedLinear l(512, 512);
  EXPECT_NEAR(l->weight.mean().item<double>(), 0.0, 0.01);
  EXPECT_NEAR(l->weight.std().item<double>(), 1.0, 0.01);
  EXPECT_DOUBLE_EQ(l->runtime_scale, std::sqrt(2.0) / std::sqrt(512.0));
}

TEST(Layers, EqualizedLrEquivalence) {
  torch::manual_seed(1);
  EqualizedLinear lin(16, 8);
  EqualizedConv3d conv(3, 5);
  lin->to(torch::kFloat64);
  conv->to(torch::kFloat64);
  const auto x = torch::randn({4, 16}, torch::kFloat64);
  const auto v = torch::randn({2, 3, 4, 5, 6}, torch::kFloat64);
  torch::NoGradGuard ng;
  const auto y0 = lin->forward(x), c0 = conv->forward(v);
  for (double k : {0.25, 3.0, 17.0}) {
    EqualizedLinear l2(16, 8);
    l2->to(torch::kFloat64);
    l2->weight.copy_(lin->weight * k);
    l2->bias.copy_(lin->bias);
    l2->runtime_scale = lin->runtime_scale / k;
    EXPECT_LE(max_abs(l2->forward(x), y0), 1e-6);
    EqualizedConv3d c2(3, 5);
    c2->to(torch::kFloat64);
    c2->weight.copy_(conv->weight * k);
    c2->bias.copy_(conv->bias);
    c2->runtime_scale = conv->runtime_scale / k;
    EXPECT_LE(max_abs(c2->forward(v), c0), 1e-6);
  }
}

TEST(Layers, ResamplingOperators) {
  const auto x = torch::arange(8, torch::kFloat32).reshape({1, 1, 2, 2, 2});
  const auto u = upsample2(x);
  ASSERT_EQ(u.sizes(), (std::vector<int64_t>{1, 1, 4, 4, 4}));
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      for (int k = 0; k < 4; ++k)
        EXPECT_EQ(u[0][0][i][j][k].item<float>(), x[0][0][i / 2][j / 2][k / 2].item<float>());
  EXPECT_TRUE(torch::equal(downsample2(u), x));
  EXPECT_NEAR(downsample2(x).item<float>(), 3.5f, 1e-6);
}

TEST(Layers, ModulatedConvScalarOracle) {
  ModulatedConv3d conv(4, 2, 1, 3, true);
  torch::NoGradGuard ng;
  conv->weight.zero_();
  conv->weight[0][0][1][1][1] = 1.0f;  // centre taps
  conv->weight[0][1][1][1][1] = 2.0f;
  conv->weight[0][0][0][1][2] = 3.0f;  // off-centre tap: only enters the demodulation norm
  conv->affine->weight.zero_();
  conv->affine->bias.copy_(torch::tensor({0.5f, 2.0f}));
  const auto style = conv->style(torch::randn({1, 4}));
  const auto x = torch::tensor({0.7f, -1.3f}).reshape({1, 2, 1, 1, 1});
  const double y = conv->forward(x, style).item<double>();

  const double sc = 1.0 / std::sqrt(2.0 * 27.0);
  const double w0 = sc * 1.0 * 0.5, w1 = sc * 2.0 * 2.0, w2 = sc * 3.0 * 0.5;
  const double norm = std::sqrt(w0 * w0 + w1 * w1 + w2 * w2 + 1e-8);
  EXPECT_NEAR(y, (w0 * 0.7 + w1 * -1.3) / norm, 1e-6);

  ModulatedConv3d plain(4, 2, 1, 3, false);
  plain->weight.copy_(conv->weight);
  plain->affine->weight.zero_();
  plain->affine->bias.copy_(conv->affine->bias);
  EXPECT_NEAR(plain->forward(x, style).item<double>(), w0 * 0.7 + w1 * -1.3, 1e-6);
}

TEST(Layers, ModulatedConvBatchesUseOwnStyles) {
  torch::manual_seed(4);
  ModulatedConv3d conv(8, 3, 2);
  torch::NoGradGuard ng;
  const auto x = torch::randn({2, 3, 4, 4, 4});
  const auto s = conv->style(torch::randn({2, 8}));
  const auto both = conv->forward(x, s);
  for (int b = 0; b < 2; ++b) {
    const auto one = conv->forward(x.slice(0, b, b + 1), s.slice(0, b, b + 1));
    EXPECT_LE(max_abs(one, both.slice(0, b, b + 1)), 1e-5);
  }
}

TEST(Mapping, MatchesDenseMatrixOracle) {
  torch::manual_seed(9);
  MappingNetwork map(16, 6);
  for (auto& p : map->parameters()) {
    torch::NoGradGuard ng;
    if (p.dim() == 1) p.uniform_(-0.5, 0.5);
  }
  const auto z = torch::randn({3, 16});
  const auto w = map->forward(z);

  for (int64_t b = 0; b < 3; ++b) {
    Eigen::VectorXd h(16);
    for (int i = 0; i < 16; ++i) h[i] = z[b][i].item<double>();
    for (const auto& m : *map->layers) {
      auto l = m->as<EqualizedLinear>();
      Eigen::MatrixXd W(16, 16);
      Eigen::VectorXd bias(16);
      for (int r = 0; r < 16; ++r) {
        bias[r] = l->bias[r].item<double>();
        for (int c = 0; c < 16; ++c) W(r, c) = l->weight[r][c].item<double>() * l->runtime_scale;
      }
      h = W * h + bias;
      h = h.unaryExpr([](double v) { return v > 0 ? v : 0.2 * v; });
    }
    for (int i = 0; i < 16; ++i) EXPECT_NEAR(w[b][i].item<double>(), h[i], 1e-4 * (1 + std::abs(h[i])));
  }
}

TEST(Mapping, IdentityLayersComposeLeakyRelu) {
  MappingNetwork map(8, 6);
  torch::NoGradGuard ng;
  for (const auto& m : *map->layers) {
    auto l = m->as<EqualizedLinear>();
    l->weight.copy_(torch::eye(8) / l->runtime_scale);
    l->bias.zero_();
  }
  const auto z = torch::randn({4, 8});
  const auto want = torch::where(z > 0, z, z * std::pow(0.2, 6));
  EXPECT_LE(max_abs(map->forward(z), want), 1e-6);
  EXPECT_TRUE(torch::equal(map->forward(z), map->forward(z)));
}

TEST(StyleSynthesis, StyleCodesAndNoise) {
  auto m = GanModel::create(desk_cfg(Arch::StyleGan), 11);
  torch::NoGradGuard ng;
  const auto w = m.to_code(torch::randn({1, kLatentDim}));
  const auto codes = m.style->synthesis->style_codes(broadcast_latent(w));
  ASSERT_EQ(codes.size(), 15u);
  for (int i = 0; i < 15; ++i)
    EXPECT_EQ(codes[i].size(1), m.style->synthesis->convs[i]->as<ModulatedConv3d>()->in_channels);

  // Noise strengths start at zero, so unpinned calls agree.
  EXPECT_TRUE(torch::equal(m.decode(w), m.decode(w)));
  for (auto& n : *m.style->synthesis->noises) n->as<NoiseInjection>()->strength.fill_(0.5);
  EXPECT_GT(max_abs(m.decode(w), m.decode(w)), 0.0);
  EXPECT_TRUE(torch::equal(m.decode(w, NoiseSpec::pinned()), m.decode(w, NoiseSpec::pinned())));

  LayerLatents partial = broadcast_latent(w);
  partial[7] = torch::Tensor();
  EXPECT_THROW(m.decode_layers(partial), ParameterError);
  EXPECT_THROW(mix_latents(w, w, 16), ParameterError);
}

TEST(Critic, DoublingOutputLayerDoublesScores) {
  auto m = GanModel::create(desk_cfg(Arch::ProGan), 12);
  torch::NoGradGuard ng;
  const auto x = torch::rand({3, 1, 32, 64, 64});
  const auto a = m.critic->forward(x, {5, 1.0});
  m.critic->out->weight.mul_(2.0);
  m.critic->out->bias.mul_(2.0);
  const auto b = m.critic->forward(x, {5, 1.0});
  EXPECT_LE(max_abs(b.score_map, 2.0 * a.score_map), 1e-5);
  EXPECT_LE(max_abs(b.score, 2.0 * a.score), 1e-5);
  EXPECT_EQ(a.score_map.sizes(), (std::vector<int64_t>{3, 1, 1, 2, 2}));
}

TEST(Critic, InputGradientMatchesFiniteDifferences) {
  ModelConfig cfg = desk_cfg(Arch::ProGan);
  cfg.full_shape = {32, 288, 224};
  torch::manual_seed(13);
  PatchCritic critic(cfg);
  critic->to(torch::kFloat64);
  const StageState st{1, 1.0};
  auto x = torch::rand({1, 1, 2, 18, 14}, torch::kFloat64).requires_grad_(true);
  critic->score(x, st).sum().backward();
  const auto g = x.grad().clone();

  torch::NoGradGuard ng;
  auto fd = torch::zeros_like(g);
  const double h = 1e-5;
  auto flat = x.detach().clone().view(-1);
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double x0 = flat[i].item<double>();
    flat[i] = x0 + h;
    const double up = critic->score(flat.view_as(x), st).item<double>();
    flat[i] = x0 - h;
    const double dn = critic->score(flat.view_as(x), st).item<double>();
    flat[i] = x0;
    fd.view(-1)[i] = (up - dn) / (2 * h);
  }
  EXPECT_LE((g - fd).norm().item<double>() / fd.norm().item<double>(), 1e-6);

  // Same check in float32 at the looser tolerance.
  critic->to(torch::kFloat32);
  auto x32 = x.detach().to(torch::kFloat32).requires_grad_(true);
  {
    torch::AutoGradMode on(true);
    critic->score(x32, st).sum().backward();
  }
  EXPECT_LE((x32.grad().to(torch::kFloat64) - fd).norm().item<double>() / fd.norm().item<double>(), 1e-3);
}

TEST(Generator, LatentGradientMatchesFiniteDifferences) {
  ModelConfig cfg = desk_cfg(Arch::ProGan);
  torch::manual_seed(14);
  ProGanGenerator g(cfg);
  g->to(torch::kFloat64);
  const StageState st{2, 0.3};
  auto z = torch::randn({1, kLatentDim}, torch::kFloat64).requires_grad_(true);
  const auto probe = torch::randn({1, 1, 4, 8, 8}, torch::kFloat64);
  (g->forward(z, st) * probe).sum().backward();
  const auto grad = z.grad().clone();
  torch::NoGradGuard ng;
  const double h = 1e-5;
  for (int64_t i : {0, 17, 255, 511}) {
    auto zp = z.detach().clone(), zm = z.detach().clone();
    zp[0][i] += h;
    zm[0][i] -= h;
    const double fd = ((g->forward(zp, st) - g->forward(zm, st)) * probe).sum().item<double>() / (2 * h);
    EXPECT_NEAR(grad[0][i].item<double>(), fd, 1e-6 * std::max(1.0, std::abs(fd))) << i;
  }
}

TEST(LatentDisc, OutputsInsideUnitIntervalAndBalancedAtInit) {
  torch::manual_seed(15);
  LatentDiscriminator d;
  torch::NoGradGuard ng;
  const auto p = d->forward(torch::randn({1000, kLatentDim}));
  EXPECT_GT(p.min().item<double>(), 0.0);
  EXPECT_LT(p.max().item<double>(), 1.0);
  const double mean = p.mean().item<double>();
  EXPECT_GE(mean, 0.4);
  EXPECT_LE(mean, 0.6);
  const auto extreme = d->forward(torch::full({1, kLatentDim}, 30.0));
  EXPECT_TRUE(torch::isfinite(extreme).all().item<bool>());
}

TEST(LatentDisc, BalancedAcrossInitSeeds) {
  torch::NoGradGuard ng;
  int in_range = 0;
  for (uint64_t seed = 100; seed < 120; ++seed) {
    torch::manual_seed(seed);
    LatentDiscriminator d;
    const double mean = d->forward(torch::randn({1000, kLatentDim})).mean().item<double>();
    in_range += mean >= 0.4 && mean <= 0.6;
  }
  EXPECT_GE(in_range, 18);
}

TEST(LatentDisc, SeparatesShiftedClusters) {
  torch::manual_seed(16);
  LatentDiscriminator d;
  torch::optim::Adam opt(d->parameters(), torch::optim::AdamOptions(1e-3));
  for (int it = 0; it < 200; ++it) {
    const auto real = torch::randn({32, kLatentDim}) + 5.0, fake = torch::randn({32, kLatentDim}) - 5.0;
    const auto logits = torch::cat({d->logits(real), d->logits(fake)});
    const auto target = torch::cat({torch::ones({32}), torch::zeros({32})});
    auto loss = torch::binary_cross_entropy_with_logits(logits, target);
    opt.zero_grad();
    loss.backward();
    opt.step();
  }
  torch::NoGradGuard ng;
  const auto pr = d->forward(torch::randn({200, kLatentDim}) + 5.0);
  const auto pf = d->forward(torch::randn({200, kLatentDim}) - 5.0);
  // Brute-force AUC: fraction of (real, fake) pairs ranked correctly.
  const auto a = pr.accessor<float, 1>(), b = pf.accessor<float, 1>();
  double wins = 0;
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 200; ++j) wins += a[i] > b[j] ? 1.0 : (a[i] == b[j] ? 0.5 : 0.0);
  EXPECT_GE(wins / (200.0 * 200.0), 0.99);
}
