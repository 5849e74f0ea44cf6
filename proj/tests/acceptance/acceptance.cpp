// Acceptance runner: one PASS/FAIL line per criterion.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "vgan/checkpoint.hpp"
#include "vgan/errors.hpp"
#include "vgan/feature_extractor.hpp"
#include "vgan/inversion.hpp"
#include "vgan/latent_tools.hpp"
#include "vgan/layers.hpp"
#include "vgan/metrics.hpp"
#include "vgan/phantom.hpp"
#include "vgan/preprocess.hpp"
#include "vgan/training.hpp"

using namespace vgan;
namespace fs = std::filesystem;

namespace {

struct Options {
  fs::path work_dir;
  std::string desk_arch = "progan";
  int64_t desk_steps = 300;
  double desk_lr = 2e-3;
  uint64_t seed = 0;
};

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

ModelConfig model_cfg(Arch arch, Shape3 shape = {32, 64, 64}, int64_t c = 4) {
  ModelConfig m;
  m.arch = arch;
  m.full_shape = shape;
  m.gen_channels = c;
  m.critic_channels = c;
  return m;
}

double max_abs(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

// ---------------------------------------------------------------- networks

Outcome shape_ladder(const Options&) {
  Timer t;
  std::ostringstream why;
  bool ok = true;
  for (Arch arch : {Arch::ProGan, Arch::StyleGan}) {
    auto m = GanModel::create(model_cfg(arch), 1);
    m.set_train(false);
    torch::NoGradGuard ng;
    const auto z = torch::randn({2, 512});
    for (int s = 1; s <= kNumStages; ++s) {
      const auto want = stage_shape(m.cfg.full_shape, s);
      const auto x = m.generate(z, StageState{s, 1.0});
      if (x.sizes() != torch::IntArrayRef({2, 1, want.d1, want.d2, want.d3})) {
        ok = false;
        why << to_string(arch) << " stage " << s << " emitted " << x.sizes() << "; ";
      }
      for (int other = 1; other <= kNumStages; ++other) {
        const auto sh = stage_shape(m.cfg.full_shape, other);
        bool accepted = true;
        try {
          m.critic->forward(torch::rand({1, 1, sh.d1, sh.d2, sh.d3}), StageState{s, 1.0});
        } catch (const ShapeError&) {
          accepted = false;
        }
        if (accepted != (other == s)) {
          ok = false;
          why << to_string(arch) << " critic at stage " << s << (accepted ? " accepted " : " rejected ") << sh.str()
              << "; ";
        }
      }
    }
  }
  const double secs = t.seconds();
  if (secs >= 10.0) ok = false;
  why << "both archs, 5 stages, runtime " << fmt(secs) << " s";
  return {ok, why.str()};
}

Outcome fade_continuity(const Options&) {
  Timer t;
  double worst = 0.0;
  for (Arch arch : {Arch::ProGan, Arch::StyleGan}) {
    auto m = GanModel::create(model_cfg(arch), 2);
    m.set_train(false);
    torch::NoGradGuard ng;
    const auto z = torch::randn({2, 512});
    for (int s = 2; s <= kNumStages; ++s) {
      const auto faded = m.generate(z, StageState{s, 0.0}, NoiseSpec::pinned());
      const auto prev = m.generate(z, StageState{s - 1, 1.0}, NoiseSpec::pinned());
      worst = std::max(worst, max_abs(faded, upsample2(prev)));
    }
  }
  const double secs = t.seconds();
  return {worst <= 1e-5 && secs < 10.0,
          "max |G_s(alpha=0) - up(G_{s-1})| = " + fmt(worst) + " over stages 2-5, both archs, runtime " + fmt(secs) +
              " s"};
}

// ---------------------------------------------------------------- losses

Outcome loss_oracle(const Options&) {
  ScoreFn mean_critic = [](const torch::Tensor& x) { return x.flatten(1).mean(1); };
  const auto real = torch::tensor({0.2, 0.4, 0.6, 0.8}, torch::kFloat64).reshape({1, 1, 1, 2, 2});
  const auto fake = torch::tensor({0.1, 0.1, 0.3, 0.5}, torch::kFloat64).reshape({1, 1, 1, 2, 2});
  const auto terms = critic_loss(mean_critic, real, fake, torch::tensor({0.3}, torch::kFloat64), {10.0, 1e-3});
  // f(fake) - f(real) = 0.25 - 0.5; ||grad f|| = 1/2 everywhere; f(real)^2 = 0.25.
  const double want = (0.25 - 0.5) + 10.0 * 0.25 + 1e-3 * 0.25;
  const double loss_err = std::abs(terms.total.item<double>() - want);

  // G(z) = sigmoid(a z + b) on (1,2,2) volumes, nonlinear critic.
  ScoreFn f = [](const torch::Tensor& x) {
    const auto m = x.flatten(1);
    return m.pow(3).mean(1) - m.mean(1).pow(2);
  };
  const auto z32 = torch::tensor({-1.0f, 0.3f, 0.8f, 2.0f, 0.1f, -0.4f, 1.2f, -2.0f}).reshape({2, 1, 1, 2, 2});
  auto a = torch::tensor({0.7f}).requires_grad_(true), b = torch::tensor({-0.2f}).requires_grad_(true);
  generator_loss(f, torch::sigmoid(a * z32 + b)).backward();
  const auto z = z32.to(torch::kFloat64);
  auto loss = [&](double av, double bv) { return generator_loss(f, torch::sigmoid(av * z + bv)).item<double>(); };
  const double h = 1e-6;
  const double ga = (loss(0.7 + h, -0.2) - loss(0.7 - h, -0.2)) / (2 * h);
  const double gb = (loss(0.7, -0.2 + h) - loss(0.7, -0.2 - h)) / (2 * h);
  const double rel = std::max(std::abs(a.grad().item<double>() - ga) / std::abs(ga),
                              std::abs(b.grad().item<double>() - gb) / std::abs(gb));
  return {loss_err <= 1e-6 && rel <= 1e-3,
          "critic loss |err| = " + fmt(loss_err) + ", generator gradient rel err = " + fmt(rel)};
}

// ---------------------------------------------------------------- desk training

FeatureSet generated_features(GanModel& m, FeatureExtractor& fx, const torch::Tensor& z) {
  m.set_train(false);
  torch::NoGradGuard ng;
  std::vector<torch::Tensor> parts;
  for (int64_t i = 0; i < z.size(0); i += 16) parts.push_back(m.generate(z.slice(0, i, i + 16)));
  return fx.extract(torch::cat(parts), 0);
}

Outcome desk_training(const Options& opt) {
  Timer t;
  const Shape3 shape{32, 64, 64};
  const auto dir = opt.work_dir / "desk_training";
  fs::remove_all(dir);
  fs::create_directories(dir);

  ToyTrainConfig tcfg;
  tcfg.seed = opt.seed;
  auto toy = train_toy_extractor(make_thickness_classes(200, shape, opt.seed + 7), tcfg);
  Toy3dExtractor fx(toy.model);

  std::vector<Volume> train, held;
  for (auto& p : make_phantom_corpus(256, shape, opt.seed + 1)) train.push_back(std::move(p.volume));
  for (auto& p : make_phantom_corpus(256, shape, opt.seed + 2)) held.push_back(std::move(p.volume));
  const auto real_features = fx.extract(held, 0);

  auto m = GanModel::create(model_cfg(parse_arch(opt.desk_arch), shape), opt.seed);
  const auto z = standard_normal(256, 512, opt.seed + 3);
  const double fid_init = fid(real_features, generated_features(m, fx, z));

  TrainConfig cfg = TrainConfig::desk_scale();
  cfg.steps_per_stage = opt.desk_steps;
  cfg.n_critic = 5;
  cfg.lr_g = cfg.lr_c = opt.desk_lr;
  cfg.seed = opt.seed;
  cfg.log_every = 50;
  JsonlTrainSink sink(dir / "run");
  m.set_train(true);
  const auto stats = Trainer(m, train, cfg, sink).run();
  save_checkpoint(m, dir / "final");

  bool finite = !stats.loss_c_trace.empty();
  for (double v : stats.loss_c_trace) finite = finite && std::isfinite(v);
  for (double v : stats.loss_g_trace) finite = finite && std::isfinite(v);
  const double fid_end = fid(real_features, generated_features(m, fx, z));
  const double secs = t.seconds();
  const bool ok = finite && fid_end <= 0.5 * fid_init && secs < 4 * 3600.0;
  return {ok, opt.desk_arch + ", " + std::to_string(stats.generator_steps) + " generator steps, losses " +
                  (finite ? "finite" : "NON-FINITE") + ", toy3d FID " + fmt(fid_init) + " -> " + fmt(fid_end) +
                  " (ratio " + fmt(fid_end / fid_init) + ", toy3d test acc " + fmt(toy.test_accuracy) +
                  "), runtime " + fmt(secs / 60.0) + " min"};
}

// ---------------------------------------------------------------- inversion

Outcome inversion_hybrid(const Options& opt) {
  const Shape3 shape{32, 32, 32};
  std::vector<Volume> xs;
  for (auto& p : make_phantom_corpus(16, shape, opt.seed + 21)) xs.push_back(std::move(p.volume));
  InversionConfig cfg;
  cfg.refine_steps = 100;
  bool ok = true;
  std::ostringstream why;
  for (Arch arch : {Arch::ProGan, Arch::StyleGan}) {
    auto m = GanModel::create(model_cfg(arch, shape), opt.seed + 22);
    m.ensure_inversion_modules(opt.seed + 23);
    m.set_train(false);
    const auto noise = arch == Arch::StyleGan ? NoiseSpec::pinned() : NoiseSpec{};
    auto dist = [&](const torch::Tensor& x, const torch::Tensor& code) {
      torch::NoGradGuard ng;
      return loss_dist(x, m.decode(code, noise)).item<double>();
    };
    int held = 0;
    double worst_gap = -1e300;
    for (const auto& v : xs) {
      const auto r = invert(m, v, cfg);
      const auto x = to_tensor(v);
      const double gap = dist(x, r.code) - dist(x, r.encoder_code);
      worst_gap = std::max(worst_gap, gap);
      held += gap <= 0.0 ? 1 : 0;
    }

    torch::Tensor x_hat;
    {
      torch::NoGradGuard ng;
      x_hat = m.decode(m.to_code(torch::randn({1, 512})), noise);
    }
    InversionConfig ten = cfg;
    ten.refine_steps = 10;
    const auto self = invert(m, to_volume(x_hat), ten).refinement;
    const double best10 = *std::min_element(self.objective_trace.begin() + 1, self.objective_trace.end());
    const bool self_ok = best10 <= self.objective_trace.front();
    ok = ok && held == static_cast<int>(xs.size()) && self_ok;
    why << to_string(arch) << ": " << held << "/" << xs.size() << " samples with refined dist <= encoder dist (worst gap "
        << fmt(worst_gap) << "), self-reconstruction objective " << fmt(self.objective_trace.front()) << " -> "
        << fmt(best10) << " within 10 steps; ";
  }
  return {ok, why.str()};
}

// ---------------------------------------------------------------- latent tools

Outcome truncation(const Options& opt) {
  auto m = GanModel::create(model_cfg(Arch::StyleGan), opt.seed + 31);
  torch::NoGradGuard ng;
  const auto w_bar = estimate_w_bar(m, 1000, opt.seed);
  TruncationConfig tc;
  tc.mode = TruncationMode::StyleGanPsi;
  tc.w_bar = w_bar;
  tc.psi = 1.0;
  const bool identity = torch::equal(sample_codes(m, tc, 8, 5), m.style->mapping->forward(standard_normal(8, 512, 5)));
  tc.psi = 0.0;
  const auto collapsed = sample_codes(m, tc, 8, 5);
  bool collapse = true;
  for (int64_t i = 0; i < collapsed.size(0); ++i) collapse = collapse && torch::equal(collapsed[i], w_bar);

  const double level = 1.8;
  const auto draws = truncated_normal(200, 500, level, opt.seed + 32).to(torch::kFloat64);  // 10^5 coordinates
  const double max_abs_draw = draws.abs().max().item<double>();
  const double var = draws.var(/*unbiased=*/true).item<double>();
  const double want = truncated_normal_variance(level);
  const double rel = std::abs(var - want) / want;
  return {identity && collapse && max_abs_draw <= level && rel <= 0.02,
          std::string("psi=1 identity ") + (identity ? "exact" : "BROKEN") + ", psi=0 collapse " +
              (collapse ? "exact" : "BROKEN") + ", max |draw| " + fmt(max_abs_draw) + " over 1e5, variance " +
              fmt(var) + " vs " + fmt(want) + " (rel " + fmt(rel) + ")"};
}

Eigen::VectorXd power_iteration(const Eigen::MatrixXd& a) {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(a.cols()).normalized();
  for (int it = 0; it < 200000; ++it) {
    Eigen::VectorXd next = (a.transpose() * (a * v)).normalized();
    const double change = std::min((next - v).norm(), (next + v).norm());
    v = next;
    if (change < 1e-15) break;
  }
  return v;
}

Outcome directions(const Options& opt) {
  std::mt19937_64 rng(opt.seed + 41);
  std::normal_distribution<double> g;
  double worst_n1 = 0, worst_orth = 0, worst_eig = 0;
  const int k = 8;
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::MatrixXd a(64, 512);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    const auto d = find_directions(a, k);
    const Eigen::VectorXd oracle = power_iteration(a);
    const Eigen::VectorXd n1 = d.directions.row(0).transpose();
    worst_n1 = std::max(worst_n1, std::min((n1 - oracle).norm(), (n1 + oracle).norm()));
    const Eigen::MatrixXd gram = d.directions * d.directions.transpose();
    worst_orth = std::max(worst_orth, (gram - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff());
    // Eigenvalues of A^T A from an independent route: squared singular values of A.
    const Eigen::VectorXd sigma = Eigen::JacobiSVD<Eigen::MatrixXd>(a).singularValues();
    for (int i = 0; i < k; ++i) {
      const double lambda = sigma(i) * sigma(i);
      worst_eig = std::max(worst_eig, std::abs((a * d.directions.row(i).transpose()).squaredNorm() - lambda));
      worst_eig = std::max(worst_eig, std::abs(d.eigenvalues(i) - lambda));
    }
  }
  return {worst_n1 <= 1e-6 && worst_orth <= 1e-6 && worst_eig <= 1e-5,
          "20 matrices 64x512, k=8: n1 vs power iteration " + fmt(worst_n1) + ", orthonormality " + fmt(worst_orth) +
              ", |‖An‖²-σ²| " + fmt(worst_eig)};
}

Outcome style_mixing(const Options& opt) {
  auto m = GanModel::create(model_cfg(Arch::StyleGan), opt.seed + 51);
  m.set_train(false);
  torch::NoGradGuard ng;
  const auto ws = m.to_code(torch::randn({1, 512})), wt = m.to_code(torch::randn({1, 512}));
  const auto pin = NoiseSpec::pinned();
  const double src = max_abs(style_mix(m, ws, wt, 15), m.decode(ws, pin));
  const double tgt = max_abs(style_mix(m, ws, wt, 0), m.decode(wt, pin));
  const auto ref = style_mix(m, ws, ws, 0);
  double inv = 0;
  for (int a = 1; a <= kNumStyles; ++a) inv = std::max(inv, max_abs(style_mix(m, ws, ws, a), ref));
  const double mid = max_abs(style_mix(m, ws, wt, 7), m.decode(ws, pin));
  return {src == 0.0 && tgt == 0.0 && inv == 0.0 && mid > 0.0,
          "a=15 vs source " + fmt(src) + ", a=0 vs target " + fmt(tgt) + ", w_s=w_t spread over a " + fmt(inv) +
              " (a=7 differs by " + fmt(mid) + ")"};
}

// ---------------------------------------------------------------- metrics

FeatureSet as_set(Eigen::MatrixXd x) {
  FeatureSet f;
  f.features = std::move(x);
  f.extractor = "synthetic";
  return f;
}

Outcome metrics_kernels(const Options& opt) {
  std::mt19937_64 rng(opt.seed + 61);
  std::normal_distribution<double> g;
  auto gauss = [&](int64_t n, int64_t d, double shift) {
    Eigen::MatrixXd x(n, d);
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = g(rng);
    x.array() += shift;
    return x;
  };

  const auto x = as_set(gauss(500, 8, 0.0));
  const double self_fid = fid(x, x);

  const int64_t n = 100000;
  const auto p = as_set(gauss(n, 4, 0.0));
  const auto q = as_set(gauss(n, 4, 0.5));  // ||mu||^2 = 4 * 0.25 = 1
  const double shift_fid = fid(p, q);
  const double shift_rel = std::abs(shift_fid - 1.0);

  const auto same = precision_recall(x, x, 3);

  // Two far-apart clusters of 50 points each, checked against brute force.
  const auto c1 = as_set(gauss(50, 4, 0.0));
  const auto c2 = as_set(gauss(50, 4, 100.0));
  const auto dis = precision_recall(c1, c2, 3);
  auto brute_precision = [](const FeatureSet& real, const FeatureSet& gen, int k) {
    const auto r = knn_radii(real.features, k);
    int64_t hit = 0;
    for (int64_t i = 0; i < gen.size(); ++i) {
      bool in = false;
      for (int64_t j = 0; j < real.size() && !in; ++j)
        in = (gen.features.row(i) - real.features.row(j)).norm() <= r(j);
      hit += in;
    }
    return static_cast<double>(hit) / gen.size();
  };
  const double bp = brute_precision(c1, c2, 3), br = brute_precision(c2, c1, 3);

  // Realism of fresh draws that brute force places inside some real k-NN ball.
  const auto r = knn_radii(c1.features, 3);
  const Eigen::MatrixXd probes = gauss(100, 4, 0.0);
  double min_realism = 1e300, worst_brute = 0;
  int in_manifold = 0;
  for (int64_t i = 0; i < probes.rows(); ++i) {
    const Eigen::VectorXd phi = probes.row(i).transpose();
    double want = 0;
    bool inside = false;
    for (int64_t j = 0; j < c1.size(); ++j) {
      const double d = (c1.features.row(j).transpose() - phi).norm();
      inside = inside || d <= r(j);
      want = std::max(want, d == 0.0 ? kRealismCap : std::min(kRealismCap, r(j) / d));
    }
    const double got = realism(c1, phi, 3);
    worst_brute = std::max(worst_brute, std::abs(got - want));
    if (!inside) continue;
    ++in_manifold;
    min_realism = std::min(min_realism, got);
  }

  const bool ok = std::abs(self_fid) <= 1e-6 && shift_rel <= 0.05 && same.precision == 1.0 && same.recall == 1.0 &&
                  dis.precision == 0.0 && dis.recall == 0.0 && bp == 0.0 && br == 0.0 && in_manifold > 0 &&
                  min_realism >= 1.0 && worst_brute <= 1e-9;
  return {ok, "FID(X,X) " + fmt(self_fid) + ", mean-shift FID " + fmt(shift_fid) + " vs 1, identical P/R " +
                  fmt(same.precision) + "/" + fmt(same.recall) + ", disjoint P/R " + fmt(dis.precision) + "/" +
                  fmt(dis.recall) + " (brute " + fmt(bp) + "/" + fmt(br) + "), min realism over " +
                  std::to_string(in_manifold) + " in-manifold draws " + fmt(min_realism) + " (brute-force gap " +
                  fmt(worst_brute) + ")"};
}

// ---------------------------------------------------------------- preprocessing

Outcome preprocessing(const Options& opt) {
  const Shape3 in{168, 600, 400};
  Volume v(in);
  std::mt19937_64 rng(opt.seed + 71);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (auto& x : v.data()) x = u(rng);
  PreprocessConfig cfg;  // target (168,576,448), subsample 2, four 32-slice stacks
  const auto stacks = preprocess_volume(v, cfg, opt.seed, 0);
  bool shapes = stacks.size() == 4;
  for (const auto& s : stacks) shapes = shapes && s.shape() == Shape3{32, 288, 224};

  Volume small(Shape3{8, 12, 10});
  for (auto& x : small.data()) x = 4.f * u(rng) - 2.f;
  const auto once = dct_clip_noise(small, 0.5);
  const auto twice = dct_clip_noise(once, 0.5);
  float idem = 0.f;
  for (size_t i = 0; i < once.data().size(); ++i) idem = std::max(idem, std::abs(once.data()[i] - twice.data()[i]));

  // [10,20,30] padded by one on each side reflects about the edge voxels.
  Volume line(Shape3{1, 1, 3}, {10.f, 20.f, 30.f});
  const auto padded = pad_or_crop(line, Shape3{1, 1, 5});
  const std::vector<float> golden{20.f, 10.f, 20.f, 30.f, 20.f};
  const auto pd = padded.data();
  const bool mirror = std::equal(pd.begin(), pd.end(), golden.begin(), golden.end()) && mirror_index(-1, 3) == 1 && mirror_index(3, 3) == 1 &&
                      mirror_index(-3, 3) == 1 && mirror_index(5, 3) == 1 && mirror_index(-2, 3) == 2;
  std::ostringstream os;
  os << stacks.size() << " stacks";
  if (!stacks.empty()) os << " of " << stacks.front().shape().str();
  os << ", DCT-clip idempotence " << fmt(idem) << ", mirror golden " << (mirror ? "exact" : "MISMATCH");
  return {shapes && idem <= 1e-4f && mirror, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner"};
  Options opt;
  std::string criteria;
  std::string work = (fs::temp_directory_path() / "vgan_acceptance").string();
  app.add_option("--criteria", criteria, "Comma-separated subset to run (default: all)");
  app.add_option("--work-dir", work, "Scratch directory for training artifacts");
  app.add_option("--desk-arch", opt.desk_arch, "Architecture for desk training")->check(CLI::IsMember({"progan", "stylegan"}));
  app.add_option("--desk-steps", opt.desk_steps, "Generator steps per stage for desk training");
  app.add_option("--desk-lr", opt.desk_lr, "Generator and critic learning rate for desk training");
  app.add_option("--seed", opt.seed);
  bool list = false;
  app.add_flag("--list", list, "Print criterion names and exit");
  CLI11_PARSE(app, argc, argv);
  opt.work_dir = work;

  const std::vector<std::pair<std::string, std::function<Outcome(const Options&)>>> all = {
      {"shape_ladder", shape_ladder},       {"fade_continuity", fade_continuity},
      {"loss_oracle", loss_oracle},         {"desk_training", desk_training},
      {"inversion_hybrid", inversion_hybrid}, {"truncation", truncation},
      {"directions", directions},           {"style_mixing", style_mixing},
      {"metrics_kernels", metrics_kernels}, {"preprocessing", preprocessing},
  };
  if (list) {
    for (const auto& [name, _] : all) std::cout << name << "\n";
    return 0;
  }
  std::set<std::string> wanted;
  for (std::stringstream ss(criteria); ss.good();) {
    std::string s;
    std::getline(ss, s, ',');
    if (!s.empty()) wanted.insert(s);
  }
  for (const auto& w : wanted) {
    if (std::none_of(all.begin(), all.end(), [&](const auto& c) { return c.first == w; })) {
      std::cerr << "unknown criterion '" << w << "'\n";
      return 2;
    }
  }

  torch::manual_seed(opt.seed);
  int failed = 0;
  for (const auto& [name, check] : all) {
    if (!wanted.empty() && !wanted.count(name)) continue;
    Timer t;
    Outcome o;
    try {
      o = check(opt);
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << " [" << fmt(t.seconds()) << " s] " << o.detail << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
