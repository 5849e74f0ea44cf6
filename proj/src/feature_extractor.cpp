#include "vgan/feature_extractor.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "vgan/errors.hpp"
#include "vgan/networks.hpp"
#include "vgan/rng.hpp"

namespace vgan {

namespace {

Eigen::VectorXd to_eigen(const torch::Tensor& t) {
  auto d = t.detach().to(torch::kFloat64).contiguous().flatten();
  return Eigen::Map<const Eigen::VectorXd>(d.data_ptr<double>(), d.numel());
}

void require_batch(const torch::Tensor& b) {
  if (b.dim() != 5 || b.size(1) != 1) throw ShapeError("feature extraction expects [B,1,D,H,W]");
}

}  // namespace

FeatureSet FeatureExtractor::extract(const std::vector<Volume>& volumes, uint64_t seed) {
  if (volumes.empty()) throw ParameterError("no volumes to extract features from");
  return extract(stack_volumes(volumes), seed, 0);
}

Eigen::VectorXd SliceStatsModel::features(const torch::Tensor& slice) {
  auto s = slice.detach().to(torch::kFloat64).contiguous();
  Eigen::VectorXd f(dim());
  auto hist = torch::histc(s.clamp(0.0, 1.0), 16, 0.0, 1.0) / static_cast<double>(s.numel());
  for (int i = 0; i < 16; ++i) f(i) = hist[i].item<double>();
  f(16) = s.mean().item<double>();
  f(17) = s.std(false).item<double>();
  f(18) = s.min().item<double>();
  f(19) = s.max().item<double>();
  f(20) = (s.slice(0, 1) - s.slice(0, 0, -1)).abs().mean().item<double>();
  f(21) = (s.slice(1, 1) - s.slice(1, 0, -1)).abs().mean().item<double>();
  f(22) = (s > 0.5).to(torch::kFloat64).mean().item<double>();
  f(23) = (s > 0.8).to(torch::kFloat64).mean().item<double>();
  return f;
}

TorchScriptSliceModel::TorchScriptSliceModel(const std::filesystem::path& path) : path_(path.string()) {
  try {
    module_ = torch::jit::load(path_);
  } catch (const c10::Error& e) {
    throw IoError("cannot load TorchScript slice model " + path_ + ": " + e.what_without_backtrace());
  }
  module_.eval();
}

Eigen::VectorXd TorchScriptSliceModel::features(const torch::Tensor& slice) {
  torch::NoGradGuard ng;
  auto x = slice.to(torch::kFloat32).unsqueeze(0).unsqueeze(0).expand({1, 3, slice.size(0), slice.size(1)});
  auto out = module_.forward({x.contiguous()}).toTensor().flatten();
  dim_ = out.numel();
  return to_eigen(out);
}

std::array<int64_t, 2> inc2d_slice_indices(int64_t depth, uint64_t seed, int64_t volume_id) {
  if (depth < 2) throw ShapeError("inc2d needs volumes with at least two axial slices");
  CounterStream cs(derive_seed(seed, {0x1c2d, static_cast<uint64_t>(volume_id)}));
  const auto a = static_cast<int64_t>(cs.bits(0) % static_cast<uint64_t>(depth));
  // Second index drawn from the remaining depth - 1 positions.
  auto b = static_cast<int64_t>(cs.bits(1) % static_cast<uint64_t>(depth - 1));
  if (b >= a) ++b;
  return {a, b};
}

Inc2dExtractor::Inc2dExtractor(std::shared_ptr<SliceFeatureModel> model) : model_(std::move(model)) {
  if (!model_) throw ParameterError("inc2d needs a slice model");
}

FeatureSet Inc2dExtractor::extract(const torch::Tensor& batch, uint64_t seed, int64_t first_id) {
  require_batch(batch);
  FeatureSet fs;
  fs.extractor = name();
  std::vector<Eigen::VectorXd> rows;
  for (int64_t i = 0; i < batch.size(0); ++i) {
    const int64_t id = first_id + i;
    for (int64_t s : inc2d_slice_indices(batch.size(2), seed, id)) {
      rows.push_back(model_->features(batch[i][0][s]));
      fs.sample_ids.push_back(std::to_string(id) + ":" + std::to_string(s));
      ++slices_consumed_;
    }
  }
  fs.features.resize(static_cast<int64_t>(rows.size()), rows.front().size());
  for (size_t r = 0; r < rows.size(); ++r) fs.features.row(static_cast<int64_t>(r)) = rows[r].transpose();
  return fs;
}

TorchScriptVolumeExtractor::TorchScriptVolumeExtractor(std::string name, const std::filesystem::path& path)
    : name_(std::move(name)) {
  try {
    module_ = torch::jit::load(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot load TorchScript model " + path.string() + ": " + e.what_without_backtrace());
  }
  module_.eval();
}

FeatureSet TorchScriptVolumeExtractor::extract(const torch::Tensor& batch, uint64_t, int64_t first_id) {
  require_batch(batch);
  torch::NoGradGuard ng;
  FeatureSet fs;
  fs.extractor = name_;
  for (int64_t i = 0; i < batch.size(0); ++i) {
    auto out = module_.forward({batch.slice(0, i, i + 1).to(torch::kFloat32).contiguous()}).toTensor().flatten();
    if (i == 0) {
      dim_ = out.numel();
      fs.features.resize(batch.size(0), dim_);
    } else if (out.numel() != dim_) {
      throw ShapeError(name_ + " produced features of varying size");
    }
    fs.features.row(i) = to_eigen(out).transpose();
    fs.sample_ids.push_back(std::to_string(first_id + i));
  }
  return fs;
}

ToyClassifierImpl::ToyClassifierImpl(int64_t feature_dim_, int64_t num_classes_)
    : feature_dim(feature_dim_), num_classes(num_classes_) {
  if (feature_dim < 1 || num_classes < 2) throw ParameterError("toy classifier needs feature_dim >= 1 and >= 2 classes");
  using torch::nn::Conv3dOptions;
  c1 = register_module("c1", torch::nn::Conv3d(Conv3dOptions(1, 8, 3).stride(2).padding(1)));
  c2 = register_module("c2", torch::nn::Conv3d(Conv3dOptions(8, 16, 3).stride(2).padding(1)));
  c3 = register_module("c3", torch::nn::Conv3d(Conv3dOptions(16, 32, 3).stride(2).padding(1)));
  fc = register_module("fc", torch::nn::Linear(32, feature_dim));
  head = register_module("head", torch::nn::Linear(feature_dim, num_classes));
}

torch::Tensor ToyClassifierImpl::features(const torch::Tensor& x) {
  auto y = lrelu(c1(x));
  y = lrelu(c2(y));
  y = lrelu(c3(y));
  y = y.mean({2, 3, 4});
  return lrelu(fc(y));
}

torch::Tensor ToyClassifierImpl::forward(const torch::Tensor& x) { return head(features(x)); }

Toy3dExtractor::Toy3dExtractor(ToyClassifier model) : model_(std::move(model)) {
  if (!model_) throw ParameterError("toy3d extractor needs a model");
  model_->eval();
}

FeatureSet Toy3dExtractor::extract(const torch::Tensor& batch, uint64_t, int64_t first_id) {
  require_batch(batch);
  torch::NoGradGuard ng;
  model_->eval();
  FeatureSet fs;
  fs.extractor = name();
  fs.features.resize(batch.size(0), dim());
  constexpr int64_t kChunk = 32;
  for (int64_t i = 0; i < batch.size(0); i += kChunk) {
    const int64_t n = std::min(kChunk, batch.size(0) - i);
    auto f = model_->features(batch.slice(0, i, i + n).to(torch::kFloat32)).to(torch::kFloat64).contiguous();
    fs.features.middleRows(i, n) =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(f.data_ptr<double>(), n, dim());
  }
  for (int64_t i = 0; i < batch.size(0); ++i) fs.sample_ids.push_back(std::to_string(first_id + i));
  return fs;
}

double classifier_accuracy(ToyClassifier& model, const torch::Tensor& x, const torch::Tensor& labels) {
  torch::NoGradGuard ng;
  model->eval();
  auto pred = model->forward(x).argmax(1);
  return pred.eq(labels).to(torch::kFloat64).mean().item<double>();
}

ToyTrainResult train_toy_extractor(const std::vector<LabeledPhantom>& corpus, const ToyTrainConfig& cfg) {
  if (corpus.size() < 4) throw ParameterError("toy extractor needs at least four labeled volumes");
  if (!(cfg.test_fraction > 0 && cfg.test_fraction < 1)) throw ParameterError("test_fraction must lie in (0,1)");
  if (cfg.epochs < 1 || cfg.batch < 1 || !(cfg.lr > 0)) throw ParameterError("invalid toy training settings");

  ToyTrainResult res;
  int max_label = 0;
  for (const auto& p : corpus) {
    if (p.label < 0) throw ParameterError("labels must be non-negative");
    max_label = std::max(max_label, p.label);
  }
  const int64_t n_classes = std::max(2, max_label + 1);
  std::vector<int64_t> counts(n_classes, 0);
  for (const auto& p : corpus) counts[p.label]++;
  const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
  if (*mn == 0 || static_cast<double>(*mx) / static_cast<double>(*mn) > cfg.imbalance_ratio) {
    std::string msg = "label imbalance: class counts";
    for (auto c : counts) msg += " " + std::to_string(c);
    res.warnings.push_back(msg);
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<int64_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = std::max<int64_t>(1, static_cast<int64_t>(cfg.test_fraction * static_cast<double>(corpus.size())));
  std::vector<int64_t> test_idx(order.begin(), order.begin() + n_test), train_idx(order.begin() + n_test, order.end());
  res.n_train = static_cast<int64_t>(train_idx.size());
  res.n_test = n_test;

  auto gather = [&](const std::vector<int64_t>& idx) {
    std::vector<Volume> vs;
    std::vector<int64_t> ls;
    for (auto i : idx) {
      vs.push_back(corpus[i].volume);
      ls.push_back(corpus[i].label);
    }
    return std::pair{stack_volumes(vs), torch::tensor(ls, torch::kLong)};
  };
  auto [x_train, y_train] = gather(train_idx);
  auto [x_test, y_test] = gather(test_idx);

  torch::manual_seed(cfg.seed);
  ToyClassifier model(cfg.feature_dim, n_classes);
  torch::optim::Adam opt(model->parameters(), torch::optim::AdamOptions(cfg.lr));
  std::vector<int64_t> perm(train_idx.size());
  std::iota(perm.begin(), perm.end(), 0);
  for (int64_t e = 0; e < cfg.epochs; ++e) {
    model->train();
    std::shuffle(perm.begin(), perm.end(), rng);
    for (size_t i = 0; i < perm.size(); i += static_cast<size_t>(cfg.batch)) {
      const auto end = std::min(perm.size(), i + static_cast<size_t>(cfg.batch));
      auto idx = torch::tensor(std::vector<int64_t>(perm.begin() + static_cast<int64_t>(i), perm.begin() + static_cast<int64_t>(end)),
                               torch::kLong);
      auto loss = torch::cross_entropy_loss(model->forward(x_train.index_select(0, idx)), y_train.index_select(0, idx));
      opt.zero_grad();
      loss.backward();
      opt.step();
    }
  }
  res.train_accuracy = classifier_accuracy(model, x_train, y_train);
  res.test_accuracy = classifier_accuracy(model, x_test, y_test);
  res.model = model;
  return res;
}

void save_toy_extractor(ToyClassifier& model, const std::filesystem::path& path) {
  torch::serialize::OutputArchive ar;
  ar.write("feature_dim", torch::tensor(model->feature_dim));
  ar.write("num_classes", torch::tensor(model->num_classes));
  model->save(ar);
  try {
    ar.save_to(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what_without_backtrace());
  }
}

ToyClassifier load_toy_extractor(const std::filesystem::path& path) {
  torch::serialize::InputArchive ar;
  try {
    ar.load_from(path.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read toy extractor " + path.string() + ": " + e.what_without_backtrace());
  }
  torch::Tensor fd, nc;
  ar.read("feature_dim", fd);
  ar.read("num_classes", nc);
  ToyClassifier model(fd.item<int64_t>(), nc.item<int64_t>());
  model->load(ar);
  model->eval();
  return model;
}

std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, const std::filesystem::path& path) {
  if (name == "inc2d") {
    if (path.empty()) return std::make_unique<Inc2dExtractor>();
    return std::make_unique<Inc2dExtractor>(std::make_shared<TorchScriptSliceModel>(path));
  }
  if (name == "toy3d") {
    if (path.empty()) throw ParameterError("toy3d needs a trained extractor file (train-extractor)");
    return std::make_unique<Toy3dExtractor>(load_toy_extractor(path));
  }
  if (name == "res3d" || name == "vgs3d") {
    if (path.empty()) throw ParameterError(name + " needs a TorchScript model file");
    return std::make_unique<TorchScriptVolumeExtractor>(name, path);
  }
  throw ParameterError("unknown extractor '" + name + "' (inc2d, res3d, vgs3d, toy3d)");
}

}  // namespace vgan
