#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/script.h>
#include <torch/torch.h>

#include "vgan/metrics.hpp"
#include "vgan/phantom.hpp"
#include "vgan/volume.hpp"

namespace vgan {

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  virtual int64_t dim() const = 0;
  // batch: [B,1,D,H,W]. `first_id` numbers the sample ids; `seed` drives any
  // random choices (slice positions).
  virtual FeatureSet extract(const torch::Tensor& batch, uint64_t seed = 0, int64_t first_id = 0) = 0;

  FeatureSet extract(const std::vector<Volume>& volumes, uint64_t seed = 0);
};

// 2D model applied to axial slices.
class SliceFeatureModel {
 public:
  virtual ~SliceFeatureModel() = default;
  virtual std::string name() const = 0;
  virtual int64_t dim() const = 0;
  virtual Eigen::VectorXd features(const torch::Tensor& slice) = 0;  // [H,W]
};

// Hand-crafted slice statistics: 16-bin intensity histogram over [0,1] plus
// moments, gradient energy and occupancy.
class SliceStatsModel : public SliceFeatureModel {
 public:
  std::string name() const override { return "slice_stats"; }
  int64_t dim() const override { return 24; }
  Eigen::VectorXd features(const torch::Tensor& slice) override;
};

// TorchScript 2D network; the slice is replicated to 3 channels.
class TorchScriptSliceModel : public SliceFeatureModel {
 public:
  explicit TorchScriptSliceModel(const std::filesystem::path& path);
  std::string name() const override { return "torchscript:" + path_; }
  int64_t dim() const override { return dim_; }
  Eigen::VectorXd features(const torch::Tensor& slice) override;

 private:
  std::string path_;
  torch::jit::script::Module module_;
  int64_t dim_ = 0;
};

// Two distinct axial (d1) slice positions per volume, from (seed, volume id).
std::array<int64_t, 2> inc2d_slice_indices(int64_t depth, uint64_t seed, int64_t volume_id);

// inc2d: two random axial slices per volume, each one feature row.
class Inc2dExtractor : public FeatureExtractor {
 public:
  explicit Inc2dExtractor(std::shared_ptr<SliceFeatureModel> model = std::make_shared<SliceStatsModel>());
  std::string name() const override { return "inc2d"; }
  int64_t dim() const override { return model_->dim(); }
  FeatureSet extract(const torch::Tensor& batch, uint64_t seed = 0, int64_t first_id = 0) override;
  using FeatureExtractor::extract;

  int64_t slices_consumed() const { return slices_consumed_; }

 private:
  std::shared_ptr<SliceFeatureModel> model_;
  int64_t slices_consumed_ = 0;
};

// res3d / vgs3d: a TorchScript 3D network over whole volumes, output flattened.
class TorchScriptVolumeExtractor : public FeatureExtractor {
 public:
  TorchScriptVolumeExtractor(std::string name, const std::filesystem::path& path);
  std::string name() const override { return name_; }
  int64_t dim() const override { return dim_; }
  FeatureSet extract(const torch::Tensor& batch, uint64_t seed = 0, int64_t first_id = 0) override;
  using FeatureExtractor::extract;

 private:
  std::string name_;
  torch::jit::script::Module module_;
  int64_t dim_ = 0;
};

// Small 3D conv classifier whose penultimate activations serve as toy3d features.
struct ToyClassifierImpl : torch::nn::Module {
  ToyClassifierImpl(int64_t feature_dim = 32, int64_t num_classes = 2);

  torch::Tensor features(const torch::Tensor& x);
  torch::Tensor forward(const torch::Tensor& x);

  int64_t feature_dim, num_classes;
  torch::nn::Conv3d c1{nullptr}, c2{nullptr}, c3{nullptr};
  torch::nn::Linear fc{nullptr}, head{nullptr};
};
TORCH_MODULE(ToyClassifier);

class Toy3dExtractor : public FeatureExtractor {
 public:
  explicit Toy3dExtractor(ToyClassifier model);
  std::string name() const override { return "toy3d"; }
  int64_t dim() const override { return model_->feature_dim; }
  FeatureSet extract(const torch::Tensor& batch, uint64_t seed = 0, int64_t first_id = 0) override;
  using FeatureExtractor::extract;

  ToyClassifier model() const { return model_; }

 private:
  ToyClassifier model_;
};

struct ToyTrainConfig {
  int64_t feature_dim = 32;
  int64_t epochs = 20;
  int64_t batch = 8;
  double lr = 1e-3;
  double test_fraction = 0.2;
  double imbalance_ratio = 1.5;  // warn when majority/minority exceeds this
  uint64_t seed = 0;
};

struct ToyTrainResult {
  ToyClassifier model{nullptr};
  double test_accuracy = 0.0;
  double train_accuracy = 0.0;
  int64_t n_train = 0, n_test = 0;
  std::vector<std::string> warnings;
};

ToyTrainResult train_toy_extractor(const std::vector<LabeledPhantom>& corpus, const ToyTrainConfig& cfg);

double classifier_accuracy(ToyClassifier& model, const torch::Tensor& x, const torch::Tensor& labels);

void save_toy_extractor(ToyClassifier& model, const std::filesystem::path& path);
ToyClassifier load_toy_extractor(const std::filesystem::path& path);

// "inc2d" (optional TorchScript slice model path), "toy3d" (path required),
// "res3d"/"vgs3d" (TorchScript path required).
std::unique_ptr<FeatureExtractor> make_extractor(const std::string& name, const std::filesystem::path& path = {});

}  // namespace vgan
