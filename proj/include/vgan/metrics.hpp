#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace vgan {

struct FeatureSet {
  Eigen::MatrixXd features;  // N x D
  std::string extractor;
  std::vector<std::string> sample_ids;

  int64_t size() const { return features.rows(); }
  int64_t dim() const { return features.cols(); }
};

// Trace of the PSD square root of sqrt(a) b sqrt(a), equal to Tr((a b)^{1/2}).
double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

// Frechet distance between Gaussian fits of two feature clouds.
double fid(const FeatureSet& real, const FeatureSet& gen);

// Distance from each row to its k-th nearest other row.
Eigen::VectorXd knn_radii(const Eigen::MatrixXd& x, int k);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& gen, int k = 3);

inline constexpr double kRealismCap = 1e6;

// max_r radius_k(phi_r) / ||phi_g - phi_r||, capped at `cap`.
double realism(const FeatureSet& real, const Eigen::VectorXd& phi_g, int k = 3, double cap = kRealismCap);
// Same, with precomputed real radii.
double realism(const FeatureSet& real, const Eigen::VectorXd& radii, const Eigen::VectorXd& phi_g,
               double cap = kRealismCap);

struct Histogram {
  std::vector<double> edges;  // bins + 1
  std::vector<int64_t> counts;
};
Histogram histogram(const std::vector<double>& values, int bins);

}  // namespace vgan
