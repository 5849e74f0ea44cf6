#include "vgan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "vgan/errors.hpp"

namespace vgan {

namespace {

void require_compatible(const FeatureSet& a, const FeatureSet& b) {
  if (a.extractor != b.extractor)
    throw ParameterError("feature sets come from different extractors: " + a.extractor + " vs " + b.extractor);
  if (a.dim() != b.dim()) throw ShapeError("feature sets differ in dimension");
  if (!a.features.allFinite() || !b.features.allFinite()) throw InvariantError("feature sets contain non-finite values");
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * s.asDiagonal() * es.eigenvectors().transpose();
}

Eigen::MatrixXd covariance(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& mu) {
  const Eigen::MatrixXd c = x.rowwise() - mu;
  return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

}  // namespace

double trace_sqrt_product(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd ra = psd_sqrt(a);
  const Eigen::MatrixXd m = ra * b * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

double fid(const FeatureSet& real, const FeatureSet& gen) {
  require_compatible(real, gen);
  if (real.size() < 2 || gen.size() < 2) throw ParameterError("FID needs at least two samples per set");
  const Eigen::RowVectorXd mr = real.features.colwise().mean();
  const Eigen::RowVectorXd mg = gen.features.colwise().mean();
  const Eigen::MatrixXd cr = covariance(real.features, mr);
  const Eigen::MatrixXd cg = covariance(gen.features, mg);
  const double d = (mr - mg).squaredNorm() + cr.trace() + cg.trace() - 2.0 * trace_sqrt_product(cr, cg);
  return std::max(d, 0.0);
}

Eigen::VectorXd knn_radii(const Eigen::MatrixXd& x, int k) {
  const int64_t n = x.rows();
  if (k < 1 || k >= n) throw ParameterError("k must satisfy 1 <= k < N (k=" + std::to_string(k) + ", N=" + std::to_string(n) + ")");
  Eigen::VectorXd r(n);
  std::vector<double> d(n - 1);
  for (int64_t i = 0; i < n; ++i) {
    int64_t m = 0;
    for (int64_t j = 0; j < n; ++j)
      if (j != i) d[m++] = (x.row(i) - x.row(j)).norm();
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
    r(i) = d[k - 1];
  }
  return r;
}

namespace {

// Fraction of rows of q inside at least one ball (center row of p, radius r_p).
double coverage(const Eigen::MatrixXd& p, const Eigen::VectorXd& rp, const Eigen::MatrixXd& q) {
  int64_t inside = 0;
  for (int64_t i = 0; i < q.rows(); ++i) {
    for (int64_t j = 0; j < p.rows(); ++j) {
      if ((q.row(i) - p.row(j)).norm() <= rp(j)) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(q.rows());
}

}  // namespace

PrecisionRecall precision_recall(const FeatureSet& real, const FeatureSet& gen, int k) {
  require_compatible(real, gen);
  PrecisionRecall pr;
  pr.precision = coverage(real.features, knn_radii(real.features, k), gen.features);
  pr.recall = coverage(gen.features, knn_radii(gen.features, k), real.features);
  return pr;
}

double realism(const FeatureSet& real, const Eigen::VectorXd& radii, const Eigen::VectorXd& phi_g, double cap) {
  if (phi_g.size() != real.dim()) throw ShapeError("realism: feature dimension mismatch");
  double best = 0.0;
  for (int64_t j = 0; j < real.size(); ++j) {
    const double dist = (real.features.row(j).transpose() - phi_g).norm();
    if (dist == 0.0) {
      if (radii(j) > 0.0) return cap;
      continue;
    }
    best = std::max(best, radii(j) / dist);
  }
  return std::min(best, cap);
}

double realism(const FeatureSet& real, const Eigen::VectorXd& phi_g, int k, double cap) {
  return realism(real, knn_radii(real.features, k), phi_g, cap);
}

Histogram histogram(const std::vector<double>& values, int bins) {
  if (bins < 1) throw ParameterError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) {
    h.edges.assign(bins + 1, 0.0);
    return h;
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (hi == lo) hi = lo + 1.0;
  for (int b = 0; b <= bins; ++b) h.edges.push_back(lo + (hi - lo) * b / bins);
  for (double v : values) {
    int b = static_cast<int>((v - lo) / (hi - lo) * bins);
    h.counts[std::clamp(b, 0, bins - 1)]++;
  }
  return h;
}

}  // namespace vgan
