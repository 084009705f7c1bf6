#include "smile/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "smile/targets.hpp"

namespace smile {

namespace {

double aggregate_bias(const Eigen::VectorXd& per_dim, BiasAggregation aggregation) {
  return aggregation == BiasAggregation::mean ? per_dim.mean() : per_dim.maxCoeff();
}

Eigen::VectorXd per_dim_bias(const Eigen::VectorXd& pooled_m2,
                             const Eigen::VectorXd& exact_m2,
                             const Eigen::VectorXd& exact_var_theta2) {
  if (exact_m2.size() != pooled_m2.size() || exact_var_theta2.size() != pooled_m2.size())
    throw std::invalid_argument("moment vector size mismatch");
  if ((exact_var_theta2.array() <= 0.0).any())
    throw std::invalid_argument("Var(theta^2) must be positive");
  const Eigen::ArrayXd diff = pooled_m2.array() - exact_m2.array();
  return (diff * diff / exact_var_theta2.array()).matrix();
}

}  // namespace

BiasReport second_moment_bias(const std::vector<Eigen::MatrixXd>& chain_samples,
                              const Eigen::VectorXd& exact_m2,
                              const Eigen::VectorXd& exact_var_theta2,
                              BiasAggregation aggregation) {
  if (chain_samples.empty()) throw std::invalid_argument("no chains");
  const Eigen::Index n = chain_samples.front().rows();
  const Eigen::Index d = chain_samples.front().cols();
  if (n == 0) throw std::invalid_argument("empty samples");

  Eigen::MatrixXd per_chain(static_cast<Eigen::Index>(chain_samples.size()), d);
  for (std::size_t k = 0; k < chain_samples.size(); ++k) {
    const Eigen::MatrixXd& s = chain_samples[k];
    if (s.rows() != n || s.cols() != d)
      throw std::invalid_argument("chains must have equal sample counts and dims");
    per_chain.row(static_cast<Eigen::Index>(k)) = s.array().square().colwise().mean();
  }
  return second_moment_bias_from_moments(per_chain, n, exact_m2, exact_var_theta2,
                                         aggregation);
}

BiasReport second_moment_bias_from_moments(const Eigen::MatrixXd& per_chain_m2,
                                           long n_samples_per_chain,
                                           const Eigen::VectorXd& exact_m2,
                                           const Eigen::VectorXd& exact_var_theta2,
                                           BiasAggregation aggregation) {
  if (per_chain_m2.rows() == 0 || n_samples_per_chain == 0)
    throw std::invalid_argument("empty samples");
  // Equal samples per chain, so the pooled mean of theta^2 is the mean of the
  // per-chain means.
  const Eigen::VectorXd pooled = per_chain_m2.colwise().mean();

  BiasReport report;
  report.per_dim = per_dim_bias(pooled, exact_m2, exact_var_theta2);
  report.aggregate = aggregate_bias(report.per_dim, aggregation);
  report.n_chains = static_cast<int>(per_chain_m2.rows());
  report.n_samples_per_chain = n_samples_per_chain;
  return report;
}

double bootstrap_std(const Eigen::MatrixXd& per_chain_m2, const Eigen::VectorXd& exact_m2,
                     const Eigen::VectorXd& exact_var_theta2, int n_boot,
                     BiasAggregation aggregation, RngStream& rng) {
  const Eigen::Index k = per_chain_m2.rows();
  if (k < 1) throw std::invalid_argument("no chains");
  if (n_boot < 1) throw std::invalid_argument("n_boot must be positive");

  double sum = 0.0, sum_sq = 0.0;
  Eigen::VectorXd pooled(per_chain_m2.cols());
  for (int b = 0; b < n_boot; ++b) {
    pooled.setZero();
    for (Eigen::Index i = 0; i < k; ++i)
      pooled += per_chain_m2.row(static_cast<Eigen::Index>(
                                     rng.below(static_cast<std::uint64_t>(k))))
                    .transpose();
    pooled /= static_cast<double>(k);
    const double agg =
        aggregate_bias(per_dim_bias(pooled, exact_m2, exact_var_theta2), aggregation);
    sum += agg;
    sum_sq += agg * agg;
  }
  const double mean = sum / n_boot;
  const double var = sum_sq / n_boot - mean * mean;
  return std::sqrt(var > 0.0 ? var : 0.0);
}

int mode_coverage(const Eigen::MatrixXd& points, const std::vector<Eigen::Vector2d>& centers,
                  double radius, int min_hits) {
  if (!(radius > 0.0)) throw std::invalid_argument("radius must be positive");
  if (points.cols() != 2) throw std::invalid_argument("points must be n x 2");
  const double r2 = radius * radius;
  int covered = 0;
  for (const auto& c : centers) {
    long hits = 0;
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
      const double dx = points(i, 0) - c[0];
      const double dy = points(i, 1) - c[1];
      if (dx * dx + dy * dy <= r2 && ++hits >= min_hits) break;
    }
    if (hits >= min_hits) ++covered;
  }
  return covered;
}

double default_coverage_radius() { return 3.0 * std::sqrt(Gmm25Target::kComponentVariance); }

}  // namespace smile
