#pragma once

#include <vector>

#include <Eigen/Core>

#include "smile/rng.hpp"

namespace smile {

enum class BiasAggregation { mean, max };

/// Second-moment bias report: per dimension
/// b2_i = (mean(theta_i^2) - E[theta_i^2])^2 / Var(theta_i^2) over samples
/// pooled across chains, aggregated by mean or max.
struct BiasReport {
  Eigen::VectorXd per_dim;
  double aggregate = 0.0;
  double bootstrap_std = 0.0;
  int n_chains = 0;
  long n_samples_per_chain = 0;
};

/// chain_samples: one (n x d) matrix per chain, equal n across chains.
BiasReport second_moment_bias(const std::vector<Eigen::MatrixXd>& chain_samples,
                              const Eigen::VectorXd& exact_m2,
                              const Eigen::VectorXd& exact_var_theta2,
                              BiasAggregation aggregation);

/// Same metric from per-chain second moments (K x d), the form the chain
/// runner accumulates online.
BiasReport second_moment_bias_from_moments(const Eigen::MatrixXd& per_chain_m2,
                                           long n_samples_per_chain,
                                           const Eigen::VectorXd& exact_m2,
                                           const Eigen::VectorXd& exact_var_theta2,
                                           BiasAggregation aggregation);

/// Standard deviation of the aggregate bias under resampling the K chains
/// with replacement n_boot times (population std; a single resample gives 0).
double bootstrap_std(const Eigen::MatrixXd& per_chain_m2, const Eigen::VectorXd& exact_m2,
                     const Eigen::VectorXd& exact_var_theta2, int n_boot,
                     BiasAggregation aggregation, RngStream& rng);

/// Number of centers with at least min_hits samples within Euclidean distance
/// radius of them. points: (n x 2).
int mode_coverage(const Eigen::MatrixXd& points, const std::vector<Eigen::Vector2d>& centers,
                  double radius, int min_hits = 10);

/// Default coverage radius: three component standard deviations.
double default_coverage_radius();

}  // namespace smile
