#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "smile/rng.hpp"

namespace smile {

/// A posterior with exact log-density and gradient. Targets are immutable
/// after construction and shareable across threads. Those with known second
/// moments also expose Var(theta_i^2), the denominators of the bias metric.
class Target {
 public:
  explicit Target(int dim) : dim_(dim) {}
  virtual ~Target() = default;

  int dim() const { return dim_; }
  virtual double log_density(const Eigen::VectorXd& theta) const = 0;
  virtual Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const = 0;
  virtual Eigen::VectorXd init_position() const { return Eigen::VectorXd::Zero(dim_); }

  virtual std::optional<Eigen::VectorXd> exact_second_moments() const { return std::nullopt; }
  virtual std::optional<Eigen::VectorXd> theta2_variance() const { return std::nullopt; }

  // Mini-batch interface; only meaningful when supports_minibatch().
  virtual bool supports_minibatch() const { return false; }
  virtual int dataset_size() const { return 0; }
  virtual double batch_log_density(const Eigen::VectorXd&, std::span<const int>) const {
    throw std::logic_error("target has no mini-batch support");
  }
  virtual Eigen::VectorXd batch_gradient(const Eigen::VectorXd&, std::span<const int>) const {
    throw std::logic_error("target has no mini-batch support");
  }

 protected:
  int dim_;
};

using TargetPtr = std::shared_ptr<const Target>;

/// Gaussian N(0, Sigma) with Sigma = R' Lambda R for a rotation R.
class IcgTarget final : public Target {
 public:
  IcgTarget(const Eigen::VectorXd& eigvals, const Eigen::MatrixXd& rotation);

  double log_density(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const override;
  std::optional<Eigen::VectorXd> exact_second_moments() const override { return m2_; }
  std::optional<Eigen::VectorXd> theta2_variance() const override { return var2_; }

  const Eigen::VectorXd& eigenvalues() const { return eigvals_; }
  const Eigen::MatrixXd& covariance() const { return sigma_; }

 private:
  Eigen::VectorXd eigvals_;
  Eigen::MatrixXd sigma_;
  Eigen::MatrixXd precision_;
  Eigen::VectorXd m2_, var2_;
};

/// Product of d/2 banana-shaped pairs:
/// log p = -sum_i [ (t_{2i-1}^2 - t_{2i})^2 / q + (t_{2i-1} - 1)^2 ].
/// Marginally t_odd ~ N(1, 1/2) and t_even | t_odd ~ N(t_odd^2, q/2), which
/// gives the stored moments in closed form (cross-checked against the 2-d
/// quadrature oracle in the tests).
class RosenbrockTarget final : public Target {
 public:
  RosenbrockTarget(int dim, double q);

  double log_density(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd init_position() const override;
  std::optional<Eigen::VectorXd> exact_second_moments() const override { return m2_; }
  std::optional<Eigen::VectorXd> theta2_variance() const override { return var2_; }

 private:
  double q_;
  Eigen::VectorXd m2_, var2_;
};

/// Funnel: t1 ~ N(0, std 3), t_i ~ N(0, std exp(t1/2)) for i >= 2.
class FunnelTarget final : public Target {
 public:
  explicit FunnelTarget(int dim);

  double log_density(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const override;
  std::optional<Eigen::VectorXd> exact_second_moments() const override { return m2_; }
  std::optional<Eigen::VectorXd> theta2_variance() const override { return var2_; }

 private:
  Eigen::VectorXd m2_, var2_;
};

/// 25-component Gaussian mixture on (t1, t2) with means on the grid
/// {-4,-2,0,2,4}^2 and component covariance 0.3 I; remaining dims standard
/// normal.
class Gmm25Target final : public Target {
 public:
  explicit Gmm25Target(int dim);

  double log_density(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const override;
  std::optional<Eigen::VectorXd> exact_second_moments() const override { return m2_; }
  std::optional<Eigen::VectorXd> theta2_variance() const override { return var2_; }

  static std::vector<Eigen::Vector2d> centers();
  static constexpr double kComponentVariance = 0.3;

 private:
  Eigen::VectorXd m2_, var2_;
};

/// Bayesian linear regression dataset: y ~ N(X theta, noise_var I) with a
/// N(0, prior_var I) prior on theta.
struct RegressionData {
  Eigen::MatrixXd design;
  Eigen::VectorXd responses;
  double noise_var = 1.0;
  double prior_var = 1.0;
};

/// Loads a CSV with a header row; the last column is the response.
RegressionData load_regression_csv(const std::string& path, double noise_var = 1.0,
                                   double prior_var = 1.0);

/// Synthesizes a dataset whose design matrix has the requested singular-value
/// ratio (condition number).
RegressionData synthetic_regression(int n, int p, double cond_number, double noise_var,
                                    double prior_var, RngStream& rng);

/// Gaussian posterior of the regression model, with exact mean/covariance and
/// a genuine mini-batch gradient: (N/B) sum_{i in batch} grad loglik_i + grad
/// log prior.
class LinearRegressionTarget final : public Target {
 public:
  explicit LinearRegressionTarget(RegressionData data);

  double log_density(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd gradient(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd init_position() const override { return mean_; }
  std::optional<Eigen::VectorXd> exact_second_moments() const override { return m2_; }
  std::optional<Eigen::VectorXd> theta2_variance() const override { return var2_; }

  bool supports_minibatch() const override { return true; }
  int dataset_size() const override { return static_cast<int>(data_.design.rows()); }
  double batch_log_density(const Eigen::VectorXd& theta, std::span<const int> batch) const override;
  Eigen::VectorXd batch_gradient(const Eigen::VectorXd& theta, std::span<const int> batch) const override;

  const Eigen::VectorXd& posterior_mean() const { return mean_; }
  const Eigen::MatrixXd& posterior_covariance() const { return cov_; }

 private:
  RegressionData data_;
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::VectorXd m2_, var2_;
};

TargetPtr make_icg(int dim, double cond_lo, double cond_hi, RngStream& rng);
TargetPtr make_rosenbrock(int dim, double q);
TargetPtr make_funnel(int dim);
TargetPtr make_gmm25(int dim);
TargetPtr make_linreg_target(RegressionData data);

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix with sign fix).
Eigen::MatrixXd random_rotation(int dim, RngStream& rng);

/// Eigenvalues equally spaced in log space from lo to hi.
Eigen::VectorXd log_spaced(int dim, double lo, double hi);

enum class NoiseKind { none, isotropic, diagonal, correlated, spatially_varied };

NoiseKind noise_kind_from_string(const std::string& s);
std::string to_string(NoiseKind k);

/// Explicit gradient-noise scenario: the injected noise eps has covariance
///   isotropic:        base * I
///   diagonal:         base * Lambda
///   correlated:       R'^T (base * Lambda) R'
///   spatially_varied: correlated * exp(-theta_2 / spatial_std)
struct NoiseSpec {
  NoiseKind kind = NoiseKind::none;
  double base_scale = 256.0;
  Eigen::VectorXd eigvals;
  Eigen::MatrixXd rotation;
  Eigen::MatrixXd factor;  // F with F F^T = correlated covariance
  double spatial_std = 1.0;

  static NoiseSpec none_spec() { return NoiseSpec{}; }
  static NoiseSpec make(NoiseKind kind, int dim, double base_scale,
                        const Eigen::VectorXd& eigvals, RngStream& rotation_rng,
                        double spatial_std = 1.0);
};

/// grad + eps with eps ~ N(0, V(theta)) per the spec above; kind none is the
/// identity and consumes no randomness.
Eigen::VectorXd inject_noise(const Eigen::VectorXd& grad, const Eigen::VectorXd& theta,
                             const NoiseSpec& spec, RngStream& rng);

}  // namespace smile
