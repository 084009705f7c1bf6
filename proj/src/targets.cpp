#include "smile/targets.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/QR>

namespace smile {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

void check_dim(int dim, int min_dim = 2) {
  if (dim < min_dim) throw std::invalid_argument("dimension too small");
}

}  // namespace

// ---------------------------------------------------------------------------
// ICG

IcgTarget::IcgTarget(const Eigen::VectorXd& eigvals, const Eigen::MatrixXd& rotation)
    : Target(static_cast<int>(eigvals.size())), eigvals_(eigvals) {
  check_dim(dim_);
  if (rotation.rows() != dim_ || rotation.cols() != dim_)
    throw std::invalid_argument("rotation shape mismatch");
  if (((rotation.transpose() * rotation) - Eigen::MatrixXd::Identity(dim_, dim_))
          .cwiseAbs()
          .maxCoeff() > 1e-10)
    throw std::invalid_argument("rotation is not orthogonal");
  if ((eigvals.array() <= 0.0).any())
    throw std::invalid_argument("eigenvalues must be positive");

  sigma_ = rotation.transpose() * eigvals.asDiagonal() * rotation;
  precision_ = rotation.transpose() * eigvals.cwiseInverse().asDiagonal() * rotation;
  m2_ = sigma_.diagonal();
  var2_ = 2.0 * m2_.cwiseProduct(m2_);  // Gaussian: Var(x^2) = 2 (E[x^2])^2
}

double IcgTarget::log_density(const Eigen::VectorXd& theta) const {
  return -0.5 * theta.dot(precision_ * theta);
}

Eigen::VectorXd IcgTarget::gradient(const Eigen::VectorXd& theta) const {
  return -(precision_ * theta);
}

// ---------------------------------------------------------------------------
// Rosenbrock

RosenbrockTarget::RosenbrockTarget(int dim, double q) : Target(dim), q_(q) {
  check_dim(dim);
  if (dim % 2 != 0) throw std::invalid_argument("rosenbrock dimension must be even");
  if (!(q > 0.0)) throw std::invalid_argument("q must be positive");

  // t_odd ~ N(1, 1/2): E[t^2] = 1.5, E[t^4] = 4.75, E[t^8] = 126.5625.
  // t_even = t_odd^2 + sqrt(q/2) w:
  //   E[t_even^2] = 4.75 + q/2
  //   E[t_even^4] = E[t_odd^8] + 6 E[t_odd^4] (q/2) + 3 (q/2)^2
  const double m2_odd = 1.5;
  const double var2_odd = 4.75 - m2_odd * m2_odd;  // Var(t_odd^2) = 2.5
  const double m2_even = 4.75 + 0.5 * q;
  const double m4_even = 126.5625 + 6.0 * 4.75 * (0.5 * q) + 3.0 * (0.5 * q) * (0.5 * q);
  const double var2_even = m4_even - m2_even * m2_even;

  m2_.resize(dim);
  var2_.resize(dim);
  for (int i = 0; i < dim; i += 2) {
    m2_[i] = m2_odd;
    m2_[i + 1] = m2_even;
    var2_[i] = var2_odd;
    var2_[i + 1] = var2_even;
  }
}

double RosenbrockTarget::log_density(const Eigen::VectorXd& theta) const {
  double lp = 0.0;
  for (int i = 0; i < dim_; i += 2) {
    const double a = theta[i];
    const double b = theta[i + 1];
    const double r = a * a - b;
    lp -= r * r / q_ + (a - 1.0) * (a - 1.0);
  }
  return lp;
}

Eigen::VectorXd RosenbrockTarget::gradient(const Eigen::VectorXd& theta) const {
  Eigen::VectorXd g(dim_);
  for (int i = 0; i < dim_; i += 2) {
    const double a = theta[i];
    const double b = theta[i + 1];
    const double r = a * a - b;
    g[i] = -(4.0 * a * r / q_ + 2.0 * (a - 1.0));
    g[i + 1] = 2.0 * r / q_;
  }
  return g;
}

Eigen::VectorXd RosenbrockTarget::init_position() const {
  Eigen::VectorXd init(dim_);
  for (int i = 0; i < dim_; i += 2) {
    init[i] = 1.0;    // E[t_odd]
    init[i + 1] = 1.5;  // E[t_even] = E[t_odd^2]
  }
  return init;
}

// ---------------------------------------------------------------------------
// Funnel

FunnelTarget::FunnelTarget(int dim) : Target(dim) {
  check_dim(dim);
  m2_.resize(dim);
  var2_.resize(dim);
  m2_[0] = 9.0;
  var2_[0] = 2.0 * 81.0;
  // t_i = exp(t1/2) z: E[t_i^2] = E[exp(t1)] = e^{9/2},
  // E[t_i^4] = 3 E[exp(2 t1)] = 3 e^{18}.
  const double m2_tail = std::exp(4.5);
  const double var2_tail = 3.0 * std::exp(18.0) - std::exp(9.0);
  for (int i = 1; i < dim; ++i) {
    m2_[i] = m2_tail;
    var2_[i] = var2_tail;
  }
}

double FunnelTarget::log_density(const Eigen::VectorXd& theta) const {
  const double t1 = theta[0];
  double lp = -t1 * t1 / 18.0 - 0.5 * std::log(9.0) - 0.5 * kLog2Pi;
  const double inv_var = std::exp(-t1);
  for (int i = 1; i < dim_; ++i)
    lp += -0.5 * theta[i] * theta[i] * inv_var - 0.5 * t1 - 0.5 * kLog2Pi;
  return lp;
}

Eigen::VectorXd FunnelTarget::gradient(const Eigen::VectorXd& theta) const {
  const double t1 = theta[0];
  const double inv_var = std::exp(-t1);
  Eigen::VectorXd g(dim_);
  double sum_sq = 0.0;
  for (int i = 1; i < dim_; ++i) {
    g[i] = -theta[i] * inv_var;
    sum_sq += theta[i] * theta[i];
  }
  g[0] = -t1 / 9.0 - 0.5 * static_cast<double>(dim_ - 1) + 0.5 * inv_var * sum_sq;
  return g;
}

// ---------------------------------------------------------------------------
// GMM

std::vector<Eigen::Vector2d> Gmm25Target::centers() {
  const double grid[5] = {-4.0, -2.0, 0.0, 2.0, 4.0};
  std::vector<Eigen::Vector2d> c;
  c.reserve(25);
  for (double x : grid)
    for (double y : grid) c.emplace_back(x, y);
  return c;
}

Gmm25Target::Gmm25Target(int dim) : Target(dim) {
  check_dim(dim);
  // Mixture moments per mixing dim: E[t^2] = mean(mu^2) + v,
  // E[t^4] = mean(mu^4 + 6 mu^2 v + 3 v^2).
  const double v = kComponentVariance;
  double mu2 = 0.0, mu4 = 0.0;
  const double grid[5] = {-4.0, -2.0, 0.0, 2.0, 4.0};
  for (double mu : grid) {
    mu2 += mu * mu / 5.0;
    mu4 += mu * mu * mu * mu / 5.0;
  }
  const double m2_mix = mu2 + v;
  const double m4_mix = mu4 + 6.0 * mu2 * v + 3.0 * v * v;

  m2_.resize(dim);
  var2_.resize(dim);
  m2_[0] = m2_[1] = m2_mix;
  var2_[0] = var2_[1] = m4_mix - m2_mix * m2_mix;
  for (int i = 2; i < dim; ++i) {
    m2_[i] = 1.0;
    var2_[i] = 2.0;
  }
}

double Gmm25Target::log_density(const Eigen::VectorXd& theta) const {
  const auto cs = centers();
  const double v = kComponentVariance;
  double max_l = -std::numeric_limits<double>::infinity();
  double ls[25];
  for (int k = 0; k < 25; ++k) {
    const double dx = theta[0] - cs[k][0];
    const double dy = theta[1] - cs[k][1];
    ls[k] = -(dx * dx + dy * dy) / (2.0 * v);
    max_l = std::max(max_l, ls[k]);
  }
  double sum = 0.0;
  for (int k = 0; k < 25; ++k) sum += std::exp(ls[k] - max_l);
  double lp = max_l + std::log(sum) - std::log(25.0) - std::log(2.0 * M_PI * v);
  for (int i = 2; i < dim_; ++i) lp += -0.5 * theta[i] * theta[i] - 0.5 * kLog2Pi;
  return lp;
}

Eigen::VectorXd Gmm25Target::gradient(const Eigen::VectorXd& theta) const {
  const auto cs = centers();
  const double v = kComponentVariance;
  double max_l = -std::numeric_limits<double>::infinity();
  double ls[25];
  for (int k = 0; k < 25; ++k) {
    const double dx = theta[0] - cs[k][0];
    const double dy = theta[1] - cs[k][1];
    ls[k] = -(dx * dx + dy * dy) / (2.0 * v);
    max_l = std::max(max_l, ls[k]);
  }
  double wsum = 0.0;
  double w[25];
  for (int k = 0; k < 25; ++k) {
    w[k] = std::exp(ls[k] - max_l);
    wsum += w[k];
  }
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim_);
  for (int k = 0; k < 25; ++k) {
    const double wk = w[k] / wsum;
    g[0] += wk * (cs[k][0] - theta[0]) / v;
    g[1] += wk * (cs[k][1] - theta[1]) / v;
  }
  for (int i = 2; i < dim_; ++i) g[i] = -theta[i];
  return g;
}

// ---------------------------------------------------------------------------
// Linear regression

RegressionData load_regression_csv(const std::string& path, double noise_var,
                                   double prior_var) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open CSV file: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty CSV file: " + path);

  std::vector<std::vector<double>> rows;
  std::size_t ncols = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": not a number: '" + cell + "'");
      }
    }
    if (ncols == 0) ncols = row.size();
    if (row.size() != ncols)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected " +
                               std::to_string(ncols) + " columns");
    rows.push_back(std::move(row));
  }
  if (ncols < 2) throw std::runtime_error(path + ": need at least one feature column");
  if (rows.empty()) throw std::runtime_error(path + ": no data rows");

  RegressionData data;
  data.design.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncols - 1));
  data.responses.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j + 1 < ncols; ++j) data.design(i, j) = rows[i][j];
    data.responses[static_cast<Eigen::Index>(i)] = rows[i][ncols - 1];
  }
  data.noise_var = noise_var;
  data.prior_var = prior_var;
  return data;
}

RegressionData synthetic_regression(int n, int p, double cond_number, double noise_var,
                                    double prior_var, RngStream& rng) {
  if (n < p || p < 1) throw std::invalid_argument("need n >= p >= 1");
  if (!(cond_number >= 1.0)) throw std::invalid_argument("condition number must be >= 1");

  Eigen::MatrixXd g(n, p);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < p; ++j) g(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q1 = qr.householderQ() * Eigen::MatrixXd::Identity(n, p);

  // Singular values sqrt(n) * cond^{-j/(p-1)}: exact condition number, column
  // energy comparable to iid-normal columns.
  Eigen::VectorXd s(p);
  for (int j = 0; j < p; ++j)
    s[j] = std::sqrt(static_cast<double>(n)) *
           (p == 1 ? 1.0 : std::pow(cond_number, -static_cast<double>(j) / (p - 1)));

  RegressionData data;
  data.design = q1 * s.asDiagonal();
  Eigen::VectorXd theta_true(p);
  for (int j = 0; j < p; ++j) theta_true[j] = std::sqrt(prior_var) * rng.normal();
  Eigen::VectorXd eps(n);
  for (int i = 0; i < n; ++i) eps[i] = std::sqrt(noise_var) * rng.normal();
  data.responses = data.design * theta_true + eps;
  data.noise_var = noise_var;
  data.prior_var = prior_var;
  return data;
}

LinearRegressionTarget::LinearRegressionTarget(RegressionData data)
    : Target(static_cast<int>(data.design.cols())), data_(std::move(data)) {
  if (data_.design.rows() != data_.responses.size())
    throw std::invalid_argument("design/response row mismatch");
  if (!(data_.noise_var > 0.0) || !(data_.prior_var > 0.0))
    throw std::invalid_argument("variances must be positive");

  const Eigen::MatrixXd a =
      data_.design.transpose() * data_.design / data_.noise_var +
      Eigen::MatrixXd::Identity(dim_, dim_) / data_.prior_var;
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("posterior precision is not positive definite");
  cov_ = llt.solve(Eigen::MatrixXd::Identity(dim_, dim_));
  mean_ = llt.solve(data_.design.transpose() * data_.responses / data_.noise_var);

  m2_ = cov_.diagonal() + mean_.cwiseProduct(mean_);
  // Gaussian: Var(x^2) = 2 s^4 + 4 m^2 s^2.
  var2_ = 2.0 * cov_.diagonal().cwiseProduct(cov_.diagonal()) +
          4.0 * mean_.cwiseProduct(mean_).cwiseProduct(cov_.diagonal());
}

double LinearRegressionTarget::log_density(const Eigen::VectorXd& theta) const {
  const Eigen::VectorXd r = data_.responses - data_.design * theta;
  return -0.5 * r.squaredNorm() / data_.noise_var -
         0.5 * theta.squaredNorm() / data_.prior_var;
}

Eigen::VectorXd LinearRegressionTarget::gradient(const Eigen::VectorXd& theta) const {
  return data_.design.transpose() * (data_.responses - data_.design * theta) /
             data_.noise_var -
         theta / data_.prior_var;
}

double LinearRegressionTarget::batch_log_density(const Eigen::VectorXd& theta,
                                                 std::span<const int> batch) const {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const double scale = static_cast<double>(dataset_size()) / static_cast<double>(batch.size());
  double ll = 0.0;
  for (int i : batch) {
    const double r = data_.responses[i] - data_.design.row(i).dot(theta);
    ll += -0.5 * r * r / data_.noise_var;
  }
  return scale * ll - 0.5 * theta.squaredNorm() / data_.prior_var;
}

Eigen::VectorXd LinearRegressionTarget::batch_gradient(const Eigen::VectorXd& theta,
                                                       std::span<const int> batch) const {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const double scale = static_cast<double>(dataset_size()) / static_cast<double>(batch.size());
  Eigen::VectorXd g = Eigen::VectorXd::Zero(dim_);
  for (int i : batch) {
    const double r = data_.responses[i] - data_.design.row(i).dot(theta);
    g += (r / data_.noise_var) * data_.design.row(i).transpose();
  }
  return scale * g - theta / data_.prior_var;
}

// ---------------------------------------------------------------------------
// Factories

TargetPtr make_icg(int dim, double cond_lo, double cond_hi, RngStream& rng) {
  if (!(0.0 < cond_lo && cond_lo < cond_hi))
    throw std::invalid_argument("need 0 < cond_lo < cond_hi");
  return std::make_shared<IcgTarget>(log_spaced(dim, cond_lo, cond_hi),
                                     random_rotation(dim, rng));
}

TargetPtr make_rosenbrock(int dim, double q) {
  return std::make_shared<RosenbrockTarget>(dim, q);
}

TargetPtr make_funnel(int dim) { return std::make_shared<FunnelTarget>(dim); }

TargetPtr make_gmm25(int dim) { return std::make_shared<Gmm25Target>(dim); }

TargetPtr make_linreg_target(RegressionData data) {
  return std::make_shared<LinearRegressionTarget>(std::move(data));
}

Eigen::MatrixXd random_rotation(int dim, RngStream& rng) {
  Eigen::MatrixXd a(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::VectorXd diag = qr.matrixQR().diagonal();
  for (int j = 0; j < dim; ++j)
    if (diag[j] < 0.0) q.col(j) *= -1.0;
  return q;
}

Eigen::VectorXd log_spaced(int dim, double lo, double hi) {
  if (dim < 2) throw std::invalid_argument("need dim >= 2");
  Eigen::VectorXd v(dim);
  const double llo = std::log(lo);
  const double lhi = std::log(hi);
  for (int i = 0; i < dim; ++i)
    v[i] = std::exp(llo + (lhi - llo) * static_cast<double>(i) / (dim - 1));
  return v;
}

// ---------------------------------------------------------------------------
// Noise injection

NoiseKind noise_kind_from_string(const std::string& s) {
  if (s == "none") return NoiseKind::none;
  if (s == "isotropic") return NoiseKind::isotropic;
  if (s == "diagonal") return NoiseKind::diagonal;
  if (s == "correlated") return NoiseKind::correlated;
  if (s == "spatially_varied") return NoiseKind::spatially_varied;
  throw std::invalid_argument("unknown noise kind: '" + s + "'");
}

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::isotropic: return "isotropic";
    case NoiseKind::diagonal: return "diagonal";
    case NoiseKind::correlated: return "correlated";
    case NoiseKind::spatially_varied: return "spatially_varied";
  }
  return "unknown";
}

NoiseSpec NoiseSpec::make(NoiseKind kind, int dim, double base_scale,
                          const Eigen::VectorXd& eigvals, RngStream& rotation_rng,
                          double spatial_std) {
  NoiseSpec spec;
  spec.kind = kind;
  spec.base_scale = base_scale;
  if (kind == NoiseKind::none) return spec;
  if (!(base_scale > 0.0)) throw std::invalid_argument("noise base_scale must be positive");
  if (kind == NoiseKind::isotropic) return spec;

  if (eigvals.size() != dim) throw std::invalid_argument("noise eigvals size mismatch");
  if ((eigvals.array() <= 0.0).any())
    throw std::invalid_argument("noise eigenvalues must be positive");
  spec.eigvals = eigvals;
  if (kind == NoiseKind::diagonal) return spec;

  spec.rotation = random_rotation(dim, rotation_rng);
  spec.factor = spec.rotation.transpose() *
                (base_scale * eigvals.array()).sqrt().matrix().asDiagonal();
  if (kind == NoiseKind::spatially_varied) {
    if (!(spatial_std > 0.0)) throw std::invalid_argument("spatial_std must be positive");
    if (dim < 2) throw std::invalid_argument("spatially varied noise needs dim >= 2");
    spec.spatial_std = spatial_std;
  }
  return spec;
}

Eigen::VectorXd inject_noise(const Eigen::VectorXd& grad, const Eigen::VectorXd& theta,
                             const NoiseSpec& spec, RngStream& rng) {
  const int d = static_cast<int>(grad.size());
  switch (spec.kind) {
    case NoiseKind::none:
      return grad;
    case NoiseKind::isotropic:
      return grad + std::sqrt(spec.base_scale) * rng.normal_vector(d);
    case NoiseKind::diagonal:
      return grad + (std::sqrt(spec.base_scale) *
                     spec.eigvals.array().sqrt() * rng.normal_vector(d).array())
                        .matrix();
    case NoiseKind::correlated:
      return grad + spec.factor * rng.normal_vector(d);
    case NoiseKind::spatially_varied: {
      const double amp = std::exp(-theta[1] / (2.0 * spec.spatial_std));
      return grad + amp * (spec.factor * rng.normal_vector(d));
    }
  }
  throw std::logic_error("unreachable");
}

}  // namespace smile
