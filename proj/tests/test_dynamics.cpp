#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "smile/dynamics.hpp"
#include "smile/targets.hpp"

using namespace smile;

namespace {

/// Direct cosh/sinh evaluation of the momentum map, independent of the
/// overflow-safe production form.
std::pair<Eigen::VectorXd, double> momentum_update_naive(const Eigen::VectorXd& u,
                                                         const Eigen::VectorXd& grad,
                                                         double eps, int d) {
  const double gnorm = grad.norm();
  if (gnorm == 0.0) return {u, 0.0};
  const double delta = eps * gnorm / (d - 1);
  const Eigen::VectorXd e = grad / gnorm;
  const double ue = e.dot(u);
  const double denom = std::cosh(delta) + ue * std::sinh(delta);
  Eigen::VectorXd b = (u + (std::sinh(delta) + ue * (std::cosh(delta) - 1.0)) * e) / denom;
  return {b.normalized(), std::log(denom)};
}

class QuadraticPotential final : public StepPotential {
 public:
  explicit QuadraticPotential(const Target& t) : target_(t) {}
  double value(const Eigen::VectorXd& x) const override { return target_.log_density(x); }
  Eigen::VectorXd grad(const Eigen::VectorXd& x) const override { return target_.gradient(x); }

 private:
  const Target& target_;
};

class ConstantPotential final : public StepPotential {
 public:
  explicit ConstantPotential(int d) : d_(d) {}
  double value(const Eigen::VectorXd&) const override { return 3.25; }
  Eigen::VectorXd grad(const Eigen::VectorXd&) const override {
    return Eigen::VectorXd::Zero(d_);
  }

 private:
  int d_;
};

// Linear ramp whose log-density turns NaN past x0 = 1; the constant gradient
// steers the momentum into that region deterministically.
class NanBeyondPotential final : public StepPotential {
 public:
  double value(const Eigen::VectorXd& x) const override {
    if (x[0] > 1.0) return std::numeric_limits<double>::quiet_NaN();
    return x[0];
  }
  Eigen::VectorXd grad(const Eigen::VectorXd& x) const override {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(x.size());
    g[0] = 1.0;
    return g;
  }
};

ChainState state_at(const Eigen::VectorXd& pos, const Eigen::VectorXd& u,
                    StepPotential& pot, double dt) {
  ChainState s;
  s.position = pos;
  s.momentum_dir = u;
  s.log_density = pot.value(pos);
  s.grad = pot.grad(pos);
  s.step_size = dt;
  return s;
}

}  // namespace

TEST_CASE("momentum update fixes the gradient direction") {
  const int d = 5;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(d);
  grad[2] = 4.0;  // e = (0,0,1,0,0)
  Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
  e[2] = 1.0;
  auto [u2, lf] = momentum_update(e, grad, 0.7, d);
  CHECK((u2 - e).norm() < 1e-14);
  CHECK(lf > 0.0);
}

TEST_CASE("zero gradient is the identity with zero log factor") {
  const int d = 4;
  RngStream rng(3);
  const Eigen::VectorXd u = rng.unit_vector(d);
  auto [u2, lf] = momentum_update(u, Eigen::VectorXd::Zero(d), 0.3, d);
  CHECK(u2 == u);
  CHECK(lf == 0.0);
}

TEST_CASE("2-d example matches the scalar formula") {
  // e = (0,1) and delta = 0.1 via |grad| = 1, eps = 0.1.
  Eigen::VectorXd u(2), grad(2);
  u << 1.0, 0.0;
  grad << 0.0, 1.0;
  auto [u2, lf] = momentum_update(u, grad, 0.1, 2);
  Eigen::Vector2d expect(1.0 / std::cosh(0.1), std::sinh(0.1) / std::cosh(0.1));
  expect.normalize();
  CHECK(u2[0] == doctest::Approx(expect[0]).epsilon(1e-12));
  CHECK(u2[1] == doctest::Approx(expect[1]).epsilon(1e-12));
  CHECK(lf == doctest::Approx(std::log(std::cosh(0.1))).epsilon(1e-12));
}

TEST_CASE("overflow-safe form agrees with the direct evaluation") {
  RngStream rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int d = 2 + static_cast<int>(rng.below(6));
    const Eigen::VectorXd u = rng.unit_vector(d);
    const Eigen::VectorXd grad = 3.0 * rng.normal_vector(d);
    const double eps = 0.5 * rng.uniform();
    auto [ua, la] = momentum_update(u, grad, eps, d);
    auto [ub, lb] = momentum_update_naive(u, grad, eps, d);
    CHECK((ua - ub).norm() < 1e-12);
    CHECK(la == doctest::Approx(lb).epsilon(1e-12));
  }
}

TEST_CASE("zero momentum restarts along the gradient direction") {
  const int d = 3;
  Eigen::VectorXd grad(d);
  grad << 2.0, 0.0, 0.0;
  auto [u2, lf] = momentum_update(Eigen::VectorXd::Zero(d), grad, 0.5, d);
  CHECK(u2[0] == doctest::Approx(1.0));
  CHECK(u2.norm() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(lf == doctest::Approx(std::log(std::cosh(0.5 * 2.0 / (d - 1)))).epsilon(1e-12));
}

TEST_CASE("momentum update stays bounded for huge gradients") {
  const int d = 3;
  Eigen::VectorXd grad(d);
  grad << -1e8, 2e7, 0.0;
  RngStream rng(4);
  auto [u2, lf] = momentum_update(rng.unit_vector(d), grad, 1.0, d);
  CHECK(u2.allFinite());
  CHECK(u2.norm() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(std::isfinite(lf));
}

TEST_CASE("momentum update error cases") {
  Eigen::VectorXd u(2), g(2);
  u << 1.0, 0.0;
  g << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_WITH_AS(momentum_update(u, g, 0.1, 2), "non-finite gradient",
                       std::invalid_argument);
  g << 1.0, 1.0;
  CHECK_THROWS_WITH_AS(momentum_update(u, g, 0.1, 1), "dimension too small",
                       std::invalid_argument);
}

TEST_CASE("position update basics") {
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(4);
  Eigen::VectorXd e1 = Eigen::VectorXd::Unit(4, 0);
  CHECK(position_update(theta, e1, 0.0) == theta);
  const Eigen::VectorXd moved = position_update(theta, e1, 0.5);
  CHECK(moved[0] == 0.5);
  CHECK(moved.tail(3).norm() == 0.0);
  // Two half steps equal one full step.
  const Eigen::VectorXd half2 = position_update(position_update(theta, e1, 0.25), e1, 0.25);
  CHECK((half2 - moved).norm() < 1e-16);
}

TEST_CASE("integrator coefficients are normalized") {
  const double b1 = kMinimalNormB1;
  const double b2 = 1.0 - 2.0 * b1;
  CHECK(2.0 * b1 + b2 == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(b2 > 0.0);
}

TEST_CASE("energy error shrinks ~8x when the step is halved") {
  // 2-d standard Gaussian, exact gradients, no refresh.
  RngStream rng(11);
  auto target = std::make_shared<IcgTarget>(Eigen::VectorXd::Ones(2),
                                            Eigen::MatrixXd::Identity(2, 2));
  QuadraticPotential pot(*target);

  auto mean_abs_de = [&](double dt) {
    Eigen::VectorXd pos(2);
    pos << 1.3, -0.4;
    Eigen::VectorXd u(2);
    u << 0.6, 0.8;
    ChainState s = state_at(pos, u, pot, dt);
    double total = 0.0;
    for (int t = 0; t < 1000; ++t) {
      StepOutcome out = integrator_step(s, pot);
      total += std::abs(out.energy_delta);
      s = out.new_state;
    }
    return total / 1000.0;
  };

  const double ratio = mean_abs_de(0.2) / mean_abs_de(0.1);
  CHECK(ratio > 6.0);
  CHECK(ratio < 10.0);
}

TEST_CASE("energy error is third order in the step size") {
  RngStream rng(42);
  TargetPtr target = make_icg(10, 0.01, 100.0, rng);
  QuadraticPotential pot(*target);

  std::vector<double> dts = {0.05, 0.025, 0.0125};
  std::vector<double> log_dt, log_de;
  for (double dt : dts) {
    RngStream chain_rng(7);
    ChainState s = state_at(Eigen::VectorXd::Zero(10), chain_rng.unit_vector(10), pot, dt);
    double total = 0.0;
    for (int t = 0; t < 1000; ++t) {
      StepOutcome out = integrator_step(s, pot);
      total += std::abs(out.energy_delta);
      s = out.new_state;
    }
    log_dt.push_back(std::log(dt));
    log_de.push_back(std::log(total / 1000.0));
  }
  // Least-squares slope over the three points.
  const int n = 3;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    sx += log_dt[i];
    sy += log_de[i];
    sxx += log_dt[i] * log_dt[i];
    sxy += log_dt[i] * log_de[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  CHECK(slope > 2.7);
  CHECK(slope < 3.3);
}

TEST_CASE("momentum stays on the unit sphere through integration") {
  RngStream rng(5);
  TargetPtr target = make_icg(6, 0.1, 10.0, rng);
  QuadraticPotential pot(*target);
  ChainState s = state_at(Eigen::VectorXd::Zero(6), rng.unit_vector(6), pot, 0.05);
  for (int t = 0; t < 500; ++t) {
    StepOutcome out = integrator_step(s, pot);
    CHECK(std::abs(out.new_state.momentum_dir.norm() - 1.0) < 1e-10);
    s = out.new_state;
  }
}

TEST_CASE("deterministic core is reversible") {
  RngStream rng(21);
  TargetPtr target = make_icg(10, 0.01, 100.0, rng);
  QuadraticPotential pot(*target);

  ChainState a = state_at(0.3 * rng.normal_vector(10), rng.unit_vector(10), pot, 0.02);
  ChainState s = a;
  for (int t = 0; t < 50; ++t) s = integrator_step(s, pot).new_state;

  s.momentum_dir = -s.momentum_dir;
  for (int t = 0; t < 50; ++t) s = integrator_step(s, pot).new_state;

  const double rel = (s.position - a.position).norm() / a.position.norm();
  CHECK(rel < 1e-8);
  CHECK((s.momentum_dir + a.momentum_dir).norm() < 1e-8);
}

TEST_CASE("a constant log-density moves in a straight line with zero energy error") {
  ConstantPotential pot(3);
  RngStream rng(9);
  const Eigen::VectorXd u0 = rng.unit_vector(3);
  ChainState s = state_at(Eigen::VectorXd::Zero(3), u0, pot, 0.25);
  for (int t = 1; t <= 20; ++t) {
    StepOutcome out = integrator_step(s, pot);
    CHECK(out.energy_delta == 0.0);
    CHECK(out.kinetic_log_factor == 0.0);
    s = out.new_state;
    CHECK((s.position - 0.25 * t * u0).norm() < 1e-12);
    CHECK(s.momentum_dir == u0);
  }
}

TEST_CASE("non-finite endpoint raises a divergent step") {
  NanBeyondPotential pot;
  Eigen::VectorXd pos = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd u(2);
  u << 0.0, 1.0;  // the gradient rotates u toward +x, moving the endpoint past 1
  ChainState s = state_at(pos, u, pot, 10.0);
  CHECK_THROWS_AS(integrator_step(s, pot), DivergentStep);
}

TEST_CASE("partial refresh basics") {
  RngStream rng(8);
  const Eigen::VectorXd u = rng.unit_vector(8);

  SUBCASE("infinite decoherence length is the identity") {
    RngStream r2(1);
    CHECK(partial_refresh(u, std::numeric_limits<double>::infinity(), 0.1, r2) == u);
  }
  SUBCASE("output is always unit norm") {
    RngStream r2(2);
    for (int i = 0; i < 200; ++i) {
      const Eigen::VectorXd v = partial_refresh(u, 2.0, 0.1, r2);
      CHECK(std::abs(v.norm() - 1.0) < 1e-12);
    }
  }
  SUBCASE("tiny decoherence length decorrelates directions") {
    RngStream r2(3);
    Eigen::VectorXd v = u;
    double acc = 0.0;
    const int n = 4000;
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd w = partial_refresh(v, 1e-3, 0.1, r2);
      acc += v.dot(w);
      v = w;
    }
    CHECK(std::abs(acc / n) < 0.05);
  }
  SUBCASE("refresh from a zero momentum still yields a unit vector") {
    RngStream r2(4);
    const Eigen::VectorXd v = partial_refresh(Eigen::VectorXd::Zero(8), 2.0, 0.1, r2);
    CHECK(std::abs(v.norm() - 1.0) < 1e-12);
  }
}
