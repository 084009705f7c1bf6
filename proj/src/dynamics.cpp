#include "smile/dynamics.hpp"

#include <cmath>
#include <limits>

namespace smile {

std::pair<Eigen::VectorXd, double> momentum_update(const Eigen::VectorXd& u,
                                                   const Eigen::VectorXd& grad,
                                                   double eps, int d) {
  if (d < 2) throw std::invalid_argument("dimension too small");
  if (!grad.allFinite()) throw std::invalid_argument("non-finite gradient");

  const double gnorm = grad.norm();
  if (gnorm == 0.0) return {u, 0.0};

  const double delta = eps * gnorm / static_cast<double>(d - 1);
  // e is the drift direction of the momentum flow du = (I - uu')g/(d-1) dt:
  // the normalized log-density gradient. The update is the exact time-eps
  // flow for a frozen gradient, which rotates u toward e.
  const Eigen::VectorXd e = grad / gnorm;
  const double ue = e.dot(u);

  // zeta = exp(-delta) keeps every term bounded for large delta; the update
  // equals the exact flow map up to the positive factor 2 exp(-delta), which
  // normalization removes.
  const double zeta = std::exp(-delta);
  Eigen::VectorXd unew =
      e * ((1.0 - zeta) * (1.0 + zeta + ue * (1.0 - zeta))) + u * (2.0 * zeta);
  const double nrm = unew.norm();

  // log(cosh delta + ue sinh delta), evaluated without overflow.
  const double arg = 1.0 + ue + (1.0 - ue) * zeta * zeta;
  const double log_factor =
      arg > 0.0 ? delta - std::log(2.0) + std::log(arg) : -delta;

  if (nrm == 0.0) return {u, log_factor};  // u = 0 with delta = 0
  return {unew / nrm, log_factor};
}

Eigen::VectorXd position_update(const Eigen::VectorXd& theta,
                                const Eigen::VectorXd& u, double eps) {
  return theta + eps * u;
}

namespace {

Eigen::VectorXd scaled(const Eigen::VectorXd& v, const Eigen::VectorXd* inv) {
  return inv ? v.cwiseProduct(*inv).eval() : v;
}

}  // namespace

StepOutcome integrator_step(const ChainState& state, StepPotential& pot,
                            const IntegratorOptions& opts) {
  const int d = static_cast<int>(state.position.size());
  const double dt = state.step_size;
  const double b1 = kMinimalNormB1;
  const double b2 = 1.0 - 2.0 * b1;
  const double a1 = 0.5;

  const double v0 = std::isnan(opts.first_value) ? pot.value(state.position)
                                                 : opts.first_value;
  if (!std::isfinite(v0)) throw DivergentStep();

  Eigen::VectorXd theta = state.position;
  Eigen::VectorXd u = state.momentum_dir;
  Eigen::VectorXd g = opts.first_grad ? *opts.first_grad : pot.grad(theta);
  if (!g.allFinite()) throw DivergentStep();

  double kinetic = 0.0;
  double lf = 0.0;

  std::tie(u, lf) = momentum_update(u, scaled(g, opts.inv_scale), b1 * dt, d);
  kinetic += lf;
  theta += (a1 * dt) * scaled(u, opts.inv_scale);

  pot.next_substep();
  g = pot.grad(theta);
  if (!g.allFinite()) throw DivergentStep();
  std::tie(u, lf) = momentum_update(u, scaled(g, opts.inv_scale), b2 * dt, d);
  kinetic += lf;
  theta += (a1 * dt) * scaled(u, opts.inv_scale);

  pot.next_substep();
  g = pot.grad(theta);  // endpoint gradient, cached in the new state
  if (!g.allFinite()) throw DivergentStep();
  std::tie(u, lf) = momentum_update(u, scaled(g, opts.inv_scale), b1 * dt, d);
  kinetic += lf;

  const double v1 = pot.value(theta);
  if (!std::isfinite(v1)) throw DivergentStep();

  StepOutcome out;
  out.kinetic_log_factor = kinetic;
  out.energy_delta = (v1 - v0) - static_cast<double>(d - 1) * kinetic;
  out.new_state.position = std::move(theta);
  out.new_state.momentum_dir = std::move(u);
  out.new_state.log_density = v1;
  out.new_state.grad = std::move(g);
  out.new_state.step_size = dt;
  return out;
}

Eigen::VectorXd partial_refresh(const Eigen::VectorXd& u, double decoherence_length,
                                double dt, RngStream& rng) {
  if (!(decoherence_length > 0.0)) throw std::invalid_argument("decoherence length must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("refresh duration must be positive");
  const int d = static_cast<int>(u.size());
  const double nu =
      std::sqrt(std::expm1(2.0 * dt / decoherence_length) / static_cast<double>(d));
  if (nu == 0.0) return u;
  if (!std::isfinite(nu)) return rng.unit_vector(d);  // fully decohered
  Eigen::VectorXd z = rng.normal_vector(d);
  Eigen::VectorXd mixed = u + nu * z;
  const double nrm = mixed.norm();
  if (nrm == 0.0) return rng.unit_vector(d);
  return mixed / nrm;
}

}  // namespace smile
