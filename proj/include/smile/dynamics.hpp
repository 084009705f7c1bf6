#pragma once

#include <stdexcept>
#include <utility>

#include <Eigen/Core>

#include "smile/rng.hpp"

namespace smile {

/// State of one chain: position theta, unit momentum direction u, the current
/// step size, and cached log-density/gradient of the bound potential at the
/// position. The momentum direction has unit norm except transiently after a
/// guardrail reset, which zeroes it; the next momentum update restores it to
/// the sphere.
struct ChainState {
  Eigen::VectorXd position;
  Eigen::VectorXd momentum_dir;
  double log_density = 0.0;
  Eigen::VectorXd grad;
  double step_size = 0.0;
};

/// Result of one full integrator step. kinetic_log_factor is the sum of
/// log(cosh d + e'u sinh d) over the three momentum substeps; energy_delta is
/// the change in log density over the step minus (d-1) times that sum.
struct StepOutcome {
  ChainState new_state;
  double energy_delta = 0.0;
  double kinetic_log_factor = 0.0;
};

/// Thrown when a step reaches a non-finite log-density or gradient. A tuner
/// may respond with a guardrail reset; untunable runs abort the chain.
class DivergentStep : public std::runtime_error {
 public:
  DivergentStep() : std::runtime_error("divergent step") {}
};

/// Effective log-density for the duration of one integrator step. Stochastic
/// sources fix their noise draw or mini-batch when the step begins;
/// next_substep() lets a source re-randomize between momentum substeps when
/// that mode is enabled (off by default).
class StepPotential {
 public:
  virtual ~StepPotential() = default;
  virtual double value(const Eigen::VectorXd& theta) const = 0;
  virtual Eigen::VectorXd grad(const Eigen::VectorXd& theta) const = 0;
  virtual void next_substep() {}
};

struct IntegratorOptions {
  /// Elementwise 1/s for running the dynamics in preconditioned coordinates
  /// theta' = s . theta: momentum substeps see grad . inv_scale and position
  /// substeps move by eps * (u . inv_scale). Null = identity.
  const Eigen::VectorXd* inv_scale = nullptr;
  /// Gradient of the potential at the starting position, if the caller
  /// already has it (cached from the previous step or queried for a
  /// preconditioner update). Null = evaluate.
  const Eigen::VectorXd* first_grad = nullptr;
  /// Log density at the starting position; NaN = evaluate.
  double first_value = std::numeric_limits<double>::quiet_NaN();
};

// Minimal-norm 5-stage coefficients; a1 = 0.5, b2 = 1 - 2 b1.
inline constexpr double kMinimalNormB1 = 0.1931833275037836;

/// Momentum-direction update for a substep of duration eps: the exact
/// time-eps flow of du = (I - uu') grad/(d-1) dt for a frozen gradient, with
/// e = grad/|grad| and delta = eps |grad|/(d-1). Returns the new unit
/// direction and log(cosh delta + e'u sinh delta) evaluated at the incoming
/// u. A zero gradient is the identity; a zero u (post-reset) maps to e.
std::pair<Eigen::VectorXd, double> momentum_update(const Eigen::VectorXd& u,
                                                   const Eigen::VectorXd& grad,
                                                   double eps, int d);

/// theta + eps * u.
Eigen::VectorXd position_update(const Eigen::VectorXd& theta,
                                const Eigen::VectorXd& u, double eps);

/// One full P(b1)-Q(a1)-P(b2)-Q(a1)-P(b1) step of duration state.step_size.
/// Each momentum substep queries the potential's gradient at the current
/// position. Throws DivergentStep on a non-finite gradient or endpoint
/// log-density.
StepOutcome integrator_step(const ChainState& state, StepPotential& pot,
                            const IntegratorOptions& opts = {});

/// Partial momentum refresh u <- normalize(u + nu z) with
/// nu = sqrt(exp(2 dt / L) - 1) / sqrt(d). L = infinity is the identity and
/// consumes no randomness.
Eigen::VectorXd partial_refresh(const Eigen::VectorXd& u, double decoherence_length,
                                double dt, RngStream& rng);

}  // namespace smile
