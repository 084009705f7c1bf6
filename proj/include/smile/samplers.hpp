#pragma once

#include <limits>
#include <memory>
#include <vector>

#include "smile/dynamics.hpp"
#include "smile/targets.hpp"

namespace smile {

/// Diagonal gradient-noise statistics: EMA mean and elementwise EMA std of
/// the stochastic gradient stream. Raw EMAs are stored; mean()/std() apply
/// the 1/(1 - (1-alpha)^t) warmup bias correction.
struct PrecondState {
  Eigen::VectorXd g_bar;
  Eigen::VectorXd sigma;
  double alpha = 0.01;
  long step_count = 0;

  static PrecondState zero(int d, double alpha = 0.01);
  double correction() const {
    return 1.0 - std::pow(1.0 - alpha, static_cast<double>(step_count));
  }
  Eigen::VectorXd mean() const;
  Eigen::VectorXd std() const;
};

/// EMA update: mean first, then the elementwise std EMA against the new mean.
PrecondState precond_update(PrecondState p, const Eigen::VectorXd& grad);

/// Coordinate scales s = (sqrt(d)/||sigma||) sigma (after flooring sigma at
/// 1e-8 max(sigma); identity when all sigma < 1e-12) and the gradient mapped
/// into the scaled coordinates, grad / s. ||s||^2 = d by construction.
std::pair<Eigen::VectorXd, Eigen::VectorXd> precondition(const Eigen::VectorXd& grad,
                                                         const PrecondState& p, int d);

struct SamplerConfig {
  double step_size = 0.1;
  int batch_size = 0;    // 0 or dataset_size = full batch
  int dataset_size = 0;  // resolved from the target when mini-batching
  double decoherence_length = std::numeric_limits<double>::infinity();
  NoiseSpec noise;
  bool precondition = false;
  bool redraw_per_substep = false;  // fresh noise/batch per momentum substep
  double friction = 0.1;            // sghmc
  double precond_alpha = 0.01;
};

/// The effective potential for one step: exact log-density, injected-noise
/// log-density log p + eps' theta, or the (N/B)-scaled mini-batch
/// log-posterior with the batch fixed at begin_step.
class GradientSource final : public StepPotential {
 public:
  enum class Mode { exact, injected, minibatch };

  GradientSource(TargetPtr target, const SamplerConfig& cfg);

  void begin_step(const Eigen::VectorXd& theta, RngStream& rng);
  Mode mode() const { return mode_; }
  bool stationary() const { return mode_ == Mode::exact; }

  double value(const Eigen::VectorXd& theta) const override;
  Eigen::VectorXd grad(const Eigen::VectorXd& theta) const override;
  void next_substep() override;

 private:
  void redraw();

  TargetPtr target_;
  Mode mode_ = Mode::exact;
  NoiseSpec noise_;
  int batch_size_ = 0;
  bool redraw_per_substep_ = false;

  Eigen::VectorXd eps_;          // injected-noise draw for the current step
  std::vector<int> batch_;       // current mini-batch
  std::vector<int> perm_;        // partial Fisher-Yates workspace
  Eigen::VectorXd theta_start_;  // position at the last (re)draw
  RngStream* rng_ = nullptr;     // valid between begin_step and step end
};

/// Fresh chain state at the target's init position with a random unit
/// momentum and caches evaluated against the exact target.
ChainState init_chain_state(const Target& target, double step_size, RngStream& rng);

/// Full-batch MCLMC: half partial refresh, minimal-norm step with exact
/// gradients, half partial refresh.
StepOutcome mclmc_step(const ChainState& state, const Target& target,
                       const SamplerConfig& cfg, RngStream& rng);

/// Stochastic-gradient microcanonical step without explicit noise injection;
/// the mini-batch (or injected) noise is the only randomness. No refresh
/// unless a finite decoherence length is configured.
StepOutcome smile_naive_step(const ChainState& state, TargetPtr target,
                             const SamplerConfig& cfg, RngStream& rng);

/// Preconditioned variant: queries the stochastic gradient once, updates the
/// noise EMAs, freezes the coordinate scales, and integrates in the scaled
/// coordinates. Returns the outcome and the updated statistics.
std::pair<StepOutcome, PrecondState> psmile_step(const ChainState& state, TargetPtr target,
                                                 const SamplerConfig& cfg,
                                                 const PrecondState& p, RngStream& rng);

/// theta <- theta + (h/2) g + sqrt(h) z with the stochastic gradient g.
/// Caches are not refreshed; SGLD never reads them.
ChainState sgld_step(const ChainState& state, TargetPtr target, const SamplerConfig& cfg,
                     RngStream& rng);

/// v <- (1 - C h) v + h g + sqrt(2 C h) z; theta <- theta + h v.
ChainState sghmc_step(const ChainState& state, Eigen::VectorXd& velocity, TargetPtr target,
                      const SamplerConfig& cfg, RngStream& rng);

enum class SamplerKind { mclmc, smile_naive, psmile, sgld, sghmc };

SamplerKind sampler_kind_from_string(const std::string& s);
std::string to_string(SamplerKind k);

/// True for samplers whose steps carry an energy error (tunable kernels).
bool has_energy_accounting(SamplerKind k);

/// One chain's sampler with its private state (noise source, preconditioner
/// statistics, velocity). step() does not mutate the passed state; callers
/// decide what to accept.
class SamplerKernel {
 public:
  virtual ~SamplerKernel() = default;
  virtual StepOutcome step(const ChainState& state, RngStream& rng) = 0;
};

std::unique_ptr<SamplerKernel> make_kernel(SamplerKind kind, TargetPtr target,
                                           const SamplerConfig& cfg);

}  // namespace smile
