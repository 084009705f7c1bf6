#pragma once

#include <utility>

#include "smile/dynamics.hpp"

namespace smile {

/// Online model of |dE|: exponential moving averages of its mean and standard
/// deviation plus the most recent Gamma fit. Raw EMAs are stored; mean()/std()
/// apply the 1/(1 - (1-beta)^t) warmup bias correction.
struct EnergyStats {
  double mu = 0.0;     // raw EMA of |dE|
  double sigma = 0.0;  // raw EMA std of |dE|
  double beta = 0.01;
  long t = 0;
  double shape = 0.0;  // last Gamma fit; 0 until fitted
  double scale = 0.0;

  double correction() const { return 1.0 - std::pow(1.0 - beta, static_cast<double>(t)); }
  double mean() const { return t == 0 ? 0.0 : mu / correction(); }
  double std() const { return t == 0 ? 0.0 : sigma / std::sqrt(correction()); }
  bool fitted() const { return shape > 0.0 && scale > 0.0; }
};

struct TunerConfig {
  double kappa = 0.98;      // guardrail quantile
  double adapt_prob = 0.1;  // a: total step-adaptation probability
  double delta = 0.02;      // multiplicative step factor
  double beta = 0.01;       // EMA smoothing
  int warmup_steps = 50;    // record-only steps before resets/adaptation engage
  bool gamma_fit_transposed = false;  // swap the moment-matching assignment
};

/// EMA update: mean first, then the std EMA against the new mean.
EnergyStats update_energy_ema(EnergyStats s, double abs_de);

/// Moment-matching Gamma fit. Default: shape = mu^2/sigma^2, scale =
/// sigma^2/mu (matches mean and variance). Transposed: shape = sigma^2/mu,
/// scale = (mu/sigma)^2 (matches the mean only). Throws "insufficient
/// statistics" unless both inputs are positive.
std::pair<double, double> fit_gamma(double mu, double sigma, bool transposed = false);

/// Wilson-Hilferty approximation of the Gamma quantile function, clamped
/// below at zero.
double gamma_quantile_wh(double p, double shape, double scale);

/// Standard normal quantile (Acklam's rational approximation, |rel err| ~ 1e-9).
double normal_quantile(double p);

/// Quantile-thresholded rejection: if |dE| exceeded the fitted kappa-quantile
/// or the step diverged (non-finite energy or log-density), roll the position
/// back and zero the momentum. Pass-through accept while unfitted.
std::pair<ChainState, bool> guardrail(const ChainState& state_prev,
                                      const StepOutcome& outcome,
                                      const EnergyStats& s, const TunerConfig& cfg);

/// Multiplicative step adaptation: grow by (1+delta) below the a/3 quantile,
/// shrink by (1-delta) above the 1-2a/3 quantile. No-op while unfitted.
double adapt_step(double eta, double abs_de, const EnergyStats& s,
                  const TunerConfig& cfg);

struct TunerTraceRow {
  long step = 0;
  double eta = 0.0;
  double mu = 0.0;
  double sigma = 0.0;
  double shape = 0.0;
  double scale = 0.0;
  bool reset = false;
};

/// Per-chain composition of the energy-variance tuning loop: fit the Gamma
/// from the pre-update EMAs, update the EMAs, apply the guardrail, then adapt
/// the step size. The first warmup_steps steps only record.
class Tuner {
 public:
  explicit Tuner(const TunerConfig& cfg) : cfg_(cfg) { stats_.beta = cfg.beta; }

  struct Result {
    ChainState state;
    bool reset = false;
    double abs_de = 0.0;
  };

  /// Processes one proposed step. `diverged` marks a step that threw
  /// DivergentStep; `outcome` is ignored in that case except for rollback.
  Result process(const ChainState& prev, StepOutcome outcome, bool diverged);

  const EnergyStats& stats() const { return stats_; }
  const TunerConfig& config() const { return cfg_; }
  long steps_seen() const { return steps_seen_; }
  long resets() const { return resets_; }

 private:
  TunerConfig cfg_;
  EnergyStats stats_;
  long steps_seen_ = 0;
  long resets_ = 0;
};

}  // namespace smile
