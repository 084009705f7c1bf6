#include "smile/tuner.hpp"

#include <cmath>

namespace smile {

EnergyStats update_energy_ema(EnergyStats s, double abs_de) {
  if (!(abs_de >= 0.0)) throw std::invalid_argument("|dE| must be non-negative");
  s.mu = (1.0 - s.beta) * s.mu + s.beta * abs_de;
  const double dev = abs_de - s.mu;  // deviation from the updated mean
  const double var = (1.0 - s.beta) * s.sigma * s.sigma + s.beta * dev * dev;
  s.sigma = std::sqrt(var);
  s.t += 1;
  return s;
}

std::pair<double, double> fit_gamma(double mu, double sigma, bool transposed) {
  if (!(mu > 0.0) || !(sigma > 0.0))
    throw std::domain_error("insufficient statistics");
  if (transposed) return {sigma * sigma / mu, (mu / sigma) * (mu / sigma)};
  return {(mu / sigma) * (mu / sigma), sigma * sigma / mu};
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("p must be in (0,1)");

  // Acklam's rational approximation with one Halley refinement step.
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double dd[] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((dd[0] * q + dd[1]) * q + dd[2]) * q + dd[3]) * q + 1.0);
  }
  // Halley refinement against erfc.
  const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
  const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

double gamma_quantile_wh(double p, double shape, double scale) {
  if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("p must be in (0,1)");
  if (!(shape > 0.0) || !(scale > 0.0))
    throw std::invalid_argument("shape and scale must be positive");
  const double z = normal_quantile(p);
  const double t = 1.0 - 1.0 / (9.0 * shape) + z / (3.0 * std::sqrt(shape));
  const double q = scale * shape * t * t * t;
  return q > 0.0 ? q : 0.0;
}

std::pair<ChainState, bool> guardrail(const ChainState& state_prev,
                                      const StepOutcome& outcome,
                                      const EnergyStats& s, const TunerConfig& cfg) {
  const bool diverged = !std::isfinite(outcome.energy_delta) ||
                        !std::isfinite(outcome.new_state.log_density);
  bool reject = diverged;
  if (!reject && s.fitted()) {
    const double threshold = gamma_quantile_wh(cfg.kappa, s.shape, s.scale);
    reject = std::abs(outcome.energy_delta) > threshold;
  }
  if (!reject) return {outcome.new_state, false};

  ChainState reset;
  reset.position = state_prev.position;
  reset.momentum_dir = Eigen::VectorXd::Zero(state_prev.position.size());
  reset.log_density = state_prev.log_density;
  reset.grad = state_prev.grad;
  reset.step_size = state_prev.step_size;
  return {std::move(reset), true};
}

double adapt_step(double eta, double abs_de, const EnergyStats& s,
                  const TunerConfig& cfg) {
  if (!s.fitted()) return eta;
  const double tau_lo = gamma_quantile_wh(cfg.adapt_prob / 3.0, s.shape, s.scale);
  const double tau_hi =
      gamma_quantile_wh(1.0 - 2.0 * cfg.adapt_prob / 3.0, s.shape, s.scale);
  if (abs_de < tau_lo) return eta * (1.0 + cfg.delta);
  if (abs_de > tau_hi) return eta * (1.0 - cfg.delta);
  return eta;
}

Tuner::Result Tuner::process(const ChainState& prev, StepOutcome outcome,
                             bool diverged) {
  if (diverged) {
    // Ensure the guardrail sees the divergence even if the thrown step left
    // a partially-filled outcome behind.
    outcome.energy_delta = std::numeric_limits<double>::infinity();
    outcome.new_state = prev;
  }
  const double abs_de = std::abs(outcome.energy_delta);
  const bool warm = steps_seen_ >= cfg_.warmup_steps;

  // Fit from the pre-update EMAs so the current step cannot move its own
  // thresholds.
  stats_.shape = 0.0;
  stats_.scale = 0.0;
  if (warm && stats_.mean() > 0.0 && stats_.std() > 0.0) {
    std::tie(stats_.shape, stats_.scale) =
        fit_gamma(stats_.mean(), stats_.std(), cfg_.gamma_fit_transposed);
  }

  if (std::isfinite(abs_de)) stats_ = update_energy_ema(stats_, abs_de);

  Result res;
  res.abs_de = abs_de;
  if (diverged || warm) {
    std::tie(res.state, res.reset) = guardrail(prev, outcome, stats_, cfg_);
  } else {
    res.state = std::move(outcome.new_state);
  }
  if (res.reset) ++resets_;

  double eta = prev.step_size;
  if (warm) eta = adapt_step(eta, abs_de, stats_, cfg_);
  res.state.step_size = eta;

  ++steps_seen_;
  return res;
}

}  // namespace smile
