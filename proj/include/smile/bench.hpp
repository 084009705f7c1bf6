#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "smile/metrics.hpp"
#include "smile/samplers.hpp"
#include "smile/tuner.hpp"

namespace smile {

/// Configuration error with a JSON-pointer-style location, reported to the
/// CLI with exit code 1.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& where, const std::string& what)
      : std::runtime_error("config error at " + where + ": " + what) {}
};

enum class TargetKind { icg, rosenbrock, funnel, gmm25, linreg };

TargetKind target_kind_from_string(const std::string& s);
std::string to_string(TargetKind k);

struct TargetConfig {
  TargetKind kind = TargetKind::icg;
  int dim = 10;
  double cond_lo = 0.01;   // icg
  double cond_hi = 100.0;  // icg
  double q = 0.1;          // rosenbrock
  int n = 1024;            // linreg
  double cond = 1.0;       // linreg design condition number
  double noise_var = 1.0;  // linreg
  double prior_var = 1.0;  // linreg
  std::string csv;         // linreg: load instead of synthesizing
};

struct MetricConfig {
  std::optional<BiasAggregation> aggregation;  // default: max for funnel, mean otherwise
  double coverage_radius = 0.0;                // 0 = default 3 sqrt(0.3)
  int coverage_min_hits = 10;
  int n_boot = 1000;
  bool per_chain_bias = false;  // also emit per-chain aggregates (diagnostics)
};

struct SamplerParams {
  double decoherence_length = std::numeric_limits<double>::infinity();
  int batch_size = 0;
  double friction = 0.1;
  bool redraw_per_substep = false;
  double precond_alpha = 0.01;
};

struct ExperimentConfig {
  TargetConfig target;
  NoiseKind noise_kind = NoiseKind::none;
  double noise_base_scale = 256.0;
  SamplerKind sampler = SamplerKind::smile_naive;
  int chains = 10;
  long steps = 200000;
  double burn_in_frac = 0.1;
  std::vector<double> step_grid;  // resolved; empty means coarse decades
  int decade_lo = -6;
  int decade_hi = 0;
  bool tuner_enabled = false;
  TunerConfig tuner;
  SamplerParams params;
  bool refine = false;
  std::uint64_t seed = 1;
  std::string output_path = "results";
  MetricConfig metric;
};

ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config_json(const std::string& text, const std::string& origin);
std::string config_echo_json(const ExperimentConfig& cfg);

/// Per-chain summary accumulated online: post-burn-in mean of theta^2, tuner
/// counters, and an optional failure record.
struct ChainStats {
  Eigen::VectorXd m2;
  long kept = 0;
  long resets = 0;
  double final_step = 0.0;
  double mean_abs_de = 0.0;
  bool failed = false;
  std::string error;
};

/// Receives every post-burn-in sample of a chain.
class SampleSink {
 public:
  virtual ~SampleSink() = default;
  virtual void add(const Eigen::VectorXd& position) = 0;
};

/// Counts samples within radius of each center; coverage() thresholds at
/// min_hits. Mergeable across chains.
class CoverageSink final : public SampleSink {
 public:
  CoverageSink(std::vector<Eigen::Vector2d> centers, double radius, int min_hits);
  void add(const Eigen::VectorXd& position) override;
  void merge(const CoverageSink& other);
  int coverage() const;

 private:
  std::vector<Eigen::Vector2d> centers_;
  double radius_sq_;
  int min_hits_;
  std::vector<long> hits_;
};

using TunerTraceFn = std::function<void(const TunerTraceRow&)>;

/// Runs one chain for `steps` steps from the target's init position. A
/// divergence is guardrail-handled when the tuner is enabled and fails the
/// chain otherwise. Exceptions are captured into the failure record.
ChainStats run_chain(TargetPtr target, SamplerKind kind, const SamplerConfig& cfg,
                     const TunerConfig* tuner, long steps, double burn_in_frac,
                     RngStream rng, SampleSink* sink = nullptr,
                     const TunerTraceFn& trace = nullptr);

struct GridRow {
  double step_size = 0.0;
  bool failed = false;
  std::string error;
  BiasReport bias;
  Eigen::VectorXd per_chain_aggregate;  // filled when metric.per_chain_bias
  int coverage = -1;                    // -1 = not a coverage run
  long resets = 0;
  double final_step_mean = 0.0;
};

struct RunResult {
  std::vector<GridRow> rows;
  int selected = -1;  // index into rows; -1 when every point failed
  ExperimentConfig config;
};

/// Builds the target and noise spec from the config's dedicated setup stream.
TargetPtr build_target(const ExperimentConfig& cfg, RngStream& setup_rng);
NoiseSpec build_noise(const ExperimentConfig& cfg, const Target& target,
                      RngStream& setup_rng);

/// Sweeps the step grid, running `chains` chains per point on up to `workers`
/// threads (chain k uses substream k of the seed). Selects the point with the
/// smallest aggregate bias (largest coverage for gmm25). With refine, re-runs
/// 15 log-spaced points one decade around the coarse winner.
RunResult run_experiment(const ExperimentConfig& cfg, int workers = 0);

std::string results_csv(const RunResult& result);
extern const char* kResultsCsvHeader;

/// Writes results.csv and config_echo.json under out_dir.
void write_results(const RunResult& result, const std::string& out_dir);

/// Runs every chain at the first grid step with the tuner enabled, streaming
/// per-step trace rows to trace_chain<k>.csv under out_dir.
void write_tuner_trace(const ExperimentConfig& cfg, const std::string& out_dir,
                       int workers = 0);

}  // namespace smile
