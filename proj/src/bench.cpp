#include "smile/bench.hpp"

#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace smile {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Config parsing (fail-closed: unknown keys are errors)

TargetKind target_kind_from_string(const std::string& s) {
  if (s == "icg") return TargetKind::icg;
  if (s == "rosenbrock") return TargetKind::rosenbrock;
  if (s == "funnel") return TargetKind::funnel;
  if (s == "gmm25") return TargetKind::gmm25;
  if (s == "linreg") return TargetKind::linreg;
  throw std::invalid_argument("unknown target kind: '" + s + "'");
}

std::string to_string(TargetKind k) {
  switch (k) {
    case TargetKind::icg: return "icg";
    case TargetKind::rosenbrock: return "rosenbrock";
    case TargetKind::funnel: return "funnel";
    case TargetKind::gmm25: return "gmm25";
    case TargetKind::linreg: return "linreg";
  }
  return "unknown";
}

namespace {

void require_keys(const json& obj, const std::string& where,
                  std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed)
      if (key == a) {
        ok = true;
        break;
      }
    if (!ok) throw ConfigError(where, "unknown key '" + key + "'");
  }
}

template <typename T>
T get_or(const json& obj, const std::string& where, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "/" + key, "type mismatch");
  }
}

double get_positive(const json& obj, const std::string& where, const char* key,
                    double fallback) {
  const double v = get_or<double>(obj, where, key, fallback);
  if (!(v > 0.0)) throw ConfigError(where + "/" + key, "must be positive");
  return v;
}

TargetConfig parse_target(const json& obj, const std::string& where) {
  require_keys(obj, where,
               {"kind", "dim", "cond_lo", "cond_hi", "q", "n", "cond", "noise_var",
                "prior_var", "csv"});
  TargetConfig t;
  if (!obj.contains("kind")) throw ConfigError(where, "missing required key 'kind'");
  try {
    t.kind = target_kind_from_string(obj.at("kind").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + "/kind", e.what());
  } catch (const json::exception&) {
    throw ConfigError(where + "/kind", "type mismatch");
  }
  t.dim = get_or<int>(obj, where, "dim", t.kind == TargetKind::linreg ? 5 : 10);
  if (t.dim < 2) throw ConfigError(where + "/dim", "must be >= 2");
  t.cond_lo = get_positive(obj, where, "cond_lo", t.cond_lo);
  t.cond_hi = get_positive(obj, where, "cond_hi", t.cond_hi);
  if (!(t.cond_lo < t.cond_hi)) throw ConfigError(where, "need cond_lo < cond_hi");
  t.q = get_positive(obj, where, "q", t.q);
  t.n = get_or<int>(obj, where, "n", t.n);
  if (t.n < 1) throw ConfigError(where + "/n", "must be positive");
  t.cond = get_positive(obj, where, "cond", t.cond);
  t.noise_var = get_positive(obj, where, "noise_var", t.noise_var);
  t.prior_var = get_positive(obj, where, "prior_var", t.prior_var);
  t.csv = get_or<std::string>(obj, where, "csv", "");
  if (t.kind == TargetKind::rosenbrock && t.dim % 2 != 0)
    throw ConfigError(where + "/dim", "rosenbrock dimension must be even");
  return t;
}

TunerConfig parse_tuner(const json& obj, const std::string& where) {
  require_keys(obj, where,
               {"kappa", "adapt_prob", "delta", "beta", "warmup_steps",
                "gamma_fit_transposed"});
  TunerConfig t;
  t.kappa = get_or<double>(obj, where, "kappa", t.kappa);
  if (!(t.kappa > 0.0 && t.kappa < 1.0)) throw ConfigError(where + "/kappa", "must be in (0,1)");
  t.adapt_prob = get_or<double>(obj, where, "adapt_prob", t.adapt_prob);
  if (!(t.adapt_prob > 0.0 && t.adapt_prob < 1.0))
    throw ConfigError(where + "/adapt_prob", "must be in (0,1)");
  t.delta = get_or<double>(obj, where, "delta", t.delta);
  if (!(t.delta > 0.0 && t.delta < 1.0)) throw ConfigError(where + "/delta", "must be in (0,1)");
  t.beta = get_or<double>(obj, where, "beta", t.beta);
  if (!(t.beta > 0.0 && t.beta < 1.0)) throw ConfigError(where + "/beta", "must be in (0,1)");
  t.warmup_steps = get_or<int>(obj, where, "warmup_steps", t.warmup_steps);
  if (t.warmup_steps < 0) throw ConfigError(where + "/warmup_steps", "must be >= 0");
  t.gamma_fit_transposed =
      get_or<bool>(obj, where, "gamma_fit_transposed", t.gamma_fit_transposed);
  return t;
}

SamplerParams parse_params(const json& obj, const std::string& where) {
  require_keys(obj, where,
               {"decoherence_length", "batch_size", "friction", "redraw_per_substep",
                "precond_alpha"});
  SamplerParams p;
  if (obj.contains("decoherence_length"))
    p.decoherence_length = get_positive(obj, where, "decoherence_length", 1.0);
  p.batch_size = get_or<int>(obj, where, "batch_size", p.batch_size);
  if (p.batch_size < 0) throw ConfigError(where + "/batch_size", "must be >= 0");
  p.friction = get_positive(obj, where, "friction", p.friction);
  p.redraw_per_substep = get_or<bool>(obj, where, "redraw_per_substep", false);
  p.precond_alpha = get_positive(obj, where, "precond_alpha", p.precond_alpha);
  if (p.precond_alpha >= 1.0) throw ConfigError(where + "/precond_alpha", "must be in (0,1)");
  return p;
}

MetricConfig parse_metric(const json& obj, const std::string& where) {
  require_keys(obj, where,
               {"aggregation", "coverage_radius", "coverage_min_hits", "n_boot",
                "per_chain_bias"});
  MetricConfig m;
  if (obj.contains("aggregation")) {
    const auto s = get_or<std::string>(obj, where, "aggregation", "mean");
    if (s == "mean")
      m.aggregation = BiasAggregation::mean;
    else if (s == "max")
      m.aggregation = BiasAggregation::max;
    else
      throw ConfigError(where + "/aggregation", "must be 'mean' or 'max'");
  }
  if (obj.contains("coverage_radius"))
    m.coverage_radius = get_positive(obj, where, "coverage_radius", 1.0);
  m.coverage_min_hits = get_or<int>(obj, where, "coverage_min_hits", m.coverage_min_hits);
  if (m.coverage_min_hits < 1) throw ConfigError(where + "/coverage_min_hits", "must be >= 1");
  m.n_boot = get_or<int>(obj, where, "n_boot", m.n_boot);
  if (m.n_boot < 1) throw ConfigError(where + "/n_boot", "must be >= 1");
  m.per_chain_bias = get_or<bool>(obj, where, "per_chain_bias", false);
  return m;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text, const std::string& origin) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(origin, std::string("invalid JSON: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError(origin, "top level must be an object");
  const std::string where = origin;
  require_keys(root, where,
               {"target", "noise", "sampler", "chains", "steps", "burn_in_frac",
                "step_grid", "tuner", "sampler_params", "refine", "seed", "output_path",
                "metric"});

  ExperimentConfig cfg;
  if (!root.contains("target")) throw ConfigError(where, "missing required key 'target'");
  if (!root.at("target").is_object()) throw ConfigError(where + "/target", "must be an object");
  cfg.target = parse_target(root.at("target"), where + "/target");

  if (root.contains("noise")) {
    const json& nz = root.at("noise");
    if (!nz.is_object()) throw ConfigError(where + "/noise", "must be an object");
    require_keys(nz, where + "/noise", {"kind", "base_scale"});
    if (nz.contains("kind")) {
      try {
        cfg.noise_kind = noise_kind_from_string(nz.at("kind").get<std::string>());
      } catch (const std::invalid_argument& e) {
        throw ConfigError(where + "/noise/kind", e.what());
      } catch (const json::exception&) {
        throw ConfigError(where + "/noise/kind", "type mismatch");
      }
    }
    cfg.noise_base_scale = get_positive(nz, where + "/noise", "base_scale", cfg.noise_base_scale);
  }

  if (!root.contains("sampler")) throw ConfigError(where, "missing required key 'sampler'");
  try {
    cfg.sampler = sampler_kind_from_string(root.at("sampler").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(where + "/sampler", e.what());
  } catch (const json::exception&) {
    throw ConfigError(where + "/sampler", "type mismatch");
  }

  cfg.chains = get_or<int>(root, where, "chains", cfg.chains);
  if (cfg.chains < 1) throw ConfigError(where + "/chains", "must be >= 1");
  cfg.steps = get_or<long>(root, where, "steps", cfg.steps);
  if (cfg.steps < 1) throw ConfigError(where + "/steps", "must be >= 1");
  cfg.burn_in_frac = get_or<double>(root, where, "burn_in_frac", cfg.burn_in_frac);
  if (!(cfg.burn_in_frac >= 0.0 && cfg.burn_in_frac < 1.0))
    throw ConfigError(where + "/burn_in_frac", "must be in [0,1)");

  if (root.contains("step_grid")) {
    const json& grid = root.at("step_grid");
    if (grid.is_array()) {
      if (grid.empty()) throw ConfigError(where + "/step_grid", "must be non-empty");
      for (const auto& v : grid) {
        if (!v.is_number() || !(v.get<double>() > 0.0))
          throw ConfigError(where + "/step_grid", "entries must be positive numbers");
        cfg.step_grid.push_back(v.get<double>());
      }
    } else if (grid.is_object()) {
      require_keys(grid, where + "/step_grid", {"decades_lo", "decades_hi"});
      cfg.decade_lo = get_or<int>(grid, where + "/step_grid", "decades_lo", cfg.decade_lo);
      cfg.decade_hi = get_or<int>(grid, where + "/step_grid", "decades_hi", cfg.decade_hi);
      if (cfg.decade_lo > cfg.decade_hi)
        throw ConfigError(where + "/step_grid", "need decades_lo <= decades_hi");
    } else {
      throw ConfigError(where + "/step_grid", "must be an array or a decades object");
    }
  }

  if (root.contains("tuner")) {
    const json& t = root.at("tuner");
    if (t.is_string() && t.get<std::string>() == "disabled") {
      cfg.tuner_enabled = false;
    } else if (t.is_object()) {
      cfg.tuner_enabled = true;
      cfg.tuner = parse_tuner(t, where + "/tuner");
    } else {
      throw ConfigError(where + "/tuner", "must be an object or \"disabled\"");
    }
  }

  if (root.contains("sampler_params"))
    cfg.params = parse_params(root.at("sampler_params"), where + "/sampler_params");
  if (root.contains("metric")) cfg.metric = parse_metric(root.at("metric"), where + "/metric");

  cfg.refine = get_or<bool>(root, where, "refine", false);
  cfg.seed = get_or<std::uint64_t>(root, where, "seed", cfg.seed);
  cfg.output_path = get_or<std::string>(root, where, "output_path", cfg.output_path);

  // Cross-field invariants.
  if (cfg.tuner_enabled && !has_energy_accounting(cfg.sampler))
    throw ConfigError(where + "/tuner", "tuner requires a sampler with energy accounting");
  if (cfg.sampler == SamplerKind::mclmc) {
    if (cfg.noise_kind != NoiseKind::none)
      throw ConfigError(where + "/noise", "mclmc uses exact gradients");
    if (cfg.params.batch_size > 0)
      throw ConfigError(where + "/sampler_params/batch_size", "mclmc uses exact gradients");
    if (!std::isfinite(cfg.params.decoherence_length))
      throw ConfigError(where + "/sampler_params/decoherence_length",
                        "mclmc requires a finite decoherence length");
  }
  if (cfg.params.batch_size > 0) {
    if (cfg.target.kind != TargetKind::linreg)
      throw ConfigError(where + "/sampler_params/batch_size",
                        "mini-batching requires the linreg target");
    if (cfg.noise_kind != NoiseKind::none)
      throw ConfigError(where + "/noise",
                        "mini-batching and injected noise are mutually exclusive");
    if (cfg.params.batch_size > cfg.target.n)
      throw ConfigError(where + "/sampler_params/batch_size", "exceeds dataset size");
  }
  if (cfg.noise_kind != NoiseKind::none && cfg.target.kind == TargetKind::linreg)
    throw ConfigError(where + "/noise", "injected noise is for analytical targets");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot open file");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_json(text, path);
}

std::string config_echo_json(const ExperimentConfig& cfg) {
  json root;
  json target{{"kind", to_string(cfg.target.kind)}, {"dim", cfg.target.dim}};
  switch (cfg.target.kind) {
    case TargetKind::icg:
      target["cond_lo"] = cfg.target.cond_lo;
      target["cond_hi"] = cfg.target.cond_hi;
      break;
    case TargetKind::rosenbrock:
      target["q"] = cfg.target.q;
      break;
    case TargetKind::linreg:
      target["n"] = cfg.target.n;
      target["cond"] = cfg.target.cond;
      target["noise_var"] = cfg.target.noise_var;
      target["prior_var"] = cfg.target.prior_var;
      if (!cfg.target.csv.empty()) target["csv"] = cfg.target.csv;
      break;
    default:
      break;
  }
  root["target"] = target;
  root["noise"] = json{{"kind", to_string(cfg.noise_kind)},
                       {"base_scale", cfg.noise_base_scale}};
  root["sampler"] = to_string(cfg.sampler);
  root["chains"] = cfg.chains;
  root["steps"] = cfg.steps;
  root["burn_in_frac"] = cfg.burn_in_frac;
  if (cfg.step_grid.empty())
    root["step_grid"] = json{{"decades_lo", cfg.decade_lo}, {"decades_hi", cfg.decade_hi}};
  else
    root["step_grid"] = cfg.step_grid;
  if (cfg.tuner_enabled)
    root["tuner"] = json{{"kappa", cfg.tuner.kappa},
                         {"adapt_prob", cfg.tuner.adapt_prob},
                         {"delta", cfg.tuner.delta},
                         {"beta", cfg.tuner.beta},
                         {"warmup_steps", cfg.tuner.warmup_steps},
                         {"gamma_fit_transposed", cfg.tuner.gamma_fit_transposed}};
  else
    root["tuner"] = "disabled";
  json params;
  if (std::isfinite(cfg.params.decoherence_length))
    params["decoherence_length"] = cfg.params.decoherence_length;
  if (cfg.params.batch_size > 0) params["batch_size"] = cfg.params.batch_size;
  params["friction"] = cfg.params.friction;
  params["redraw_per_substep"] = cfg.params.redraw_per_substep;
  params["precond_alpha"] = cfg.params.precond_alpha;
  root["sampler_params"] = params;
  json metric;
  if (cfg.metric.aggregation)
    metric["aggregation"] = *cfg.metric.aggregation == BiasAggregation::mean ? "mean" : "max";
  if (cfg.metric.coverage_radius > 0.0) metric["coverage_radius"] = cfg.metric.coverage_radius;
  metric["coverage_min_hits"] = cfg.metric.coverage_min_hits;
  metric["n_boot"] = cfg.metric.n_boot;
  metric["per_chain_bias"] = cfg.metric.per_chain_bias;
  root["metric"] = metric;
  root["refine"] = cfg.refine;
  root["seed"] = cfg.seed;
  root["output_path"] = cfg.output_path;
  return root.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Chain runner

CoverageSink::CoverageSink(std::vector<Eigen::Vector2d> centers, double radius, int min_hits)
    : centers_(std::move(centers)),
      radius_sq_(radius * radius),
      min_hits_(min_hits),
      hits_(centers_.size(), 0) {}

void CoverageSink::add(const Eigen::VectorXd& position) {
  for (std::size_t k = 0; k < centers_.size(); ++k) {
    const double dx = position[0] - centers_[k][0];
    const double dy = position[1] - centers_[k][1];
    if (dx * dx + dy * dy <= radius_sq_) ++hits_[k];
  }
}

void CoverageSink::merge(const CoverageSink& other) {
  for (std::size_t k = 0; k < hits_.size(); ++k) hits_[k] += other.hits_[k];
}

int CoverageSink::coverage() const {
  int covered = 0;
  for (long h : hits_)
    if (h >= min_hits_) ++covered;
  return covered;
}

ChainStats run_chain(TargetPtr target, SamplerKind kind, const SamplerConfig& cfg,
                     const TunerConfig* tuner_cfg, long steps, double burn_in_frac,
                     RngStream rng, SampleSink* sink, const TunerTraceFn& trace) {
  ChainStats stats;
  stats.m2 = Eigen::VectorXd::Zero(target->dim());
  stats.final_step = cfg.step_size;
  try {
    ChainState state = init_chain_state(*target, cfg.step_size, rng);
    auto kernel = make_kernel(kind, target, cfg);
    std::optional<Tuner> tuner;
    if (tuner_cfg != nullptr) {
      if (!has_energy_accounting(kind))
        throw std::invalid_argument("tuner requires a sampler with energy accounting");
      tuner.emplace(*tuner_cfg);
    }

    const long burn = std::lround(static_cast<double>(steps) * burn_in_frac);
    double sum_abs_de = 0.0;
    long de_count = 0;

    for (long t = 0; t < steps; ++t) {
      StepOutcome out;
      bool diverged = false;
      try {
        out = kernel->step(state, rng);
      } catch (const DivergentStep&) {
        diverged = true;
      }

      bool reset = false;
      if (tuner) {
        Tuner::Result res = tuner->process(state, std::move(out), diverged);
        state = std::move(res.state);
        reset = res.reset;
        if (std::isfinite(res.abs_de)) {
          sum_abs_de += res.abs_de;
          ++de_count;
        }
        if (trace) {
          const EnergyStats& es = tuner->stats();
          trace(TunerTraceRow{t, state.step_size, es.mean(), es.std(), es.shape,
                              es.scale, reset});
        }
      } else {
        if (diverged) throw DivergentStep();
        if (std::isfinite(out.energy_delta)) {
          sum_abs_de += std::abs(out.energy_delta);
          ++de_count;
        }
        state = std::move(out.new_state);
      }

      if (t >= burn) {
        stats.m2 += state.position.cwiseProduct(state.position);
        ++stats.kept;
        if (sink != nullptr) sink->add(state.position);
      }
    }

    if (stats.kept > 0) stats.m2 /= static_cast<double>(stats.kept);
    stats.final_step = state.step_size;
    if (tuner) stats.resets = tuner->resets();
    stats.mean_abs_de = de_count > 0 ? sum_abs_de / static_cast<double>(de_count) : 0.0;
  } catch (const std::exception& e) {
    stats.failed = true;
    stats.error = e.what();
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Experiment sweep

TargetPtr build_target(const ExperimentConfig& cfg, RngStream& setup_rng) {
  switch (cfg.target.kind) {
    case TargetKind::icg:
      return make_icg(cfg.target.dim, cfg.target.cond_lo, cfg.target.cond_hi, setup_rng);
    case TargetKind::rosenbrock:
      return make_rosenbrock(cfg.target.dim, cfg.target.q);
    case TargetKind::funnel:
      return make_funnel(cfg.target.dim);
    case TargetKind::gmm25:
      return make_gmm25(cfg.target.dim);
    case TargetKind::linreg: {
      RegressionData data =
          cfg.target.csv.empty()
              ? synthetic_regression(cfg.target.n, cfg.target.dim, cfg.target.cond,
                                     cfg.target.noise_var, cfg.target.prior_var, setup_rng)
              : load_regression_csv(cfg.target.csv, cfg.target.noise_var,
                                    cfg.target.prior_var);
      return make_linreg_target(std::move(data));
    }
  }
  throw std::logic_error("unreachable");
}

NoiseSpec build_noise(const ExperimentConfig& cfg, const Target& target,
                      RngStream& setup_rng) {
  if (cfg.noise_kind == NoiseKind::none) return NoiseSpec::none_spec();
  const int d = target.dim();
  // The anisotropy spectrum mirrors the icg eigenvalues; the spatial scale is
  // the target's marginal std of theta_2.
  const Eigen::VectorXd eigvals = log_spaced(d, 0.01, 100.0);
  double spatial_std = 1.0;
  if (cfg.noise_kind == NoiseKind::spatially_varied) {
    const auto m2 = target.exact_second_moments();
    if (!m2) throw std::invalid_argument("spatially varied noise needs exact moments");
    const double mean2 = target.init_position()[1];
    const double var = (*m2)[1] - mean2 * mean2;
    spatial_std = std::sqrt(std::max(var, 1e-12));
  }
  return NoiseSpec::make(cfg.noise_kind, d, cfg.noise_base_scale, eigvals, setup_rng,
                         spatial_std);
}

namespace {

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  std::vector<std::thread> pool;
  const int k = std::min(workers, n);
  pool.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

SamplerConfig sampler_config_for(const ExperimentConfig& cfg, const Target& target,
                                 const NoiseSpec& noise, double step_size) {
  SamplerConfig sc;
  sc.step_size = step_size;
  sc.noise = noise;
  sc.decoherence_length = cfg.params.decoherence_length;
  sc.batch_size = cfg.params.batch_size;
  sc.dataset_size = target.dataset_size();
  sc.friction = cfg.params.friction;
  sc.redraw_per_substep = cfg.params.redraw_per_substep;
  sc.precond_alpha = cfg.params.precond_alpha;
  sc.precondition = cfg.sampler == SamplerKind::psmile;
  return sc;
}

GridRow run_grid_point(const ExperimentConfig& cfg, const TargetPtr& target,
                       const NoiseSpec& noise, double step_size, int workers,
                       int grid_index) {
  GridRow row;
  row.step_size = step_size;
  const bool coverage_run = cfg.target.kind == TargetKind::gmm25;
  const double radius = cfg.metric.coverage_radius > 0.0 ? cfg.metric.coverage_radius
                                                         : default_coverage_radius();

  const SamplerConfig sc = sampler_config_for(cfg, *target, noise, step_size);
  std::vector<ChainStats> chains(static_cast<std::size_t>(cfg.chains));
  std::vector<std::unique_ptr<CoverageSink>> sinks(static_cast<std::size_t>(cfg.chains));

  parallel_for(cfg.chains, workers, [&](int k) {
    if (coverage_run)
      sinks[static_cast<std::size_t>(k)] = std::make_unique<CoverageSink>(
          Gmm25Target::centers(), radius, cfg.metric.coverage_min_hits);
    chains[static_cast<std::size_t>(k)] = run_chain(
        target, cfg.sampler, sc, cfg.tuner_enabled ? &cfg.tuner : nullptr, cfg.steps,
        cfg.burn_in_frac, make_stream(cfg.seed, static_cast<std::uint64_t>(k)),
        sinks[static_cast<std::size_t>(k)].get());
  });

  for (const auto& c : chains) {
    if (c.failed) {
      row.failed = true;
      row.error = c.error;
      return row;
    }
  }

  row.resets = 0;
  double step_sum = 0.0;
  Eigen::MatrixXd per_chain_m2(cfg.chains, target->dim());
  for (int k = 0; k < cfg.chains; ++k) {
    row.resets += chains[static_cast<std::size_t>(k)].resets;
    step_sum += chains[static_cast<std::size_t>(k)].final_step;
    per_chain_m2.row(k) = chains[static_cast<std::size_t>(k)].m2;
  }
  row.final_step_mean = step_sum / cfg.chains;

  if (coverage_run) {
    CoverageSink total(Gmm25Target::centers(), radius, cfg.metric.coverage_min_hits);
    for (const auto& s : sinks) total.merge(*s);
    row.coverage = total.coverage();
    return row;
  }

  const auto m2 = target->exact_second_moments();
  const auto var2 = target->theta2_variance();
  if (!m2 || !var2) throw std::invalid_argument("target has no exact moments for the bias metric");
  const BiasAggregation agg = cfg.metric.aggregation.value_or(
      cfg.target.kind == TargetKind::funnel ? BiasAggregation::max : BiasAggregation::mean);
  const long kept = chains.front().kept;
  row.bias = second_moment_bias_from_moments(per_chain_m2, kept, *m2, *var2, agg);
  RngStream boot_rng =
      make_stream(cfg.seed, kBootstrapSubstream + static_cast<std::uint64_t>(grid_index));
  row.bias.bootstrap_std =
      bootstrap_std(per_chain_m2, *m2, *var2, cfg.metric.n_boot, agg, boot_rng);

  if (cfg.metric.per_chain_bias) {
    row.per_chain_aggregate.resize(cfg.chains);
    for (int k = 0; k < cfg.chains; ++k) {
      const BiasReport r = second_moment_bias_from_moments(per_chain_m2.row(k), kept,
                                                           *m2, *var2, agg);
      row.per_chain_aggregate[k] = r.aggregate;
    }
  }
  return row;
}

int select_row(const std::vector<GridRow>& rows, bool coverage_run) {
  int best = -1;
  for (int i = 0; i < static_cast<int>(rows.size()); ++i) {
    if (rows[static_cast<std::size_t>(i)].failed) continue;
    if (best < 0) {
      best = i;
      continue;
    }
    const GridRow& a = rows[static_cast<std::size_t>(i)];
    const GridRow& b = rows[static_cast<std::size_t>(best)];
    if (coverage_run ? a.coverage > b.coverage : a.bias.aggregate < b.bias.aggregate)
      best = i;
  }
  return best;
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg, int workers) {
  if (workers <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    workers = hw == 0 ? 1 : static_cast<int>(hw);
  }
  workers = std::min(workers, cfg.chains);

  RngStream setup = make_stream(cfg.seed, kSetupSubstream);
  TargetPtr target = build_target(cfg, setup);
  const NoiseSpec noise = build_noise(cfg, *target, setup);
  const bool coverage_run = cfg.target.kind == TargetKind::gmm25;

  std::vector<double> grid = cfg.step_grid;
  if (grid.empty())
    for (int i = cfg.decade_lo; i <= cfg.decade_hi; ++i)
      grid.push_back(std::pow(10.0, static_cast<double>(i)));

  RunResult result;
  result.config = cfg;
  for (std::size_t i = 0; i < grid.size(); ++i)
    result.rows.push_back(
        run_grid_point(cfg, target, noise, grid[i], workers, static_cast<int>(i)));
  result.selected = select_row(result.rows, coverage_run);

  if (cfg.refine && result.selected >= 0) {
    // 15 step sizes log-spaced over one decade either side of the winner.
    const double center = std::log10(result.rows[static_cast<std::size_t>(result.selected)].step_size);
    for (int j = 0; j < 15; ++j) {
      const double ex = center - 1.0 + 2.0 * static_cast<double>(j) / 14.0;
      result.rows.push_back(run_grid_point(cfg, target, noise, std::pow(10.0, ex), workers,
                                           static_cast<int>(grid.size() + j)));
    }
    result.selected = select_row(result.rows, coverage_run);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Result output

const char* kResultsCsvHeader =
    "target,noise,sampler,step_size,selected,aggregate_b2,bootstrap_std,coverage,"
    "chains,steps_per_chain,samples_per_chain,resets,final_step_mean,failed,error";

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

}  // namespace

std::string results_csv(const RunResult& result) {
  std::string out = kResultsCsvHeader;
  out += '\n';
  const ExperimentConfig& cfg = result.config;
  for (int i = 0; i < static_cast<int>(result.rows.size()); ++i) {
    const GridRow& row = result.rows[static_cast<std::size_t>(i)];
    out += to_string(cfg.target.kind);
    out += ',';
    out += to_string(cfg.noise_kind);
    out += ',';
    out += to_string(cfg.sampler);
    out += ',';
    out += fmt_double(row.step_size);
    out += ',';
    out += (i == result.selected ? "1" : "0");
    out += ',';
    if (!row.failed && row.coverage < 0) {
      out += fmt_double(row.bias.aggregate);
      out += ',';
      out += fmt_double(row.bias.bootstrap_std);
      out += ',';
    } else {
      out += ",,";
    }
    if (!row.failed && row.coverage >= 0) out += std::to_string(row.coverage);
    out += ',';
    out += std::to_string(cfg.chains);
    out += ',';
    out += std::to_string(cfg.steps);
    out += ',';
    if (!row.failed) {
      const long burn = std::lround(static_cast<double>(cfg.steps) * cfg.burn_in_frac);
      out += std::to_string(cfg.steps - burn);
    }
    out += ',';
    if (!row.failed) out += std::to_string(row.resets);
    out += ',';
    if (!row.failed) out += fmt_double(row.final_step_mean);
    out += ',';
    out += row.failed ? "1" : "0";
    out += ',';
    out += csv_escape(row.error);
    out += '\n';
  }
  return out;
}

void write_results(const RunResult& result, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir + ": " + ec.message());

  const fs::path csv_path = fs::path(out_dir) / "results.csv";
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + csv_path.string());
    out << results_csv(result);
  }
  const fs::path echo_path = fs::path(out_dir) / "config_echo.json";
  {
    std::ofstream out(echo_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + echo_path.string());
    out << config_echo_json(result.config);
  }
}

void write_tuner_trace(const ExperimentConfig& cfg, const std::string& out_dir,
                       int workers) {
  if (!cfg.tuner_enabled)
    throw ConfigError("/tuner", "trace requires an enabled tuner");
  if (workers <= 0) {
    const unsigned hw = std::thread::hardware_concurrency();
    workers = hw == 0 ? 1 : static_cast<int>(hw);
  }
  workers = std::min(workers, cfg.chains);

  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + out_dir + ": " + ec.message());

  RngStream setup = make_stream(cfg.seed, kSetupSubstream);
  TargetPtr target = build_target(cfg, setup);
  const NoiseSpec noise = build_noise(cfg, *target, setup);

  std::vector<double> grid = cfg.step_grid;
  if (grid.empty())
    for (int i = cfg.decade_lo; i <= cfg.decade_hi; ++i)
      grid.push_back(std::pow(10.0, static_cast<double>(i)));
  const SamplerConfig sc = sampler_config_for(cfg, *target, noise, grid.front());

  std::vector<std::string> errors(static_cast<std::size_t>(cfg.chains));
  parallel_for(cfg.chains, workers, [&](int k) {
    const fs::path path = fs::path(out_dir) / ("trace_chain" + std::to_string(k) + ".csv");
    std::ofstream out(path, std::ios::binary);
    if (!out) {
      errors[static_cast<std::size_t>(k)] = "cannot write " + path.string();
      return;
    }
    out << "step,eta,mu,sigma,shape,scale,reset\n";
    auto trace = [&out](const TunerTraceRow& row) {
      out << row.step << ',' << fmt_double(row.eta) << ',' << fmt_double(row.mu) << ','
          << fmt_double(row.sigma) << ',' << fmt_double(row.shape) << ','
          << fmt_double(row.scale) << ',' << (row.reset ? 1 : 0) << '\n';
    };
    const ChainStats stats = run_chain(target, cfg.sampler, sc, &cfg.tuner, cfg.steps,
                                       cfg.burn_in_frac,
                                       make_stream(cfg.seed, static_cast<std::uint64_t>(k)),
                                       nullptr, trace);
    if (stats.failed) errors[static_cast<std::size_t>(k)] = stats.error;
  });
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error("trace failed: " + e);
}

}  // namespace smile
