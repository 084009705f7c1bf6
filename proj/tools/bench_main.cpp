#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "smile/bench.hpp"

namespace {

int env_workers() {
  const char* v = std::getenv("SMILE_WORKERS");
  if (v == nullptr) return 0;
  const int n = std::atoi(v);
  return n > 0 ? n : 0;
}

void print_summary(const smile::RunResult& result) {
  for (int i = 0; i < static_cast<int>(result.rows.size()); ++i) {
    const smile::GridRow& row = result.rows[static_cast<std::size_t>(i)];
    std::cout << (i == result.selected ? "* " : "  ") << "step " << row.step_size;
    if (row.failed)
      std::cout << "  FAILED (" << row.error << ")";
    else if (row.coverage >= 0)
      std::cout << "  coverage " << row.coverage;
    else
      std::cout << "  b2 " << row.bias.aggregate << " +- " << row.bias.bootstrap_std;
    std::cout << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic microcanonical Langevin benchmark runner"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int workers = env_workers();
  bool refine = false;

  auto* run = app.add_subcommand("run", "Run the experiment described by a config");
  run->add_option("config", config_path, "JSON experiment config")->required();
  run->add_option("--out", out_dir, "Output directory (default: config output_path)");
  run->add_option("--workers", workers, "Parallel chain workers");
  run->add_flag("--refine", refine, "Refine the grid around the coarse winner");

  auto* validate = app.add_subcommand("validate", "Parse and validate a config");
  validate->add_option("config", config_path, "JSON experiment config")->required();

  auto* trace = app.add_subcommand("trace", "Emit per-step tuner trace CSVs");
  trace->add_option("config", config_path, "JSON experiment config")->required();
  trace->add_option("--out", out_dir, "Output directory (default: config output_path)");
  trace->add_option("--workers", workers, "Parallel chain workers");

  CLI11_PARSE(app, argc, argv);

  try {
    smile::ExperimentConfig cfg = smile::load_config(config_path);
    if (refine) cfg.refine = true;
    const std::string out = out_dir.empty() ? cfg.output_path : out_dir;

    if (validate->parsed()) {
      std::cout << smile::config_echo_json(cfg);
      return 0;
    }
    if (run->parsed()) {
      const smile::RunResult result = smile::run_experiment(cfg, workers);
      smile::write_results(result, out);
      print_summary(result);
      std::cout << "wrote " << out << "/results.csv\n";
      return 0;
    }
    if (trace->parsed()) {
      smile::write_tuner_trace(cfg, out, workers);
      std::cout << "wrote tuner traces to " << out << '\n';
      return 0;
    }
  } catch (const smile::ConfigError& e) {
    std::cerr << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
