#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "smile/bench.hpp"

namespace py = pybind11;
using namespace smile;

namespace {

/// Value wrapper around the shared immutable target, the form pybind11 can
/// hold directly.
struct PyTarget {
  TargetPtr ptr;
  const Target& ref() const {
    if (!ptr) throw std::runtime_error("empty target");
    return *ptr;
  }
};

NoiseSpec make_noise_py(const std::string& kind, int dim, double base_scale,
                        std::uint64_t seed, double spatial_std) {
  RngStream rng = make_stream(seed, kSetupSubstream);
  const NoiseKind k = noise_kind_from_string(kind);
  if (k == NoiseKind::none || k == NoiseKind::isotropic)
    return NoiseSpec::make(k, dim, base_scale, {}, rng, spatial_std);
  return NoiseSpec::make(k, dim, base_scale, log_spaced(dim, 0.01, 100.0), rng,
                         spatial_std);
}

py::dict run_sampler_py(const PyTarget& target, const std::string& sampler,
                        double step_size, long steps, std::uint64_t seed, int chain,
                        const NoiseSpec& noise, int batch_size, double decoherence_length,
                        bool tuner, int thin, double burn_in_frac) {
  if (thin < 1) throw std::invalid_argument("thin must be >= 1");
  const SamplerKind kind = sampler_kind_from_string(sampler);
  SamplerConfig cfg;
  cfg.step_size = step_size;
  cfg.noise = noise;
  cfg.batch_size = batch_size;
  cfg.dataset_size = target.ref().dataset_size();
  cfg.decoherence_length = decoherence_length;
  cfg.precondition = kind == SamplerKind::psmile;

  class ThinSink final : public SampleSink {
   public:
    ThinSink(int thin, long expected, int dim) : thin_(thin), dim_(dim) {
      rows_.reserve(static_cast<std::size_t>(expected / thin + 1) *
                    static_cast<std::size_t>(dim));
    }
    void add(const Eigen::VectorXd& p) override {
      if (count_++ % thin_ == 0)
        for (int j = 0; j < dim_; ++j) rows_.push_back(p[j]);
    }
    Eigen::MatrixXd matrix() const {
      const long n = static_cast<long>(rows_.size()) / dim_;
      Eigen::MatrixXd m(n, dim_);
      for (long i = 0; i < n; ++i)
        for (int j = 0; j < dim_; ++j) m(i, j) = rows_[static_cast<std::size_t>(i * dim_ + j)];
      return m;
    }

   private:
    int thin_, dim_;
    long count_ = 0;
    std::vector<double> rows_;
  } sink(thin, steps, target.ref().dim());

  TunerConfig tc;
  const ChainStats stats =
      run_chain(target.ptr, kind, cfg, tuner ? &tc : nullptr, steps, burn_in_frac,
                make_stream(seed, static_cast<std::uint64_t>(chain)), &sink);
  if (stats.failed) throw std::runtime_error("chain failed: " + stats.error);

  py::dict out;
  out["samples"] = sink.matrix();
  out["second_moments"] = stats.m2;
  out["resets"] = stats.resets;
  out["final_step_size"] = stats.final_step;
  out["mean_abs_energy_error"] = stats.mean_abs_de;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Stochastic microcanonical Langevin sampling core";

  py::class_<PyTarget>(m, "Target")
      .def_property_readonly("dim", [](const PyTarget& t) { return t.ref().dim(); })
      .def("log_density",
           [](const PyTarget& t, const Eigen::VectorXd& x) { return t.ref().log_density(x); },
           py::arg("theta"))
      .def("gradient",
           [](const PyTarget& t, const Eigen::VectorXd& x) { return t.ref().gradient(x); },
           py::arg("theta"))
      .def("init_position", [](const PyTarget& t) { return t.ref().init_position(); })
      .def("exact_second_moments",
           [](const PyTarget& t) -> py::object {
             const auto m2 = t.ref().exact_second_moments();
             return m2 ? py::cast(*m2) : py::none();
           })
      .def("theta2_variance", [](const PyTarget& t) -> py::object {
        const auto v = t.ref().theta2_variance();
        return v ? py::cast(*v) : py::none();
      });

  py::class_<RegressionData>(m, "RegressionData")
      .def_readonly("design", &RegressionData::design)
      .def_readonly("responses", &RegressionData::responses)
      .def_readonly("noise_var", &RegressionData::noise_var)
      .def_readonly("prior_var", &RegressionData::prior_var);

  py::class_<NoiseSpec>(m, "NoiseSpec");

  m.def(
      "make_icg",
      [](int dim, double cond_lo, double cond_hi, std::uint64_t seed) {
        RngStream rng = make_stream(seed, kSetupSubstream);
        return PyTarget{make_icg(dim, cond_lo, cond_hi, rng)};
      },
      py::arg("dim") = 10, py::arg("cond_lo") = 0.01, py::arg("cond_hi") = 100.0,
      py::arg("seed") = 1);
  m.def(
      "make_rosenbrock",
      [](int dim, double q) { return PyTarget{make_rosenbrock(dim, q)}; },
      py::arg("dim") = 10, py::arg("q") = 0.1);
  m.def("make_funnel", [](int dim) { return PyTarget{make_funnel(dim)}; },
        py::arg("dim") = 10);
  m.def("make_gmm25", [](int dim) { return PyTarget{make_gmm25(dim)}; },
        py::arg("dim") = 10);
  m.def(
      "synthetic_regression",
      [](int n, int p, double cond, double noise_var, double prior_var,
         std::uint64_t seed) {
        RngStream rng = make_stream(seed, kSetupSubstream);
        return synthetic_regression(n, p, cond, noise_var, prior_var, rng);
      },
      py::arg("n") = 1024, py::arg("p") = 5, py::arg("cond") = 1.0,
      py::arg("noise_var") = 1.0, py::arg("prior_var") = 1.0, py::arg("seed") = 1);
  m.def("load_regression_csv", &load_regression_csv, py::arg("path"),
        py::arg("noise_var") = 1.0, py::arg("prior_var") = 1.0);
  m.def(
      "make_linreg_target",
      [](const RegressionData& data) { return PyTarget{make_linreg_target(data)}; },
      py::arg("data"));
  m.def(
      "posterior_moments",
      [](const PyTarget& t) {
        const auto* lr = dynamic_cast<const LinearRegressionTarget*>(t.ptr.get());
        if (lr == nullptr) throw std::invalid_argument("not a regression target");
        return py::make_tuple(lr->posterior_mean(), lr->posterior_covariance());
      },
      py::arg("target"));

  m.def("make_noise_spec", &make_noise_py, py::arg("kind"), py::arg("dim"),
        py::arg("base_scale") = 256.0, py::arg("seed") = 1, py::arg("spatial_std") = 1.0);

  m.def(
      "momentum_update",
      [](const Eigen::VectorXd& u, const Eigen::VectorXd& grad, double eps, int d) {
        const auto [u2, lf] = momentum_update(u, grad, eps, d);
        return py::make_tuple(u2, lf);
      },
      py::arg("u"), py::arg("grad"), py::arg("eps"), py::arg("d"));
  m.def("fit_gamma", &fit_gamma, py::arg("mu"), py::arg("sigma"),
        py::arg("transposed") = false);
  m.def("gamma_quantile_wh", &gamma_quantile_wh, py::arg("p"), py::arg("shape"),
        py::arg("scale"));

  m.def(
      "second_moment_bias",
      [](const std::vector<Eigen::MatrixXd>& chains, const Eigen::VectorXd& m2,
         const Eigen::VectorXd& var2, const std::string& aggregation) {
        const BiasAggregation agg =
            aggregation == "max" ? BiasAggregation::max : BiasAggregation::mean;
        const BiasReport r = second_moment_bias(chains, m2, var2, agg);
        py::dict out;
        out["per_dim"] = r.per_dim;
        out["aggregate"] = r.aggregate;
        return out;
      },
      py::arg("chains"), py::arg("exact_m2"), py::arg("exact_var_theta2"),
      py::arg("aggregation") = "mean");
  m.def(
      "mode_coverage",
      [](const Eigen::MatrixXd& points, double radius, int min_hits) {
        return mode_coverage(points, Gmm25Target::centers(),
                             radius > 0.0 ? radius : default_coverage_radius(), min_hits);
      },
      py::arg("points"), py::arg("radius") = 0.0, py::arg("min_hits") = 10);

  m.def("run_sampler", &run_sampler_py, py::arg("target"), py::arg("sampler"),
        py::arg("step_size"), py::arg("steps"), py::arg("seed") = 1, py::arg("chain") = 0,
        py::arg("noise") = NoiseSpec::none_spec(), py::arg("batch_size") = 0,
        py::arg("decoherence_length") = std::numeric_limits<double>::infinity(),
        py::arg("tuner") = false, py::arg("thin") = 1, py::arg("burn_in_frac") = 0.0);
}
