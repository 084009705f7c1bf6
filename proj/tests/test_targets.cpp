#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <Eigen/SVD>

#include "oracles.hpp"
#include "smile/targets.hpp"

using namespace smile;

namespace {

void check_gradient(const Target& target, RngStream& rng, double spread = 1.0,
                    int points = 100) {
  for (int i = 0; i < points; ++i) {
    const Eigen::VectorXd x = spread * rng.normal_vector(target.dim());
    const Eigen::VectorXd g = target.gradient(x);
    const Eigen::VectorXd fd = oracles::finite_diff_gradient(
        [&](const Eigen::VectorXd& v) { return target.log_density(v); }, x);
    const double scale = std::max(1.0, g.norm());
    CHECK((g - fd).norm() / scale < 1e-5);
  }
}

}  // namespace

TEST_CASE("icg eigenvalues span the requested range log-uniformly") {
  RngStream rng(1);
  TargetPtr t = make_icg(10, 0.01, 100.0, rng);
  const auto& icg = dynamic_cast<const IcgTarget&>(*t);
  const Eigen::VectorXd& ev = icg.eigenvalues();
  CHECK(ev[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(ev[9] == doctest::Approx(100.0).epsilon(1e-12));
  const double ratio = ev[1] / ev[0];
  for (int i = 1; i + 1 < 10; ++i)
    CHECK(ev[i + 1] / ev[i] == doctest::Approx(ratio).epsilon(1e-10));
}

TEST_CASE("identity icg is the standard Gaussian") {
  IcgTarget t(Eigen::VectorXd::Ones(4), Eigen::MatrixXd::Identity(4, 4));
  RngStream rng(2);
  const Eigen::VectorXd x = rng.normal_vector(4);
  CHECK((t.gradient(x) + x).norm() < 1e-14);
  CHECK(t.log_density(x) == doctest::Approx(-0.5 * x.squaredNorm()));
  CHECK((*t.exact_second_moments() - Eigen::VectorXd::Ones(4)).norm() < 1e-14);
}

TEST_CASE("icg covariance diagonal sums to the eigenvalue trace") {
  RngStream rng(3);
  const Eigen::VectorXd ev = log_spaced(6, 0.5, 8.0);
  IcgTarget t(ev, random_rotation(6, rng));
  CHECK(t.exact_second_moments()->sum() == doctest::Approx(ev.sum()).epsilon(1e-12));
}

TEST_CASE("icg gradient matches finite differences") {
  RngStream rng(4);
  TargetPtr t = make_icg(10, 0.01, 100.0, rng);
  check_gradient(*t, rng, 3.0);
}

TEST_CASE("rosenbrock stationary point and moments") {
  TargetPtr t = make_rosenbrock(10, 0.1);
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(10);
  CHECK(t->log_density(ones) == 0.0);
  CHECK(t->gradient(ones).norm() < 1e-14);
  CHECK_THROWS(make_rosenbrock(7, 0.1));

  // Quadrature oracle over one banana pair.
  const auto bm = oracles::banana_moments(0.1);
  const Eigen::VectorXd m2 = *t->exact_second_moments();
  const Eigen::VectorXd var2 = *t->theta2_variance();
  CHECK(m2[0] == doctest::Approx(bm.m2x).epsilon(1e-3));
  CHECK(m2[1] == doctest::Approx(bm.m2y).epsilon(1e-3));
  CHECK(var2[0] == doctest::Approx(bm.var_x2).epsilon(1e-3));
  CHECK(var2[1] == doctest::Approx(bm.var_y2).epsilon(1e-3));
  const Eigen::VectorXd init = t->init_position();
  CHECK(init[1] == doctest::Approx(bm.m1y).epsilon(1e-3));

  RngStream rng(5);
  check_gradient(*t, rng, 1.5);
}

TEST_CASE("funnel gradient and moments") {
  TargetPtr t = make_funnel(10);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(10);
  CHECK(t->gradient(zero)[0] == doctest::Approx(-4.5).epsilon(1e-12));

  const Eigen::VectorXd m2 = *t->exact_second_moments();
  CHECK(m2[0] == doctest::Approx(9.0));
  CHECK(m2[5] == doctest::Approx(std::exp(4.5)).epsilon(1e-12));

  // Monte Carlo oracle for E[t1^2] and E[exp(t1)].
  RngStream rng(6);
  const int n = 2000000;
  double sum_sq = 0.0, sum_exp = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t1 = 3.0 * rng.normal();
    sum_sq += t1 * t1;
    sum_exp += std::exp(t1);
  }
  CHECK(sum_sq / n == doctest::Approx(9.0).epsilon(0.01));
  CHECK(sum_exp / n == doctest::Approx(std::exp(4.5)).epsilon(0.2));  // heavy tail

  RngStream rng2(7);
  check_gradient(*t, rng2, 1.0);
}

TEST_CASE("gmm25 symmetry, moments, and modes") {
  TargetPtr t = make_gmm25(10);
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(10);
  const Eigen::VectorXd g0 = t->gradient(zero);
  CHECK(std::abs(g0[0]) < 1e-12);
  CHECK(std::abs(g0[1]) < 1e-12);

  CHECK((*t->exact_second_moments())[0] == doctest::Approx(8.3).epsilon(1e-12));

  // Monte Carlo oracle: draw from the mixture directly.
  RngStream rng(8);
  const double sd = std::sqrt(Gmm25Target::kComponentVariance);
  const auto centers = Gmm25Target::centers();
  double sum_sq = 0.0;
  const int n = 1000000;
  for (int i = 0; i < n; ++i) {
    const auto& c = centers[rng.below(25)];
    const double x = c[0] + sd * rng.normal();
    sum_sq += x * x;
  }
  CHECK(sum_sq / n == doctest::Approx(8.3).epsilon(0.01));

  Eigen::VectorXd mode = zero, saddle = zero;
  mode[0] = -4.0;
  mode[1] = -4.0;
  saddle[0] = -3.0;
  saddle[1] = -3.0;
  CHECK(t->log_density(mode) > t->log_density(saddle));

  RngStream rng2(9);
  check_gradient(*t, rng2, 3.0);
}

TEST_CASE("noise spec validation") {
  RngStream rng(10);
  const Eigen::VectorXd ev = log_spaced(6, 0.01, 100.0);
  const NoiseSpec spec = NoiseSpec::make(NoiseKind::correlated, 6, 256.0, ev, rng);
  CHECK((spec.rotation.transpose() * spec.rotation - Eigen::MatrixXd::Identity(6, 6))
            .cwiseAbs()
            .maxCoeff() < 1e-10);
  Eigen::VectorXd bad = ev;
  bad[2] = -1.0;
  CHECK_THROWS(NoiseSpec::make(NoiseKind::diagonal, 6, 256.0, bad, rng));
}

TEST_CASE("noise injectors have the stated laws") {
  RngStream setup(11);
  const int d = 6;
  const Eigen::VectorXd ev = log_spaced(d, 0.25, 4.0);
  const Eigen::VectorXd grad = Eigen::VectorXd::Zero(d);
  const Eigen::VectorXd theta = Eigen::VectorXd::Zero(d);
  const int n = 100000;

  SUBCASE("none is the identity") {
    RngStream rng(12);
    Eigen::VectorXd g(d);
    g << 1, 2, 3, 4, 5, 6;
    CHECK(inject_noise(g, theta, NoiseSpec::none_spec(), rng) == g);
  }

  SUBCASE("isotropic variance is base_scale per component") {
    const NoiseSpec spec = NoiseSpec::make(NoiseKind::isotropic, d, 256.0, {}, setup);
    RngStream rng(13);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd e = inject_noise(grad, theta, spec, rng);
      mean += e;
      sq += e.cwiseProduct(e);
    }
    mean /= n;
    sq /= n;
    CHECK(mean.cwiseAbs().maxCoeff() < 0.5);  // mean-zero within ~3 sigma MC error
    for (int j = 0; j < d; ++j) CHECK(sq[j] == doctest::Approx(256.0).epsilon(0.03));
  }

  SUBCASE("correlated covariance matches entrywise") {
    const NoiseSpec spec = NoiseSpec::make(NoiseKind::correlated, d, 16.0, ev, setup);
    const Eigen::MatrixXd v_corr =
        spec.rotation.transpose() * (16.0 * ev).asDiagonal() * spec.rotation;
    RngStream rng(14);
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < n; ++i) {
      const Eigen::VectorXd e = inject_noise(grad, theta, spec, rng);
      cov += e * e.transpose();
    }
    cov /= n;
    const double scale = v_corr.cwiseAbs().maxCoeff();
    CHECK((cov - v_corr).cwiseAbs().maxCoeff() < 0.05 * scale);
  }

  SUBCASE("spatial variation scales the correlated draw") {
    const NoiseSpec spec =
        NoiseSpec::make(NoiseKind::spatially_varied, d, 16.0, ev, setup, 2.0);
    // At theta_2 = 0 the draw equals the correlated one for the same stream.
    NoiseSpec corr = spec;
    corr.kind = NoiseKind::correlated;
    RngStream ra(15), rb(15);
    const Eigen::VectorXd a = inject_noise(grad, theta, spec, ra);
    const Eigen::VectorXd b = inject_noise(grad, theta, corr, rb);
    CHECK((a - b).norm() == 0.0);

    // At theta_2 = spatial_std the amplitude shrinks by exp(-1/2).
    Eigen::VectorXd shifted = theta;
    shifted[1] = 2.0;
    RngStream rc(15);
    const Eigen::VectorXd c = inject_noise(grad, shifted, spec, rc);
    CHECK((c - std::exp(-0.5) * a).norm() < 1e-12);
  }
}

TEST_CASE("linear regression posterior and mini-batch gradients") {
  RngStream rng(16);
  RegressionData data = synthetic_regression(64, 4, 10.0, 0.5, 2.0, rng);
  LinearRegressionTarget t(data);

  SUBCASE("full-batch indices reproduce the exact gradient") {
    std::vector<int> all(64);
    std::iota(all.begin(), all.end(), 0);
    const Eigen::VectorXd x = rng.normal_vector(4);
    CHECK((t.batch_gradient(x, all) - t.gradient(x)).norm() < 1e-10);
    CHECK(t.batch_log_density(x, all) == doctest::Approx(t.log_density(x)).epsilon(1e-12));
  }

  SUBCASE("average over every batch equals the full gradient") {
    RngStream r2(17);
    RegressionData small = synthetic_regression(8, 3, 2.0, 1.0, 1.0, r2);
    LinearRegressionTarget ts(small);
    const Eigen::VectorXd x = r2.normal_vector(3);
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(3);
    int count = 0;
    for (int i = 0; i < 8; ++i)
      for (int j = i + 1; j < 8; ++j) {
        const int batch[2] = {i, j};
        avg += ts.batch_gradient(x, batch);
        ++count;
      }
    avg /= count;
    CHECK((avg - ts.gradient(x)).norm() < 1e-10);
  }

  SUBCASE("posterior solves the normal equations") {
    const Eigen::MatrixXd a =
        data.design.transpose() * data.design / data.noise_var +
        Eigen::MatrixXd::Identity(4, 4) / data.prior_var;
    const Eigen::VectorXd rhs = data.design.transpose() * data.responses / data.noise_var;
    CHECK((a * t.posterior_mean() - rhs).norm() < 1e-9);
    CHECK((a * t.posterior_covariance() - Eigen::MatrixXd::Identity(4, 4)).norm() < 1e-9);
    // The gradient vanishes at the mean.
    CHECK(t.gradient(t.posterior_mean()).norm() < 1e-9);
  }

  SUBCASE("gradient matches finite differences") {
    RngStream r3(18);
    check_gradient(t, r3, 1.0, 50);
  }

  SUBCASE("empty batch errors") {
    CHECK_THROWS_WITH_AS(t.batch_gradient(Eigen::VectorXd::Zero(4), {}), "empty batch",
                         std::invalid_argument);
  }
}

TEST_CASE("synthetic design hits the requested condition number") {
  RngStream rng(19);
  RegressionData data = synthetic_regression(256, 5, 100.0, 1.0, 1.0, rng);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(data.design);
  const auto& sv = svd.singularValues();
  CHECK(sv[0] / sv[4] == doctest::Approx(100.0).epsilon(1e-8));
}

TEST_CASE("regression CSV round trip") {
  RngStream rng(20);
  RegressionData data = synthetic_regression(16, 3, 1.0, 1.0, 1.0, rng);
  const std::string path = "test_regression_tmp.csv";
  {
    std::ofstream out(path);
    out << "x0,x1,x2,y\n";
    for (int i = 0; i < 16; ++i) {
      for (int j = 0; j < 3; ++j) out << data.design(i, j) << ',';
      out << data.responses[i] << '\n';
    }
  }
  const RegressionData loaded = load_regression_csv(path, 1.0, 1.0);
  CHECK((loaded.design - data.design).cwiseAbs().maxCoeff() < 1e-4);
  CHECK((loaded.responses - data.responses).cwiseAbs().maxCoeff() < 1e-4);
  std::remove(path.c_str());

  CHECK_THROWS(load_regression_csv("does_not_exist.csv"));
}
