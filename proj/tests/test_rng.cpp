#include <doctest.h>

#include "smile/rng.hpp"

using namespace smile;

TEST_CASE("identical seeds give identical streams") {
  RngStream a(123), b(123);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
  RngStream c(123), d(123);
  for (int i = 0; i < 100; ++i) CHECK(c.normal() == d.normal());
}

TEST_CASE("substreams are distinct") {
  RngStream a = make_stream(7, 0);
  RngStream b = make_stream(7, 1);
  int equal = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++equal;
  CHECK(equal == 0);
}

TEST_CASE("uniform stays in [0,1)") {
  RngStream rng(99);
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("below(n) is in range and covers the range") {
  RngStream rng(5);
  bool seen[7] = {};
  for (int i = 0; i < 1000; ++i) {
    const auto v = rng.below(7);
    CHECK(v < 7);
    seen[v] = true;
  }
  for (bool s : seen) CHECK(s);
}

TEST_CASE("normal has the right first two moments") {
  RngStream rng(2024);
  const int n = 1000000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum_sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.005);
  CHECK(sum_sq / n == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("unit vectors have unit norm") {
  RngStream rng(1);
  for (int d : {2, 5, 32}) {
    const Eigen::VectorXd u = rng.unit_vector(d);
    CHECK(u.norm() == doctest::Approx(1.0).epsilon(1e-12));
  }
}
