#include <doctest.h>

#include <random>

#include "busuq/normal.hpp"

using namespace busuq;

TEST_CASE("normal cdf at reference points") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(normal_cdf(1.2815515655446004) == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(normal_cdf(-1.959963984540054) == doctest::Approx(0.025).epsilon(1e-12));
  CHECK(normal_pdf(0.0) == doctest::Approx(0.3989422804014327).epsilon(1e-14));
}

TEST_CASE("normal quantile matches reference values") {
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(normal_quantile(0.9) == doctest::Approx(1.2815515655446004).epsilon(1e-12));
  CHECK(normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-9));
}

TEST_CASE("quantile inverts cdf within 1e-7 everywhere") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(1e-9, 1.0 - 1e-9);
  double worst = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double p = u(rng);
    worst = std::max(worst, std::abs(normal_cdf(normal_quantile(p)) - p));
  }
  CHECK(worst < 1e-7);
}

TEST_CASE("quantile rejects levels outside (0,1)") {
  CHECK_THROWS(normal_quantile(0.0));
  CHECK_THROWS(normal_quantile(1.0));
  CHECK_THROWS(normal_quantile(-0.3));
}
