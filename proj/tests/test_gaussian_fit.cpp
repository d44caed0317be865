#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "busuq/gaussian_fit.hpp"
#include "busuq/normal.hpp"

using namespace busuq;
using namespace busuq::gaussian;

namespace {

const std::vector<double> kLevels{0.025, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80, 0.90, 0.95, 0.975};

std::vector<double> gaussian_quantiles(double mean, double sigma, const std::vector<double>& levels) {
  std::vector<double> q;
  for (double p : levels) q.push_back(mean + sigma * normal_quantile(p));
  return q;
}

// Brute-force minimizer of the fit objective over sigma in (0, 200].
double grid_oracle(double mean, const std::vector<double>& q, const std::vector<double>& levels) {
  double best = 0.01, best_cost = std::numeric_limits<double>::infinity();
  for (int i = 1; i <= 20000; ++i) {
    const double s = 0.01 * i;
    const double c = fit_objective(mean, s, q, levels);
    if (c < best_cost) best_cost = c, best = s;
  }
  return best;
}

}  // namespace

TEST_CASE("exact Gaussian quantiles recover sigma") {
  for (double sigma : {0.5, 3.0, 25.0, 140.0}) {
    const auto fit = fit_sigma(300.0, gaussian_quantiles(300.0, sigma, kLevels), kLevels);
    CHECK(fit.sigma == doctest::Approx(sigma).epsilon(1e-3));
    CHECK(fit.converged);
    CHECK(fit.residual < 1e-6);
    CHECK(fit.mean == 300.0);
  }
  const std::vector<double> two{0.1, 0.9};
  const double a = 40.0;
  const std::vector<double> sym{500.0 - a, 500.0 + a};
  CHECK(fit_sigma(500.0, sym, two).sigma == doctest::Approx(a / 1.2815515655446004).epsilon(1e-3));
}

TEST_CASE("noisy quantiles match a grid-search oracle") {
  Rng rng(1);
  std::uniform_real_distribution<double> jitter(-2.0, 2.0), spread(5.0, 120.0);
  for (int trial = 0; trial < 30; ++trial) {
    const double sigma = spread(rng);
    auto q = gaussian_quantiles(200.0, sigma, kLevels);
    for (auto& x : q) x += jitter(rng);
    std::sort(q.begin(), q.end());
    const auto fit = fit_sigma(200.0, q, kLevels);
    CHECK(std::abs(fit.sigma - grid_oracle(200.0, q, kLevels)) < 0.5);
  }
}

TEST_CASE("degenerate and invalid inputs") {
  const std::vector<double> flat(kLevels.size(), 80.0);
  const auto fit = fit_sigma(80.0, flat, kLevels);
  CHECK(fit.sigma == kSigmaFloor);
  CHECK(fit.residual > 0.0);
  const std::vector<double> one{0.5}, q1{10.0};
  CHECK_THROWS_AS(fit_sigma(10.0, q1, one), InputError);
  const std::vector<double> unsorted{3.0, 1.0};
  const std::vector<double> two{0.1, 0.9};
  CHECK_THROWS_AS(fit_sigma(2.0, unsorted, two), InputError);
  const std::vector<double> q2{1.0, 3.0};
  const std::vector<double> three{0.1, 0.5, 0.9};
  CHECK_THROWS_AS(fit_sigma(2.0, q2, three), InputError);
}

TEST_CASE("fit is translation and scale equivariant") {
  Rng rng(2);
  std::uniform_real_distribution<double> jitter(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    auto q = gaussian_quantiles(100.0, 20.0, kLevels);
    for (auto& x : q) x += jitter(rng);
    std::sort(q.begin(), q.end());
    const double base = fit_sigma(100.0, q, kLevels).sigma;
    auto shifted = q;
    for (auto& x : shifted) x += 1234.5;
    CHECK(fit_sigma(1334.5, shifted, kLevels).sigma == doctest::Approx(base).epsilon(1e-9));
    auto scaled = q;
    for (auto& x : scaled) x = 100.0 + 3.5 * (x - 100.0);
    CHECK(fit_sigma(100.0, scaled, kLevels).sigma == doctest::Approx(3.5 * base).epsilon(1e-6));
  }
}

TEST_CASE("a fit takes well under a millisecond") {
  const auto q = gaussian_quantiles(180.0, 33.0, kLevels);
  constexpr int n = 2000;
  double sink = 0.0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < n; ++i) sink += fit_sigma(180.0 + i * 1e-3, q, kLevels).sigma;
  const double per_fit = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / n;
  CHECK(sink > 0.0);
  CHECK(per_fit < 1e-3);
}

TEST_CASE("link sampling") {
  Rng rng(3);
  GaussianLinkFit fit;
  fit.mean = 90.0;
  fit.sigma = kSigmaFloor;
  auto s = sample_link(fit, 1000, rng);
  CHECK(*std::max_element(s.begin(), s.end()) - *std::min_element(s.begin(), s.end()) <= 1.0);

  fit.sigma = 12.0;
  constexpr int n = 100000;
  s = sample_link(fit, n, rng);
  const double mean = std::accumulate(s.begin(), s.end(), 0.0) / n;
  CHECK(std::abs(mean - 90.0) < 4.0 * 12.0 / std::sqrt(static_cast<double>(n)));

  fit.mean = 2.0;
  fit.sigma = 10.0;
  s = sample_link(fit, 20000, rng);
  CHECK(*std::min_element(s.begin(), s.end()) >= kTruncationFloor);
}

TEST_CASE("fits CSV") {
  const auto path = std::filesystem::temp_directory_path() / "busuq_test_fits.csv";
  std::vector<FitRow> rows{{0, 1, {}}, {3, 2, {}}};
  rows[1].fit.mean = 61.5;
  rows[1].fit.sigma = 7.25;
  write_fits_csv(path, rows);
  std::ifstream in(path);
  std::string header, a, b;
  std::getline(in, header);
  std::getline(in, a);
  std::getline(in, b);
  CHECK(header == "link,horizon,mean_s,sigma_s,residual");
  CHECK(b.rfind("3,2,61.500000,7.250000,", 0) == 0);
  std::filesystem::remove(path);
}
