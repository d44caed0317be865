#include <doctest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "busuq/multilink.hpp"

using namespace busuq;
using namespace busuq::multilink;
using busuq::gaussian::GaussianLinkFit;

namespace {

GaussianLinkFit law(double mean, double sigma) {
  GaussianLinkFit f;
  f.mean = mean;
  f.sigma = sigma;
  return f;
}

LinkDistributions uniform_laws(int horizons, int links, double mean, double sigma) {
  LinkDistributions d(horizons, links);
  for (int h = 1; h <= horizons; ++h)
    for (int l = 0; l < links; ++l) d.set(h, l, law(mean, sigma));
  return d;
}

RoutePlan plan_over(int first, int count, int start = 1) {
  RoutePlan p;
  for (int l = first; l < first + count; ++l) p.links.push_back(l);
  p.start_horizon = start;
  return p;
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / (v.size() - 1));
}

// Two-sample Kolmogorov-Smirnov statistic.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    d = std::max(d, std::abs(double(i) / a.size() - double(j) / b.size()));
  }
  return d;
}

}  // namespace

TEST_CASE("two Gaussian links add up") {
  Rng rng(1);
  const auto dists = uniform_laws(3, 2, 60.0, 10.0);
  const auto set = sample_route_time(dists, plan_over(0, 2), 100000, rng);
  CHECK(set.size() == 100000);
  CHECK(mean_of(set.samples) == doctest::Approx(120.0).epsilon(0.01));
  CHECK(sd_of(set.samples) == doctest::Approx(std::sqrt(200.0)).epsilon(0.01));
  for (std::size_t i = 0; i < 1000; ++i) CHECK(set.horizon_used(i, 1) == 1);
  CHECK(*std::min_element(set.samples.begin(), set.samples.end()) >= 2.0);
}

TEST_CASE("a long first link forces rollover") {
  Rng rng(2);
  auto dists = uniform_laws(3, 2, 100.0, 5.0);
  dists.set(1, 0, law(1000.0, 10.0));
  const auto set = sample_route_time(dists, plan_over(0, 2), 2000, rng);
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(set.horizon_used(i, 0) == 1);
    CHECK(set.horizon_used(i, 1) == 2);
  }
  // Past the last horizon the final laws are reused.
  RoutePlan late = plan_over(0, 2, 3);
  dists.set(3, 0, law(5000.0, 10.0));
  const auto capped = sample_route_time(dists, late, 50, rng);
  for (std::size_t i = 0; i < capped.size(); ++i) CHECK(capped.horizon_used(i, 1) == 3);
  CHECK(rollover_horizon(late, 1e9, 3) == 3);
}

TEST_CASE("missing cells and bad plans are rejected") {
  Rng rng(3);
  LinkDistributions dists(2, 3);
  for (int l = 0; l < 3; ++l) dists.set(1, l, law(50.0, 5.0));
  dists.set(2, 0, law(50.0, 5.0));
  dists.set(2, 2, law(50.0, 5.0));
  try {
    sample_route_time(dists, plan_over(0, 3), 10, rng);
    FAIL("expected rejection");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("link 1 at horizon 2") != std::string::npos);
  }
  RoutePlan gap;
  gap.links = {0, 2};
  CHECK_THROWS_AS(gap.validate(3, 2), InputError);
  CHECK_THROWS_AS(RoutePlan{}.validate(3, 2), InputError);
  CHECK_THROWS_AS(plan_over(0, 4).validate(3, 2), InputError);
  CHECK_THROWS_AS(plan_over(0, 2, 3).validate(3, 2), InputError);
}

TEST_CASE("a 39-link route is fast") {
  Rng rng(4);
  const auto dists = uniform_laws(3, 39, 45.0, 12.0);
  const auto t0 = std::chrono::steady_clock::now();
  const auto set = sample_route_time(dists, plan_over(0, 39), 500, rng);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(set.size() == 500);
  CHECK(secs < 1.0);
}

TEST_CASE("rollover changes nothing when horizons share a law") {
  Rng rng(5);
  constexpr int n = 10000;
  const auto dists = uniform_laws(3, 4, 400.0, 80.0);
  auto rolling = plan_over(0, 4);
  auto fixed = plan_over(0, 4);
  fixed.frequency = 1000000000;
  const auto a = sample_route_time(dists, rolling, n, rng);
  const auto b = sample_route_time(dists, fixed, n, rng);
  bool switched = false;
  for (std::size_t i = 0; i < a.size() && !switched; ++i) switched = a.horizon_used(i, 3) > 1;
  CHECK(switched);
  const double critical = 1.358 * std::sqrt(2.0 / n);
  CHECK(ks_statistic(a.samples, b.samples) < critical);
}

TEST_CASE("adding a link increases the mean route time") {
  Rng rng(6);
  const auto dists = uniform_laws(2, 5, 30.0, 8.0);
  double previous = 0.0;
  for (int count = 1; count <= 5; ++count) {
    const auto set = sample_route_time(dists, plan_over(0, count), 5000, rng);
    const double m = mean_of(set.samples);
    CHECK(m > previous);
    previous = m;
  }
}

TEST_CASE("route from joint network draws") {
  std::vector<Eigen::MatrixXd> draws(3, Eigen::MatrixXd::Constant(2, 3, 10.0));
  draws[1](0, 1) = 0.2;  // clamped at one second
  draws[2](1, 2) = 99.0;
  RoutePlan p = plan_over(1, 2);
  p.frequency = 15;
  const auto set = route_from_draws(draws, p);
  CHECK(set.source == SourceModel::Brnn);
  CHECK(set.samples[0] == 20.0);
  CHECK(set.samples[1] == 11.0);
  CHECK(set.horizon_used(0, 1) == 1);
  CHECK(set.samples[2] == 10.0 + 10.0);
  p.frequency = 10;
  const auto rolled = route_from_draws(draws, p);
  CHECK(rolled.horizon_used(2, 1) == 2);
  CHECK(rolled.samples[2] == 109.0);
}

TEST_CASE("difference distribution") {
  const std::vector<double> a{100.0, 110.0}, b{90.0, 95.0};
  const auto d = diff_distribution(a, b);
  CHECK(d.samples == std::vector<double>{10.0, 15.0});
  CHECK(d.median() == doctest::Approx(12.5));
  CHECK(d.quantiles.size() == d.levels.size());

  const auto self = diff_distribution(a, a);
  for (double v : self.samples) CHECK(v == 0.0);

  const std::vector<double> shorter{1.0};
  CHECK(diff_distribution(a, shorter).samples.size() == 1);
  CHECK_THROWS_AS(diff_distribution(a, std::vector<double>{}), InputError);

  Rng rng(7);
  constexpr int n = 100000;
  std::normal_distribution<double> na(120.0, 15.0), nb(100.0, 10.0);
  std::vector<double> xa(n), xb(n);
  for (int i = 0; i < n; ++i) xa[i] = na(rng), xb[i] = nb(rng);
  const auto g = diff_distribution(xa, xb);
  CHECK(mean_of(g.samples) == doctest::Approx(20.0).epsilon(0.02));
  CHECK(sd_of(g.samples) == doctest::Approx(std::sqrt(325.0)).epsilon(0.02));

  const auto back = diff_distribution(xb, xa);
  for (int i = 0; i < n; i += 97) CHECK(back.samples[i] == -g.samples[i]);
}

TEST_CASE("empirical intervals") {
  std::vector<double> s(100);
  std::iota(s.begin(), s.end(), 1.0);
  std::shuffle(s.begin(), s.end(), Rng(8));
  const auto [lo, hi] = empirical_interval(s, 0.8);
  CHECK(lo == doctest::Approx(10.9));
  CHECK(hi == doctest::Approx(90.1));
  const auto [lo1, hi1] = empirical_interval(s, 1.0 - 1e-12);
  CHECK(lo1 == doctest::Approx(1.0));
  CHECK(hi1 == doctest::Approx(100.0));
  CHECK_THROWS_AS(empirical_interval(std::vector<double>(19, 1.0), 0.5), InputError);
  CHECK_THROWS_AS(empirical_interval(s, 1.0), InputError);

  // Sort oracle with a hand-rolled interpolation at p(n-1).
  Rng rng(9);
  std::uniform_int_distribution<int> size(20, 300);
  std::uniform_real_distribution<double> alpha(0.05, 0.99);
  std::lognormal_distribution<double> value(5.0, 0.6);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> x(size(rng));
    for (auto& v : x) v = value(rng);
    const double a = alpha(rng);
    auto sorted = x;
    std::sort(sorted.begin(), sorted.end());
    auto oracle = [&](double p) {
      const double pos = p * (sorted.size() - 1);
      const std::size_t k = static_cast<std::size_t>(pos);
      if (k + 1 >= sorted.size()) return sorted.back();
      return sorted[k] + (pos - k) * (sorted[k + 1] - sorted[k]);
    };
    const auto [l, u] = empirical_interval(x, a);
    CHECK(l == doctest::Approx(oracle((1 - a) / 2)).epsilon(1e-12));
    CHECK(u == doctest::Approx(oracle((1 + a) / 2)).epsilon(1e-12));
  }
}

TEST_CASE("sample export") {
  Rng rng(10);
  const auto set = sample_route_time(uniform_laws(1, 1, 80.0, 4.0), plan_over(0, 1), 25, rng, SourceModel::Kalman);
  const auto summary = set.summary();
  CHECK(summary["source"] == "kalman");
  CHECK(summary["count"] == 25);
  CHECK(summary["mean"].get<double>() == doctest::Approx(mean_of(set.samples)));
  const auto path = std::filesystem::temp_directory_path() / "busuq_test_samples.csv";
  write_samples_csv(path, set);
  std::ifstream in(path);
  std::string line;
  int rows = 0;
  std::getline(in, line);
  CHECK(line == "seconds");
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 25);
  std::filesystem::remove(path);
  CHECK(source_from_string("brnn") == SourceModel::Brnn);
  CHECK_THROWS_AS(source_from_string("lstm"), InputError);
}
