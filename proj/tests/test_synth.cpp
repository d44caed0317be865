#include <doctest.h>

#include <map>
#include <random>

#include "busuq/normal.hpp"
#include "busuq/synth.hpp"

using namespace busuq;
using namespace busuq::synth;

TEST_CASE("noiseless limit lies on the deterministic profile") {
  SynthConfig c;
  c.weeks = 1;
  c.noise_sigma = 0.0;
  c.event_rate = 0.0;
  c.missing_rate = 0.0;
  const auto d = generate(c);
  REQUIRE(d.observations.size() == static_cast<std::size_t>(d.total_cells));
  for (const auto& o : d.observations) {
    const auto step = (o.observed_at - c.period_start) / c.frequency;
    CHECK(o.travel_time == doctest::Approx(d.truth.profile(step, std::stoi(o.link_id))).epsilon(1e-12));
  }
}

TEST_CASE("missing rate concentrates") {
  SynthConfig c;
  c.n_links = 16;
  c.weeks = 10;  // 672 steps x 16 links per week
  c.missing_rate = 0.1;
  const auto d = generate(c);
  REQUIRE(d.total_cells >= 100000);
  const double observed = static_cast<double>(d.observations.size()) / static_cast<double>(d.total_cells);
  CHECK(std::abs(observed - 0.9) < 0.01);
}

TEST_CASE("per-cell quantile oracle matches empirical draws") {
  // Re-draw a single cell many times through the generator's law.
  SynthConfig c;
  c.weeks = 1;
  c.noise_sigma = 0.2;
  c.event_rate = 0.02;
  const auto d = generate(c);
  const std::int64_t step = 32;  // Monday 08:00, the peak
  const int link = 2;
  Rng rng(5);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<double> draws(100000);
  for (auto& v : draws) v = d.truth.median(step, link) * std::exp(d.truth.log_sigma(step) * z(rng));
  std::sort(draws.begin(), draws.end());
  for (double p : {0.05, 0.25, 0.5, 0.75, 0.95}) {
    const double emp = draws[static_cast<std::size_t>(p * draws.size())];
    CHECK(std::abs(emp / d.truth.quantile(step, link, p) - 1.0) < 0.01);
  }
  // Lognormal median is the deterministic value.
  CHECK(draws[draws.size() / 2] == doctest::Approx(d.truth.median(step, link)).epsilon(0.01));
}

TEST_CASE("generated cells follow the oracle law") {
  SynthConfig c;
  c.n_links = 3;
  c.weeks = 20;
  c.noise_sigma = 0.15;
  c.missing_rate = 0.0;
  const auto d = generate(c);
  // Probability integral transform of every observation should be uniform.
  std::vector<double> u;
  for (const auto& o : d.observations) {
    const auto step = (o.observed_at - c.period_start) / c.frequency;
    const int l = std::stoi(o.link_id);
    u.push_back(normal_cdf(std::log(o.travel_time / d.truth.median(step, l)) / d.truth.log_sigma(step)));
  }
  std::sort(u.begin(), u.end());
  double ks = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    ks = std::max(ks, std::abs(u[i] - (static_cast<double>(i) + 0.5) / static_cast<double>(u.size())));
  CHECK(ks < 1.36 / std::sqrt(static_cast<double>(u.size())));
}

TEST_CASE("congestion spikes propagate downstream with lag one") {
  SynthConfig c;
  c.n_links = 2;
  c.weeks = 4;
  c.noise_sigma = 0.05;
  c.event_rate = 0.03;
  c.event_magnitude = 1.0;
  c.event_duration = 1;
  c.missing_rate = 0.0;
  const auto d = generate(c);
  const std::int64_t steps = d.total_cells / 2;
  std::vector<double> a(static_cast<std::size_t>(steps)), b(static_cast<std::size_t>(steps));
  for (const auto& o : d.observations) {
    const auto step = (o.observed_at - c.period_start) / c.frequency;
    const double r = std::log(o.travel_time / d.truth.profile(step, std::stoi(o.link_id)));
    (o.link_id == "0" ? a : b)[static_cast<std::size_t>(step)] = r;
  }
  auto xcorr = [&](int lag) {
    double s = 0.0;
    for (std::int64_t t = 0; t + lag < steps; ++t) s += a[static_cast<std::size_t>(t)] * b[static_cast<std::size_t>(t + lag)];
    return s;
  };
  const double c1 = xcorr(1);
  for (int lag : {0, 2, 3}) CHECK(c1 > xcorr(lag));
}

TEST_CASE("truth json round trip and determinism") {
  SynthConfig c;
  c.weeks = 1;
  c.event_rate = 0.01;
  const auto a = generate(c), b = generate(c);
  REQUIRE(a.observations.size() == b.observations.size());
  CHECK(a.observations.back().travel_time == b.observations.back().travel_time);
  const auto t = SynthTruth::from_json(a.truth.to_json());
  CHECK(t.events().size() == a.truth.events().size());
  CHECK(t.quantile(40, 1, 0.9) == doctest::Approx(a.truth.quantile(40, 1, 0.9)).epsilon(1e-12));
  SynthConfig bad;
  bad.missing_rate = 1.5;
  CHECK_THROWS_AS(generate(bad), InputError);
}
