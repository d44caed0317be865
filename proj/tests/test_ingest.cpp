#include <doctest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "busuq/ingest.hpp"

using namespace busuq;
using namespace busuq::ingest;

namespace {

const Seconds kMonday = parse_rfc3339("2020-08-03T00:00:00Z");

GridConfig make_grid(int links, int weeks, int u = 32, int k = 3) {
  GridConfig g;
  g.n_links = links;
  g.window_u = u;
  g.horizon_k = k;
  g.period_start = kMonday;
  g.period_end = kMonday + weeks * kSecondsPerWeek;
  return g;
}

// Dense synthetic observations: every cell of every link observed with
// probability `keep`.
std::vector<Observation> dense_observations(int links, int weeks, double keep, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 5.0);
  std::vector<Observation> out;
  const Seconds steps = weeks * kSecondsPerWeek / 900;
  for (Seconds s = 0; s < steps; ++s) {
    for (int l = 0; l < links; ++l) {
      if (u(rng) > keep) continue;
      out.push_back({std::to_string(l), kMonday + s * 900 + 17, 60.0 + 10.0 * l + std::abs(n(rng)) + 1.0});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("rfc3339 round trip and offsets") {
  CHECK(format_rfc3339(kMonday) == "2020-08-03T00:00:00Z");
  CHECK(parse_rfc3339("2020-08-03T02:00:00+02:00") == kMonday);
  CHECK(parse_rfc3339("2020-08-03T00:00:00.750Z") == kMonday);
  CHECK_THROWS_AS(parse_rfc3339("03/08/2020 10:00"), InputError);
}

TEST_CASE("day of week and time of day bins") {
  const auto g = make_grid(1, 1);
  CHECK(g.day_of_week(0) == 0);
  CHECK(g.day_of_week(96) == 1);
  CHECK(g.day_of_week(6 * 96 + 95) == 6);
  CHECK(g.tod_bins() == 96);
  CHECK(g.time_of_day_bin(48) == 48);
  CHECK(g.time_of_day_bin(96 + 3) == 3);
}

TEST_CASE("snap_to_grid uses floor division and averages cells") {
  auto g = make_grid(1, 1);
  LinkIndex links({"a"});
  std::vector<Observation> obs{{"a", kMonday + 12 * 3600 + 7 * 60 + 30, 80.0},
                               {"a", kMonday + 12 * 3600 + 14 * 60 + 59, 100.0}};
  const auto raw = snap_to_grid(obs, g, links);
  CHECK(raw.count(48, 0) == 2);
  CHECK(raw.mean(48, 0) == doctest::Approx(90.0));
  CHECK(raw.count(47, 0) == 0);
  CHECK(std::isnan(raw.mean(47, 0)));
  CHECK(raw.count(49, 0) == 0);

  SUBCASE("empty observation list gives an all-missing grid") {
    const auto empty = snap_to_grid({}, g, links);
    CHECK(empty.count.sum() == 0);
  }
  SUBCASE("unknown link id is rejected by name") {
    std::vector<Observation> bad{{"zz", kMonday, 10.0}};
    try {
      snap_to_grid(bad, g, links);
      FAIL("expected rejection");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("zz") != std::string::npos);
    }
  }
  SUBCASE("observations outside the period are rejected") {
    std::vector<Observation> bad{{"a", g.period_end, 10.0}};
    CHECK_THROWS_AS(snap_to_grid(bad, g, links), InputError);
  }
}

TEST_CASE("conditional means: two-point bin, fallback, variance floor") {
  auto g = make_grid(2, 2);
  LinkIndex links({"0", "1"});
  const Seconds monday_8am = kMonday + 8 * 3600;
  std::vector<Observation> obs{{"0", monday_8am, 60.0},
                               {"0", monday_8am + kSecondsPerWeek, 80.0},
                               {"1", monday_8am, 60.0},
                               {"1", monday_8am + 3600, 60.0},
                               {"1", monday_8am + kSecondsPerWeek, 60.0}};
  const auto raw = snap_to_grid(obs, g, links);
  const auto table = build_conditional_means(raw, g, g.steps());
  const auto b = table.lookup(0, 0, 32);
  CHECK(b.mean == doctest::Approx(70.0));
  CHECK(b.variance == doctest::Approx(100.0));
  CHECK(b.count == 2);

  // Empty bin: link global (70, 100).
  const auto fb = table.lookup(0, 3, 10);
  CHECK(fb.count == 0);
  CHECK(fb.mean == doctest::Approx(70.0));
  CHECK(fb.variance == doctest::Approx(100.0));

  // Constant link: variance 0 floored to 1.
  const auto c = table.lookup(1, 0, 32);
  CHECK(c.mean == doctest::Approx(60.0));
  CHECK(c.variance == doctest::Approx(kVarianceFloor));
  CHECK(table.warnings.empty());
}

TEST_CASE("short training period records a warning") {
  auto g = make_grid(1, 1);
  LinkIndex links({"a"});
  std::vector<Observation> obs{{"a", kMonday, 50.0}};
  const auto raw = snap_to_grid(obs, g, links);
  const auto table = build_conditional_means(raw, g, 96);
  CHECK_FALSE(table.warnings.empty());
}

TEST_CASE("impute, standardize and destandardize") {
  auto g = make_grid(1, 1);
  LinkIndex links({"a"});
  const Seconds t = kMonday + 8 * 3600;
  // Table written by hand: mean 85, variance 25 everywhere.
  ConditionalMeanTable table(1, g.tod_bins());
  table.bin(0, 0, 32) = {85.0, 25.0, 4};
  table.link_global(0) = {85.0, 25.0, 4};
  table.global() = {85.0, 25.0, 4};
  std::vector<Observation> obs{{"a", t, 95.0}, {"a", t + 900, 85.0}};
  const auto raw = snap_to_grid(obs, g, links);
  const auto z = impute_and_standardize(raw, table, g);
  CHECK(z.values(32, 0) == doctest::Approx(2.0));
  CHECK(z.mask(32, 0) == 1.0);
  CHECK(z.values(33, 0) == doctest::Approx(0.0));
  CHECK(z.mask(33, 0) == 1.0);
  CHECK(z.values(34, 0) == doctest::Approx(0.0));
  CHECK(z.mask(34, 0) == 0.0);
  CHECK(destandardize(0.0, 0, 32, table, g) == doctest::Approx(85.0));
  CHECK(destandardize(2.0, 0, 32, table, g) == doctest::Approx(95.0));
}

TEST_CASE("standardization round-trips on random cells") {
  const auto obs = dense_observations(3, 3, 0.9, 11);
  auto g = make_grid(3, 3);
  const auto data = prepare(obs, g, {1, 1, 1}, {});
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<Eigen::Index> step(0, data.grid.steps() - 1);
  std::uniform_int_distribution<int> link(0, 2);
  std::uniform_real_distribution<double> secs(1.0, 500.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = step(rng);
    const int l = link(rng);
    const double v = secs(rng);
    const double back = destandardize(standardize(v, l, s, data.table, data.grid), l, s, data.table, data.grid);
    worst = std::max(worst, std::abs(back - v));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("every cell finite and mask mirrors raw emptiness") {
  const auto obs = dense_observations(4, 3, 0.7, 5);
  const auto data = prepare(obs, make_grid(4, 3), {1, 1, 1});
  CHECK(data.standardized.values.allFinite());
  for (Eigen::Index s = 0; s < data.grid.steps(); ++s)
    for (int l = 0; l < 4; ++l) CHECK_EQ(data.standardized.mask(s, l) == 0.0, data.raw.count(s, l) == 0);
}

TEST_CASE("fold_windows counts and alignment") {
  SUBCASE("exactly U+K steps gives one sample") {
    auto g = make_grid(2, 1, 4, 2);
    StandardizedGrid z{Eigen::MatrixXd::Random(6, 2), Eigen::MatrixXd::Ones(6, 2)};
    const auto t = fold_range(z, g, 0, 6);
    CHECK(t.samples() == 1);
    CHECK(t.y(0, 1, 1) == doctest::Approx(static_cast<float>(z.values(5, 1))));
    CHECK_THROWS_AS(fold_range(z, g, 0, 5), InputError);
  }
  SUBCASE("count = steps - U - K + 1 on random sizes") {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 30; ++trial) {
      const int u = 1 + static_cast<int>(rng() % 10), k = 1 + static_cast<int>(rng() % 4);
      const int steps = u + k + static_cast<int>(rng() % 40);
      auto g = make_grid(2, 1, u, k);
      StandardizedGrid z{Eigen::MatrixXd::Random(steps, 2), Eigen::MatrixXd::Ones(steps, 2)};
      const auto t = fold_range(z, g, 0, steps);
      CHECK(t.samples() == steps - u - k + 1);
      const auto i = t.samples() - 1;
      CHECK(t.x(i, u - 1, 0) == static_cast<float>(z.values(i + u - 1, 0)));
      CHECK(t.y(i, k - 1, 1) == static_cast<float>(z.values(i + u + k - 1, 1)));
    }
  }
  SUBCASE("case-study dimensions with one guard step") {
    auto g = make_grid(29, 17);
    const Eigen::Index steps = g.steps();
    StandardizedGrid z{Eigen::MatrixXd::Zero(steps, 29), Eigen::MatrixXd::Ones(steps, 29)};
    FoldOptions guard;
    guard.trailing_guard_steps = 1;
    const auto splits = fold_windows(z, g, split_bounds(g, {13, 2, 2}), guard);
    CHECK(splits.train.x.shape == std::vector<Eigen::Index>{8701, 32, 29});
    CHECK(splits.train.y.shape == std::vector<Eigen::Index>{8701, 3, 29});
    CHECK(splits.validation.samples() == 1309);
    CHECK(splits.test.samples() == 1309);
  }
}

TEST_CASE("appending test rows does not change training tensors") {
  const auto obs = dense_observations(3, 3, 0.8, 21);
  const auto a = prepare(obs, make_grid(3, 3), {1, 1, 1});
  auto more = obs;
  for (auto& o : dense_observations(3, 3, 0.8, 99))
    if (o.observed_at >= kMonday + 2 * kSecondsPerWeek) more.push_back(o);
  const auto b = prepare(more, make_grid(3, 3), {1, 1, 1});
  CHECK(a.splits.train.x.data == b.splits.train.x.data);
  CHECK(a.splits.train.y.data == b.splits.train.y.data);
}

TEST_CASE("csv parsing") {
  std::istringstream ok("link_id,observed_at,travel_time_s\n7,2020-08-03T00:01:00Z,61.5\n");
  const auto obs = read_observations_csv(ok);
  REQUIRE(obs.size() == 1);
  CHECK(obs[0].link_id == "7");
  CHECK(obs[0].travel_time == doctest::Approx(61.5));

  std::istringstream bad("link_id,observed_at,travel_time_s\n7,2020-08-03T00:01:00Z,61.5\n7,notatime,3\n");
  try {
    read_observations_csv(bad);
    FAIL("expected rejection");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::istringstream empty("link_id,observed_at,travel_time_s\n");
  const auto none = read_observations_csv(empty);
  CHECK(none.empty());
  try {
    prepare(none, make_grid(1, 1), {1, 0, 0});
    FAIL("expected rejection");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("no observations") != std::string::npos);
  }
}

TEST_CASE("prepared directory round trip") {
  const auto obs = dense_observations(2, 3, 0.9, 4);
  const auto a = prepare(obs, make_grid(2, 3, 8, 2), {1, 1, 1});
  const auto dir = std::filesystem::temp_directory_path() / "busuq_test_prepared";
  std::filesystem::remove_all(dir);
  save_prepared(a, dir);
  const auto b = load_prepared(dir);
  CHECK(b.grid.n_links == 2);
  CHECK(b.links.ids() == a.links.ids());
  CHECK(b.splits.test.x.data == a.splits.test.x.data);
  CHECK(b.splits.validation.mask_y.data == a.splits.validation.mask_y.data);
  CHECK(b.table.lookup(1, 40, b.grid).mean == doctest::Approx(a.table.lookup(1, 40, a.grid).mean));
  CHECK(b.observation_count == a.observation_count);
  CHECK(describe(b) == describe(a));
  // Two links, 3 weeks of 672 steps, U=8, K=2: 672 - 10 + 1 windows per split.
  CHECK(b.splits.train.samples() == 663);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cross-fitted training rows use the other training weeks only") {
  const auto obs = dense_observations(2, 4, 0.9, 8);
  ingest::StandardizeOptions off;
  off.cross_fit_training = false;
  const auto plain = prepare(obs, make_grid(2, 4), {2, 1, 1}, {}, off);
  const auto fitted = prepare(obs, make_grid(2, 4), {2, 1, 1});
  const auto week = plain.grid.steps_per_week();
  // Oracle for one week-0 cell: statistics of the same bin in week 1 alone.
  const int l = 1;
  Eigen::Index s = 40;
  while (!(plain.raw.observed(s, l) && plain.raw.observed(s + week, l))) ++s;
  const double other = plain.raw.mean(s + week, l);
  // One other observation: mean from the bin, variance from the link-global
  // statistics of week 1.
  double m = 0.0, m2 = 0.0;
  int n = 0;
  for (Eigen::Index t = week; t < 2 * week; ++t) {
    if (!plain.raw.observed(t, l)) continue;
    ++n;
    const double d = plain.raw.mean(t, l) - m;
    m += d / n;
    m2 += d * (plain.raw.mean(t, l) - m);
  }
  const double expected = (plain.raw.mean(s, l) - other) / std::sqrt(std::max(m2 / n, kVarianceFloor));
  CHECK(fitted.standardized.values(s, l) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(fitted.standardized.values(s, l) != plain.standardized.values(s, l));
  // Rows after training are untouched, masks identical.
  CHECK(fitted.standardized.values.bottomRows(2 * week) == plain.standardized.values.bottomRows(2 * week));
  CHECK(fitted.standardized.mask == plain.standardized.mask);
  CHECK(fitted.splits.test.x.data == plain.splits.test.x.data);
}

TEST_CASE("bin variances shrink toward the link's mean within-bin variance") {
  const auto g = make_grid(2, 1);
  ConditionalMeanTable table(2, g.tod_bins());
  table.bin(0, 0, 10) = {50.0, 40.0, 4};
  table.bin(0, 1, 10) = {55.0, 10.0, 6};
  table.bin(0, 2, 10) = {60.0, 99.0, 1};  // single observation: not pooled, not used for pooling
  table.link_global(0) = {55.0, 300.0, 11};
  table.link_global(1) = {70.0, 200.0, 0};
  table.global() = {60.0, 250.0, 11};
  table.set_variance_pooling(2.0);
  CHECK(table.pooled_variance(0) == doctest::Approx(25.0));
  // (4 * 40 + 2 * 25) / 6 and (6 * 10 + 2 * 25) / 8
  CHECK(table.lookup(0, 0, 10).variance == doctest::Approx(35.0));
  CHECK(table.lookup(0, 1, 10).variance == doctest::Approx(13.75));
  CHECK(table.lookup(0, 2, 10).variance == doctest::Approx(300.0));
  table.set_variance_pooling(0.0);
  CHECK(table.lookup(0, 0, 10).variance == doctest::Approx(40.0));
  CHECK_THROWS_AS(table.set_variance_pooling(-1.0), InputError);

  table.set_variance_pooling(2.0);
  const auto back = ConditionalMeanTable::from_json(table.to_json());
  CHECK(back.lookup(0, 0, 10).variance == doctest::Approx(35.0));
}
