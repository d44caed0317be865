#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "busuq/transfer.hpp"

using namespace busuq;
using namespace busuq::transfer;

namespace {

Seconds at(const char* hhmmss) { return ingest::parse_rfc3339(std::string("2020-08-03T") + hhmmss + "Z"); }

Journey journey(const std::string& line, const std::string& id, std::vector<StopEvent> stops) {
  return Journey{line, id, std::move(stops)};
}

multilink::DiffDistribution diff_of(std::vector<double> d) {
  std::vector<double> zero(d.size(), 0.0);
  return multilink::diff_distribution(d, zero);
}

JourneyPair pair_with(double feeder_actual, double receiver_actual, Seconds scheduled = 1000) {
  JourneyPair p;
  p.pair_id = "p";
  p.receiver_origin_scheduled = scheduled - 600;
  p.receiver_scheduled = scheduled;
  p.feeder_scheduled = scheduled - 120;
  p.feeder_actual = static_cast<Seconds>(feeder_actual);
  p.receiver_actual = static_cast<Seconds>(receiver_actual);
  return p;
}

// Predictor that knows the realized times exactly.
PairPredictor exact_predictor() {
  return [](const JourneyPair& p, Rng&) -> std::optional<PairForecast> {
    PairForecast f;
    f.feeder_arrival.assign(25, static_cast<double>(*p.feeder_actual));
    f.receiver_arrival.assign(25, static_cast<double>(*p.receiver_actual));
    return f;
  };
}

}  // namespace

TEST_CASE("journey matching") {
  const std::vector<Journey> feeders{
      journey("A", "a1", {{"x", at("09:50:00"), {}}, {"site", at("10:00:00"), at("10:01:00")}}),
      journey("A", "a2", {{"x", at("10:00:00"), {}}, {"site", at("10:10:00"), {}}}),
      journey("A", "a3", {{"site", at("10:01:00"), {}}}),
  };
  const std::vector<Journey> receivers{
      journey("B", "b1", {{"origin", at("09:50:00"), {}}, {"site", at("10:03:00"), at("10:03:30")}}),
      journey("B", "b2", {{"origin", at("09:52:00"), {}}, {"site", at("10:04:00"), {}}}),
      journey("B", "b3", {{"origin", at("09:30:00"), {}}}),
  };
  const auto pairs = match_journeys(feeders, receivers, "site", 300);
  REQUIRE(pairs.size() == 2);
  CHECK(pairs[0].feeder_id == "a1");
  CHECK(pairs[0].receiver_id == "b1");
  CHECK(pairs[0].feeder_actual == at("10:01:00"));
  CHECK(pairs[0].receiver_origin_scheduled == at("09:50:00"));
  CHECK(pairs[0].receiver_actual == at("10:03:30"));
  // a1 is taken, so b2 claims the next feeder inside its window.
  CHECK(pairs[1].feeder_id == "a3");
  CHECK(pairs[1].receiver_id == "b2");

  // 10:10 arrives after the 10:03 departure.
  const std::vector<Journey> late{journey("A", "a2", {{"site", at("10:10:00"), {}}})};
  CHECK(match_journeys(late, std::span(receivers).first(1), "site", 300).empty());
  // Outside the window on the early side.
  const std::vector<Journey> early{journey("A", "a0", {{"site", at("09:57:00"), {}}})};
  CHECK(match_journeys(early, std::span(receivers).first(1), "site", 300).empty());
  CHECK(match_journeys(early, std::span(receivers).first(1), "site", 360).size() == 1);
  CHECK(match_journeys({}, receivers, "site", 300).empty());
}

TEST_CASE("hold decisions") {
  auto d = hold_decision(diff_of({-30.0, -30.0, -30.0}));
  CHECK(d.statistic == -30.0);
  CHECK(d.hold_at_origin == 0.0);
  CHECK(d.hold_at_site_budget == 0.0);

  d = hold_decision(diff_of({90.0, 100.0, 110.0}));
  CHECK(d.total == 100.0);
  CHECK(d.hold_at_origin == doctest::Approx(80.0));
  CHECK(d.hold_at_site_budget == doctest::Approx(20.0));
  CHECK(d.hold_at_origin + d.hold_at_site_budget == doctest::Approx(d.total));

  d = hold_decision(diff_of({0.0, 0.0}));
  CHECK(d.total == 0.0);
  CHECK(d.hold_at_origin == 0.0);

  d = hold_decision(diff_of({100.0}), 0.25);
  CHECK(d.hold_at_origin == doctest::Approx(25.0));
  CHECK_THROWS_AS(hold_decision(diff_of({1.0}), 1.5), InputError);
  CHECK_THROWS_AS(hold_decision(multilink::DiffDistribution{}), InputError);
}

TEST_CASE("site departure rules") {
  // Feeder lands 50 s after the receiver's scheduled departure.
  const auto p = pair_with(1050, 1000);
  HoldDecision d;
  d.hold_at_origin = 20;
  d.hold_at_site_budget = 10;
  auto o = simulate_pair(p, d, 0.0);
  CHECK(o.delay == doctest::Approx(30.0));  // arrives 1020, waits until 1030
  CHECK_FALSE(o.kept);
  CHECK(o.hold_site == doctest::Approx(10.0));

  d.hold_at_site_budget = 100;
  o = simulate_pair(p, d, 0.0);
  CHECK(o.delay == doctest::Approx(50.0));
  CHECK(o.kept);

  // A late receiver is delayed even without any hold.
  o = simulate_pair(pair_with(900, 1040), HoldDecision{}, 60.0);
  CHECK(o.delay == doctest::Approx(40.0));
  CHECK(o.kept);
}

TEST_CASE("perfect information and exchange time zero") {
  std::vector<JourneyPair> pairs;
  for (int i = 0; i < 50; ++i) {
    // Receiver always on time; the feeder arrives somewhere in the window.
    auto p = pair_with(1000 - 6 * i, 700 + 5 * i);
    p.pair_id = "p" + std::to_string(i);
    pairs.push_back(p);
  }
  PolicyOptions opt;
  opt.exchange_time = 0.0;
  const auto r = evaluate_policy(pairs, exact_predictor(), opt);
  REQUIRE(r.policy.size() == pairs.size());
  for (const auto& o : r.policy) {
    CHECK(o.delay == 0.0);
    CHECK(o.kept);
  }
}

TEST_CASE("limit policies equal the directly computed cohorts") {
  auto fx = make_fixture({});
  const auto r = evaluate_policy(fx.pairs, fx.predictor, {});
  REQUIRE(r.always_hold.size() == fx.pairs.size());
  for (std::size_t i = 0; i < fx.pairs.size(); ++i) {
    const auto& p = fx.pairs[i];
    const double s = static_cast<double>(p.receiver_scheduled);
    const double rcv = static_cast<double>(*p.receiver_actual);
    const double feeder = static_cast<double>(*p.feeder_actual) + 60.0;
    const double keep = std::max({s, rcv, feeder}) - s;
    const double brk = std::max(s, rcv) - s;
    CHECK(r.always_hold[i].delay == keep);
    CHECK(r.always_hold[i].kept);
    CHECK(r.no_hold[i].delay == brk);
    CHECK(r.no_hold[i].kept == (feeder <= std::max(s, rcv)));

    // All budget at the site and no cap behaves like always holding.
    HoldDecision site_only;
    site_only.origin_fraction = 0.0;
    site_only.hold_at_site_budget = std::numeric_limits<double>::infinity();
    CHECK(simulate_pair(p, site_only, 60.0).delay == keep);
    // A zero total is the broken-connection behaviour.
    CHECK(simulate_pair(p, hold_decision(diff_of({-5.0})), 60.0).delay == brk);
  }
}

TEST_CASE("uncertainty-aware holding beats always holding on the fixture") {
  for (std::uint64_t seed : {1, 2, 3}) {
    FixtureConfig c;
    c.seed = seed;
    c.pairs = 1000;
    auto fx = make_fixture(c);
    const auto r = evaluate_policy(fx.pairs, fx.predictor, {});
    const auto policy = summarize(r.policy), keep = summarize(r.always_hold), none = summarize(r.no_hold);
    CAPTURE(policy.mean_delay);
    CAPTURE(keep.mean_delay);
    CHECK(policy.mean_delay < keep.mean_delay);
    CHECK(policy.mean_delay <= 0.8 * keep.mean_delay);
    CHECK(policy.kept > none.kept);
    CHECK(keep.kept == keep.pairs);
  }
}

TEST_CASE("delay grows with the exchange time") {
  auto fx = make_fixture({});
  std::vector<double> previous;
  for (double x : {0.0, 30.0, 60.0, 120.0, 240.0}) {
    PolicyOptions opt;
    opt.exchange_time = x;
    const auto r = evaluate_policy(fx.pairs, fx.predictor, opt);
    if (!previous.empty()) {
      for (std::size_t i = 0; i < r.policy.size(); ++i) CHECK(r.policy[i].delay >= previous[i] - 1e-9);
    }
    previous.clear();
    for (const auto& o : r.policy) previous.push_back(o.delay);
  }
}

TEST_CASE("evaluation is deterministic and skips unusable pairs") {
  auto fx = make_fixture({});
  const auto a = evaluate_policy(fx.pairs, fx.predictor, {});
  const auto b = evaluate_policy(fx.pairs, fx.predictor, {});
  CHECK(a.summary() == b.summary());
  for (std::size_t i = 0; i < a.policy.size(); ++i) CHECK(a.policy[i].delay == b.policy[i].delay);

  auto pairs = fx.pairs;
  pairs[0].feeder_actual.reset();
  pairs[1].pair_id = "unknown";
  pairs[2].pair_id = "boom";
  const PairPredictor wrapped = [&](const JourneyPair& p, Rng& r) {
    if (p.pair_id == "boom") throw InputError("no model for this line");
    return fx.predictor(p, r);
  };
  const auto c = evaluate_policy(pairs, wrapped, {});
  CHECK(c.skipped == 3);
  CHECK(c.policy.size() == pairs.size() - 3);
  CHECK(c.summary()["skipped"] == 3);
  CHECK(c.skipped_reasons[2].find("no model") != std::string::npos);
}

TEST_CASE("pairs, journeys and outcomes files") {
  auto fx = make_fixture({.pairs = 5});
  fx.pairs[3].receiver_actual.reset();
  std::stringstream ss;
  write_pairs_csv(ss, fx.pairs);
  const auto back = read_pairs_csv(ss);
  REQUIRE(back.size() == 5);
  CHECK(back[2].feeder_actual == fx.pairs[2].feeder_actual);
  CHECK_FALSE(back[3].receiver_actual.has_value());
  CHECK(back[4].receiver_origin_scheduled == fx.pairs[4].receiver_origin_scheduled);

  std::stringstream bad("pair_id,feeder_id\n");
  CHECK_THROWS_AS(read_pairs_csv(bad), InputError);
  std::stringstream short_row(
      "pair_id,feeder_id,receiver_id,site,window_s,feeder_scheduled,feeder_actual,receiver_origin_scheduled,"
      "receiver_scheduled,receiver_actual\nx,y\n");
  try {
    read_pairs_csv(short_row);
    FAIL("expected rejection");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }

  std::stringstream js(
      "line,journey_id,stop_id,scheduled,actual\n"
      "A,1,s1,2020-08-03T10:00:00Z,2020-08-03T10:00:30Z\n"
      "A,1,site,2020-08-03T10:05:00Z,\n"
      "B,7,o,2020-08-03T09:55:00Z,\n");
  const auto journeys = read_journeys_csv(js);
  REQUIRE(journeys.size() == 2);
  CHECK(journeys[0].stops.size() == 2);
  CHECK_FALSE(journeys[0].stops[1].actual.has_value());
  CHECK(journeys[1].line == "B");

  const auto r = evaluate_policy(fx.pairs, fx.predictor, {});
  const auto path = std::filesystem::temp_directory_path() / "busuq_test_outcomes.csv";
  r.write_outcomes_csv(path);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "pair_id,kept,delay_s,hold_origin_s,hold_site_s");
  std::filesystem::remove(path);
}
