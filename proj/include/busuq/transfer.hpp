#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "busuq/common.hpp"
#include "busuq/ingest.hpp"
#include "busuq/multilink.hpp"

namespace busuq::transfer {

using ingest::Seconds;

struct StopEvent {
  std::string stop_id;
  Seconds scheduled = 0;
  std::optional<Seconds> actual;
};

// One vehicle run of a line, stops in travel order.
struct Journey {
  std::string line;
  std::string journey_id;
  std::vector<StopEvent> stops;

  const StopEvent* at(const std::string& stop_id) const;
};

struct JourneyPair {
  std::string pair_id;
  std::string feeder_id, receiver_id;
  std::string site;
  Seconds window = 300;
  Seconds feeder_scheduled = 0;           // feeder arrival at the site
  std::optional<Seconds> feeder_actual;
  Seconds receiver_origin_scheduled = 0;  // receiver departure from its holding point
  Seconds receiver_scheduled = 0;         // receiver departure from the site
  std::optional<Seconds> receiver_actual; // receiver arrival at the site without holding
};

// A pair is formed when the feeder's scheduled site arrival falls in
// [receiver scheduled site departure - window, receiver scheduled site
// departure]. Receivers are taken in scheduled order and each claims the
// earliest unused feeder; a journey is used at most once. The receiver's
// first stop is its holding point.
std::vector<JourneyPair> match_journeys(std::span<const Journey> feeders, std::span<const Journey> receivers,
                                        const std::string& site, Seconds window);

struct HoldDecision {
  double statistic = 0.0;  // median of the difference distribution, seconds
  double total = 0.0;
  double hold_at_origin = 0.0;
  double hold_at_site_budget = 0.0;
  double origin_fraction = 0.8;
};

HoldDecision hold_decision(const multilink::DiffDistribution& diff, double origin_fraction = 0.8);

struct PairOutcome {
  std::string pair_id;
  bool kept = false;
  double delay = 0.0;  // receiver's site departure past its schedule, seconds
  double hold_origin = 0.0;
  double hold_site = 0.0;  // site wait beyond both the schedule and the receiver's arrival
};

// Clock rules for one pair: the receiver leaves its origin hold_at_origin
// late and keeps its realized travel time; at the site it departs at
// max(schedule, arrival, min(feeder arrival + exchange, arrival + budget)).
PairOutcome simulate_pair(const JourneyPair& pair, const HoldDecision& decision, double exchange_time);

// Predictive samples of absolute arrival times at the site (unix seconds).
struct PairForecast {
  std::vector<double> feeder_arrival;
  std::vector<double> receiver_arrival;
};

// Returns nullopt (or throws InputError) when no forecast can be made; such
// pairs are skipped and counted.
using PairPredictor = std::function<std::optional<PairForecast>(const JourneyPair&, Rng&)>;

struct PolicyOptions {
  double exchange_time = 60.0;
  double origin_fraction = 0.8;
  std::uint64_t seed = 1;
};

struct CohortSummary {
  std::size_t pairs = 0;
  std::size_t kept = 0;
  double mean_delay = 0.0;
  double mean_delay_kept = 0.0;    // over kept connections (0 when none)
  double mean_delay_broken = 0.0;  // over broken connections (0 when none)
};

CohortSummary summarize(std::span<const PairOutcome> outcomes);

struct PolicyReport {
  std::vector<PairOutcome> policy;       // uncertainty-aware holding
  std::vector<PairOutcome> always_hold;  // wait at the site for the feeder, no cap
  std::vector<PairOutcome> no_hold;      // never wait
  std::size_t skipped = 0;
  std::vector<std::string> skipped_reasons;

  nlohmann::json summary() const;
  // `pair_id,kept,delay_s,hold_origin_s,hold_site_s` for the policy cohort.
  void write_outcomes_csv(const std::filesystem::path& path) const;
};

// The difference fed to the decision is (feeder arrival + exchange time) -
// (receiver arrival), sample by sample.
PolicyReport evaluate_policy(std::span<const JourneyPair> pairs, const PairPredictor& predictor,
                             const PolicyOptions& options = {});

// Pairs CSV with header
// `pair_id,feeder_id,receiver_id,site,window_s,feeder_scheduled,feeder_actual,receiver_origin_scheduled,receiver_scheduled,receiver_actual`;
// times in RFC 3339, empty when unknown.
std::vector<JourneyPair> read_pairs_csv(std::istream& in);
std::vector<JourneyPair> read_pairs_csv(const std::filesystem::path& path);
void write_pairs_csv(std::ostream& out, std::span<const JourneyPair> pairs);

// Stop events CSV `line,journey_id,stop_id,scheduled,actual`, rows of a
// journey in travel order.
std::vector<Journey> read_journeys_csv(std::istream& in);
std::vector<Journey> read_journeys_csv(const std::filesystem::path& path);

// Synthetic connection fixture: receivers run on time unless
// receiver_travel_sd > 0, feeders are late by N(feeder_delay_mean,
// feeder_delay_sd^2). At
// decision time the predictor knows the feeder delay up to N(0,
// forecast_sd^2) of still-unrealized noise.
struct FixtureConfig {
  int pairs = 400;
  double receiver_travel = 600.0;  // seconds, origin to site
  double receiver_travel_sd = 0.0;
  double feeder_slack = 120.0;     // scheduled feeder arrival before receiver departure
  double feeder_delay_mean = 60.0;
  double feeder_delay_sd = 30.0;
  double forecast_sd = 20.0;
  int forecast_samples = 500;
  std::uint64_t seed = 1;
};

struct Fixture {
  std::vector<JourneyPair> pairs;
  PairPredictor predictor;
};

Fixture make_fixture(const FixtureConfig& config);

}  // namespace busuq::transfer
