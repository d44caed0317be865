#include "busuq/transfer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <sstream>

namespace busuq::transfer {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(trim(f));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

// Reads the header line and returns the next line number.
std::size_t expect_header(std::istream& in, const std::string& header) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line) != header) throw InputError("line " + std::to_string(line_no) + ": expected header " + header);
  return line_no;
}

std::optional<Seconds> optional_time(const std::string& field) {
  if (field.empty()) return std::nullopt;
  return ingest::parse_rfc3339(field);
}

std::string time_field(const std::optional<Seconds>& t) { return t ? ingest::format_rfc3339(*t) : std::string(); }

double mean_or_zero(double sum, std::size_t n) { return n == 0 ? 0.0 : sum / static_cast<double>(n); }

nlohmann::json cohort_json(const CohortSummary& c) {
  return {{"pairs", c.pairs},
          {"kept", c.kept},
          {"kept_fraction", c.pairs == 0 ? 0.0 : static_cast<double>(c.kept) / static_cast<double>(c.pairs)},
          {"mean_delay_s", c.mean_delay},
          {"mean_delay_kept_s", c.mean_delay_kept},
          {"mean_delay_broken_s", c.mean_delay_broken}};
}

}  // namespace

const StopEvent* Journey::at(const std::string& stop_id) const {
  for (const auto& s : stops)
    if (s.stop_id == stop_id) return &s;
  return nullptr;
}

std::vector<JourneyPair> match_journeys(std::span<const Journey> feeders, std::span<const Journey> receivers,
                                        const std::string& site, Seconds window) {
  require(window >= 0, "match_journeys: window must be non-negative");
  struct Candidate {
    const Journey* journey;
    const StopEvent* event;
  };
  std::vector<Candidate> feed, recv;
  for (const auto& j : feeders)
    if (const auto* e = j.at(site)) feed.push_back({&j, e});
  for (const auto& j : receivers)
    if (const auto* e = j.at(site); e && !j.stops.empty()) recv.push_back({&j, e});
  auto by_time = [](const Candidate& a, const Candidate& b) {
    if (a.event->scheduled != b.event->scheduled) return a.event->scheduled < b.event->scheduled;
    return a.journey->journey_id < b.journey->journey_id;
  };
  std::sort(feed.begin(), feed.end(), by_time);
  std::sort(recv.begin(), recv.end(), by_time);

  std::vector<bool> used(feed.size(), false);
  std::vector<JourneyPair> pairs;
  for (const auto& r : recv) {
    const Seconds depart = r.event->scheduled;
    for (std::size_t i = 0; i < feed.size(); ++i) {
      const Seconds arrive = feed[i].event->scheduled;
      if (used[i] || arrive < depart - window) continue;
      if (arrive > depart) break;
      used[i] = true;
      JourneyPair p;
      p.pair_id = feed[i].journey->journey_id + ">" + r.journey->journey_id;
      p.feeder_id = feed[i].journey->journey_id;
      p.receiver_id = r.journey->journey_id;
      p.site = site;
      p.window = window;
      p.feeder_scheduled = arrive;
      p.feeder_actual = feed[i].event->actual;
      p.receiver_origin_scheduled = r.journey->stops.front().scheduled;
      p.receiver_scheduled = depart;
      p.receiver_actual = r.event->actual;
      pairs.push_back(std::move(p));
      break;
    }
  }
  return pairs;
}

HoldDecision hold_decision(const multilink::DiffDistribution& diff, double origin_fraction) {
  require(!diff.samples.empty(), "hold_decision: empty difference distribution");
  require(origin_fraction >= 0.0 && origin_fraction <= 1.0, "hold_decision: origin fraction must lie in [0,1]");
  HoldDecision d;
  d.statistic = diff.median();
  d.total = std::max(0.0, d.statistic);
  d.origin_fraction = origin_fraction;
  d.hold_at_origin = origin_fraction * d.total;
  d.hold_at_site_budget = d.total - d.hold_at_origin;
  return d;
}

PairOutcome simulate_pair(const JourneyPair& pair, const HoldDecision& decision, double exchange_time) {
  require(pair.feeder_actual && pair.receiver_actual, "pair " + pair.pair_id + " has no realized times");
  require(exchange_time >= 0.0, "exchange time must be non-negative");
  const double scheduled = static_cast<double>(pair.receiver_scheduled);
  const double feeder = static_cast<double>(*pair.feeder_actual) + exchange_time;
  const double arrival = static_cast<double>(*pair.receiver_actual) + decision.hold_at_origin;
  const double departure =
      std::max({scheduled, arrival, std::min(feeder, arrival + decision.hold_at_site_budget)});
  PairOutcome o;
  o.pair_id = pair.pair_id;
  o.kept = feeder <= departure;
  o.delay = std::max(0.0, departure - scheduled);
  o.hold_origin = decision.hold_at_origin;
  o.hold_site = departure - std::max(scheduled, arrival);
  return o;
}

CohortSummary summarize(std::span<const PairOutcome> outcomes) {
  CohortSummary c;
  double all = 0.0, kept = 0.0, broken = 0.0;
  for (const auto& o : outcomes) {
    ++c.pairs;
    all += o.delay;
    if (o.kept) {
      ++c.kept;
      kept += o.delay;
    } else {
      broken += o.delay;
    }
  }
  c.mean_delay = mean_or_zero(all, c.pairs);
  c.mean_delay_kept = mean_or_zero(kept, c.kept);
  c.mean_delay_broken = mean_or_zero(broken, c.pairs - c.kept);
  return c;
}

nlohmann::json PolicyReport::summary() const {
  return {{"policy", cohort_json(summarize(policy))},
          {"always_hold", cohort_json(summarize(always_hold))},
          {"no_hold", cohort_json(summarize(no_hold))},
          {"skipped", skipped},
          {"skipped_reasons", skipped_reasons}};
}

void PolicyReport::write_outcomes_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << "pair_id,kept,delay_s,hold_origin_s,hold_site_s\n";
  char buf[128];
  for (const auto& o : policy) {
    std::snprintf(buf, sizeof buf, ",%d,%.3f,%.3f,%.3f\n", o.kept ? 1 : 0, o.delay, o.hold_origin, o.hold_site);
    out << o.pair_id << buf;
  }
}

PolicyReport evaluate_policy(std::span<const JourneyPair> pairs, const PairPredictor& predictor,
                             const PolicyOptions& options) {
  require(options.exchange_time >= 0.0, "evaluate_policy: exchange time must be non-negative");
  PolicyReport report;
  HoldDecision keep;
  keep.origin_fraction = 0.0;
  keep.hold_at_site_budget = std::numeric_limits<double>::infinity();
  const HoldDecision none{};

  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& pair = pairs[i];
    auto skip = [&](const std::string& why) {
      ++report.skipped;
      report.skipped_reasons.push_back(pair.pair_id + ": " + why);
    };
    if (!pair.feeder_actual || !pair.receiver_actual) {
      skip("realized arrival missing");
      continue;
    }
    Rng rng = derived_rng(options.seed, i);
    std::optional<PairForecast> forecast;
    try {
      forecast = predictor(pair, rng);
    } catch (const InputError& e) {
      skip(e.what());
      continue;
    }
    if (!forecast || forecast->feeder_arrival.empty() || forecast->receiver_arrival.empty()) {
      skip("no forecast");
      continue;
    }
    std::vector<double> feeder = forecast->feeder_arrival;
    for (double& v : feeder) v += options.exchange_time;
    const auto diff = multilink::diff_distribution(feeder, forecast->receiver_arrival);
    const HoldDecision decision = hold_decision(diff, options.origin_fraction);
    report.policy.push_back(simulate_pair(pair, decision, options.exchange_time));
    report.always_hold.push_back(simulate_pair(pair, keep, options.exchange_time));
    report.no_hold.push_back(simulate_pair(pair, none, options.exchange_time));
  }
  return report;
}

std::vector<JourneyPair> read_pairs_csv(std::istream& in) {
  std::size_t line_no = expect_header(
      in,
      "pair_id,feeder_id,receiver_id,site,window_s,feeder_scheduled,feeder_actual,receiver_origin_scheduled,"
      "receiver_scheduled,receiver_actual");
  std::vector<JourneyPair> out;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    const auto where = "line " + std::to_string(line_no) + ": ";
    if (f.size() != 10) throw InputError(where + "expected 10 fields");
    try {
      JourneyPair p;
      p.pair_id = f[0];
      p.feeder_id = f[1];
      p.receiver_id = f[2];
      p.site = f[3];
      p.window = std::stoll(f[4]);
      p.feeder_scheduled = ingest::parse_rfc3339(f[5]);
      p.feeder_actual = optional_time(f[6]);
      p.receiver_origin_scheduled = ingest::parse_rfc3339(f[7]);
      p.receiver_scheduled = ingest::parse_rfc3339(f[8]);
      p.receiver_actual = optional_time(f[9]);
      require(!p.pair_id.empty(), "empty pair id");
      out.push_back(std::move(p));
    } catch (const std::logic_error& e) {
      throw InputError(where + e.what());
    }
  }
  return out;
}

std::vector<JourneyPair> read_pairs_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path.string());
  return read_pairs_csv(in);
}

void write_pairs_csv(std::ostream& out, std::span<const JourneyPair> pairs) {
  out << "pair_id,feeder_id,receiver_id,site,window_s,feeder_scheduled,feeder_actual,receiver_origin_scheduled,"
         "receiver_scheduled,receiver_actual\n";
  for (const auto& p : pairs) {
    out << p.pair_id << ',' << p.feeder_id << ',' << p.receiver_id << ',' << p.site << ',' << p.window << ','
        << ingest::format_rfc3339(p.feeder_scheduled) << ',' << time_field(p.feeder_actual) << ','
        << ingest::format_rfc3339(p.receiver_origin_scheduled) << ',' << ingest::format_rfc3339(p.receiver_scheduled)
        << ',' << time_field(p.receiver_actual) << '\n';
  }
}

std::vector<Journey> read_journeys_csv(std::istream& in) {
  std::size_t line_no = expect_header(in, "line,journey_id,stop_id,scheduled,actual");
  std::vector<Journey> out;
  std::map<std::pair<std::string, std::string>, std::size_t> index;
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto f = split_fields(line);
    const auto where = "line " + std::to_string(line_no) + ": ";
    if (f.size() != 5 || f[1].empty() || f[2].empty()) throw InputError(where + "expected 5 fields");
    StopEvent e;
    e.stop_id = f[2];
    try {
      e.scheduled = ingest::parse_rfc3339(f[3]);
      e.actual = optional_time(f[4]);
    } catch (const InputError& err) {
      throw InputError(where + err.what());
    }
    const auto key = std::make_pair(f[0], f[1]);
    auto it = index.find(key);
    if (it == index.end()) {
      it = index.emplace(key, out.size()).first;
      out.push_back(Journey{f[0], f[1], {}});
    }
    out[it->second].stops.push_back(std::move(e));
  }
  return out;
}

std::vector<Journey> read_journeys_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path.string());
  return read_journeys_csv(in);
}

Fixture make_fixture(const FixtureConfig& c) {
  require(c.pairs >= 1, "fixture: at least one pair");
  require(c.forecast_sd >= 0.0 && c.forecast_sd <= c.feeder_delay_sd,
          "fixture: forecast noise must lie between 0 and the feeder delay spread");
  require(c.forecast_samples >= 1, "fixture: forecast_samples must be >= 1");
  Rng rng(c.seed);
  std::normal_distribution<double> z(0.0, 1.0);
  struct Latent {
    double feeder_expected;    // known part of the feeder arrival at decision time
    double receiver_expected;  // receiver arrival without any noise
  };
  auto latent = std::make_shared<std::map<std::string, Latent>>();
  Fixture fx;
  const double known_sd = std::sqrt(c.feeder_delay_sd * c.feeder_delay_sd - c.forecast_sd * c.forecast_sd);
  const Seconds base = 1'600'000'000;  // 2020-09-13, an arbitrary Sunday
  for (int i = 0; i < c.pairs; ++i) {
    JourneyPair p;
    p.pair_id = "P" + std::to_string(i);
    p.feeder_id = "F" + std::to_string(i);
    p.receiver_id = "R" + std::to_string(i);
    p.site = "site";
    p.receiver_origin_scheduled = base + static_cast<Seconds>(i) * 1800;
    p.receiver_scheduled = p.receiver_origin_scheduled + static_cast<Seconds>(std::lround(c.receiver_travel));
    p.feeder_scheduled = p.receiver_scheduled - static_cast<Seconds>(std::lround(c.feeder_slack));
    const double known = c.feeder_delay_mean + known_sd * z(rng);
    const double delay = known + c.forecast_sd * z(rng);
    const double travel = c.receiver_travel + c.receiver_travel_sd * z(rng);
    p.feeder_actual = p.feeder_scheduled + static_cast<Seconds>(std::lround(delay));
    p.receiver_actual = p.receiver_origin_scheduled + static_cast<Seconds>(std::lround(travel));
    (*latent)[p.pair_id] = {static_cast<double>(p.feeder_scheduled) + known,
                            static_cast<double>(p.receiver_origin_scheduled) + c.receiver_travel};
    fx.pairs.push_back(std::move(p));
  }
  fx.predictor = [latent, c](const JourneyPair& p, Rng& r) -> std::optional<PairForecast> {
    const auto it = latent->find(p.pair_id);
    if (it == latent->end()) return std::nullopt;
    std::normal_distribution<double> z(0.0, 1.0);
    PairForecast f;
    for (int s = 0; s < c.forecast_samples; ++s) {
      f.feeder_arrival.push_back(it->second.feeder_expected + c.forecast_sd * z(r));
      f.receiver_arrival.push_back(it->second.receiver_expected + c.receiver_travel_sd * z(r));
    }
    return f;
  };
  return fx;
}

}  // namespace busuq::transfer
