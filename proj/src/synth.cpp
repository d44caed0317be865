#include "busuq/synth.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "busuq/array_io.hpp"
#include "busuq/normal.hpp"

namespace busuq::synth {

using nlohmann::json;

void SynthConfig::validate() const {
  require(n_links >= 1, "synth: n_links must be >= 1");
  require(weeks >= 1, "synth: weeks must be >= 1");
  require(frequency > 0 && ingest::kSecondsPerWeek % frequency == 0, "synth: frequency must divide one week");
  require(!base_times.empty(), "synth: base_times is empty");
  for (double b : base_times) require(b > 0.0, "synth: base times must be positive");
  require(am_peak >= 0.0 && pm_peak >= 0.0 && weekend_scale >= 0.0, "synth: peak amplitudes must be >= 0");
  require(noise_sigma >= 0.0 && noise_peak_gain >= 0.0, "synth: noise parameters must be >= 0");
  require(event_rate >= 0.0 && event_rate <= 1.0, "synth: event_rate must lie in [0,1]");
  require(missing_rate >= 0.0 && missing_rate <= 1.0, "synth: missing_rate must lie in [0,1]");
  require(event_magnitude >= 0.0 && event_duration >= 1, "synth: invalid congestion spike settings");
}

json SynthConfig::to_json() const {
  return {{"n_links", n_links},
          {"weeks", weeks},
          {"frequency", frequency},
          {"period_start", ingest::format_rfc3339(period_start)},
          {"base_times", base_times},
          {"am_peak", am_peak},
          {"pm_peak", pm_peak},
          {"weekend_scale", weekend_scale},
          {"noise_sigma", noise_sigma},
          {"noise_peak_gain", noise_peak_gain},
          {"event_rate", event_rate},
          {"event_magnitude", event_magnitude},
          {"event_duration", event_duration},
          {"missing_rate", missing_rate},
          {"seed", seed}};
}

SynthConfig SynthConfig::from_json(const json& j) {
  SynthConfig c;
  c.n_links = j.value("n_links", c.n_links);
  c.weeks = j.value("weeks", c.weeks);
  c.frequency = j.value("frequency", c.frequency);
  if (j.contains("period_start")) c.period_start = ingest::parse_rfc3339(j.at("period_start").get<std::string>());
  c.base_times = j.value("base_times", c.base_times);
  c.am_peak = j.value("am_peak", c.am_peak);
  c.pm_peak = j.value("pm_peak", c.pm_peak);
  c.weekend_scale = j.value("weekend_scale", c.weekend_scale);
  c.noise_sigma = j.value("noise_sigma", c.noise_sigma);
  c.noise_peak_gain = j.value("noise_peak_gain", c.noise_peak_gain);
  c.event_rate = j.value("event_rate", c.event_rate);
  c.event_magnitude = j.value("event_magnitude", c.event_magnitude);
  c.event_duration = j.value("event_duration", c.event_duration);
  c.missing_rate = j.value("missing_rate", c.missing_rate);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

SynthTruth::SynthTruth(SynthConfig config, std::vector<CongestionEvent> events)
    : config_(std::move(config)), events_(std::move(events)) {
  config_.validate();
  const std::int64_t steps = config_.weeks * ingest::kSecondsPerWeek / config_.frequency;
  active_.assign(static_cast<std::size_t>(steps * config_.n_links), 0);
  for (const auto& e : events_) {
    for (int j = 0; e.origin_link + j < config_.n_links; ++j) {
      for (int d = 0; d < config_.event_duration; ++d) {
        const std::int64_t s = e.start_step + j + d;
        if (s >= steps) break;
        auto& a = active_[static_cast<std::size_t>(s * config_.n_links + e.origin_link + j)];
        if (a < 255) ++a;
      }
    }
  }
}

double SynthTruth::peak(std::int64_t step) const {
  const std::int64_t t = step * config_.frequency;
  const double hour = static_cast<double>(t % ingest::kSecondsPerDay) / 3600.0;
  const int dow = static_cast<int>(((config_.period_start + t) / ingest::kSecondsPerDay + 3) % 7);
  const double am = config_.am_peak * std::exp(-0.5 * std::pow(hour - 8.0, 2));
  const double pm = config_.pm_peak * std::exp(-0.5 * std::pow((hour - 16.5) / 1.25, 2));
  return (am + pm) * (dow >= 5 ? config_.weekend_scale : 1.0);
}

double SynthTruth::profile(std::int64_t step, int link) const { return config_.base_time(link) * (1.0 + peak(step)); }

double SynthTruth::event_factor(std::int64_t step, int link) const {
  const auto idx = static_cast<std::size_t>(step * config_.n_links + link);
  if (idx >= active_.size()) return 1.0;
  return 1.0 + config_.event_magnitude * active_[idx];
}

double SynthTruth::log_sigma(std::int64_t step) const {
  return config_.noise_sigma * (1.0 + config_.noise_peak_gain * peak(step));
}

double SynthTruth::quantile(std::int64_t step, int link, double p) const {
  return median(step, link) * std::exp(log_sigma(step) * normal_quantile(p));
}

double SynthTruth::mean(std::int64_t step, int link) const {
  const double s = log_sigma(step);
  return median(step, link) * std::exp(0.5 * s * s);
}

json SynthTruth::to_json() const {
  json events = json::array();
  for (const auto& e : events_) events.push_back({e.origin_link, e.start_step});
  return {{"format", "busuq-synth-truth-v1"},
          {"law", "travel_time ~ LogNormal(log(median), log_sigma^2)"},
          {"median", "base_time[link] * (1 + peak(step)) * (1 + event_magnitude * active_spikes(step, link))"},
          {"peak", "am_peak*exp(-(h-8)^2/2) + pm_peak*exp(-((h-16.5)/1.25)^2/2), times weekend_scale on Sat/Sun"},
          {"log_sigma", "noise_sigma * (1 + noise_peak_gain * peak(step))"},
          {"config", config_.to_json()},
          {"events", events}};
}

SynthTruth SynthTruth::from_json(const json& j) {
  require(j.value("format", "") == "busuq-synth-truth-v1", "unsupported truth.json format");
  std::vector<CongestionEvent> events;
  for (const auto& e : j.at("events")) events.push_back({e.at(0).get<int>(), e.at(1).get<std::int64_t>()});
  return SynthTruth(SynthConfig::from_json(j.at("config")), std::move(events));
}

// ---------------------------------------------------------------------------

SynthDataset generate(const SynthConfig& config) {
  config.validate();
  SynthDataset out;
  const std::int64_t steps = config.weeks * ingest::kSecondsPerWeek / config.frequency;

  Rng event_rng = derived_rng(config.seed, 1);
  std::vector<CongestionEvent> events;
  if (config.event_rate > 0.0) {
    std::bernoulli_distribution starts(config.event_rate);
    for (std::int64_t s = 0; s < steps; ++s)
      for (int l = 0; l < config.n_links; ++l)
        if (starts(event_rng)) events.push_back({l, s});
  }
  out.truth = SynthTruth(config, std::move(events));

  Rng noise_rng = derived_rng(config.seed, 2);
  Rng miss_rng = derived_rng(config.seed, 3);
  Rng time_rng = derived_rng(config.seed, 4);
  std::normal_distribution<double> z(0.0, 1.0);
  std::bernoulli_distribution missing(config.missing_rate);
  std::uniform_int_distribution<ingest::Seconds> offset(0, config.frequency - 1);
  out.observations.reserve(static_cast<std::size_t>(steps * config.n_links));
  for (std::int64_t s = 0; s < steps; ++s) {
    for (int l = 0; l < config.n_links; ++l) {
      // Draw every stream for every cell so that the missing pattern does
      // not shift the noise sequence.
      const double noise = z(noise_rng);
      const bool drop = missing(miss_rng);
      const ingest::Seconds at = config.period_start + s * config.frequency + offset(time_rng);
      if (drop) continue;
      const double tt = out.truth.median(s, l) * std::exp(out.truth.log_sigma(s) * noise);
      out.observations.push_back({std::to_string(l), at, tt});
    }
  }
  out.total_cells = steps * config.n_links;
  out.grid.frequency = config.frequency;
  out.grid.n_links = config.n_links;
  out.grid.period_start = config.period_start;
  out.grid.period_end = config.period_start + config.weeks * ingest::kSecondsPerWeek;
  return out;
}

void write_dataset(const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "observations.csv");
  require(static_cast<bool>(csv), "cannot write " + (dir / "observations.csv").string());
  ingest::write_observations_csv(csv, data.observations);
  io::write_json(dir / "truth.json", data.truth.to_json());
}

}  // namespace busuq::synth
