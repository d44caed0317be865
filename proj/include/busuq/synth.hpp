#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "busuq/ingest.hpp"

namespace busuq::synth {

struct SynthConfig {
  int n_links = 4;
  int weeks = 8;
  ingest::Seconds frequency = 900;
  ingest::Seconds period_start = 1596412800;  // 2020-08-03T00:00:00Z, a Monday
  std::vector<double> base_times{60.0, 90.0, 75.0, 120.0};  // seconds; cycled when shorter than n_links
  double am_peak = 0.6;          // relative slowdown at the 08:00 peak
  double pm_peak = 0.45;         // relative slowdown at the 16:30 peak
  double weekend_scale = 0.3;    // peak amplitude multiplier on Saturday/Sunday
  double noise_sigma = 0.10;     // log-scale noise off-peak
  double noise_peak_gain = 1.0;  // log-scale noise grows to sigma*(1+gain*peak/am_peak) at peaks
  double event_rate = 0.0;       // per (link, step) probability of a congestion spike starting
  double event_magnitude = 0.8;  // multiplicative slowdown during a spike
  int event_duration = 2;        // steps
  double missing_rate = 0.05;
  std::uint64_t seed = 1;

  void validate() const;
  double base_time(int link) const { return base_times[static_cast<std::size_t>(link) % base_times.size()]; }
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j);
};

struct CongestionEvent {
  int origin_link = 0;
  std::int64_t start_step = 0;
};

// Exact conditional law of the travel time observed in (step, link):
// log-normal with the given median and log-scale sigma.
class SynthTruth {
 public:
  SynthTruth() = default;
  SynthTruth(SynthConfig config, std::vector<CongestionEvent> events);

  const SynthConfig& config() const { return config_; }
  const std::vector<CongestionEvent>& events() const { return events_; }

  // Deterministic profile without noise or spikes.
  double profile(std::int64_t step, int link) const;
  double peak(std::int64_t step) const;
  double event_factor(std::int64_t step, int link) const;
  double median(std::int64_t step, int link) const { return profile(step, link) * event_factor(step, link); }
  double log_sigma(std::int64_t step) const;
  double quantile(std::int64_t step, int link, double p) const;
  double mean(std::int64_t step, int link) const;

  nlohmann::json to_json() const;
  static SynthTruth from_json(const nlohmann::json& j);

 private:
  SynthConfig config_;
  std::vector<CongestionEvent> events_;
  // active_[step * n_links + link] = number of spikes covering the cell
  std::vector<std::uint8_t> active_;
};

struct SynthDataset {
  std::vector<ingest::Observation> observations;
  SynthTruth truth;
  ingest::GridConfig grid;  // period and frequency matching the data
  std::int64_t total_cells = 0;
};

// One observation per kept cell, time-stamped uniformly inside the cell.
// A spike starting on link i at step t slows link i+j at steps t+j .. t+j+d-1.
SynthDataset generate(const SynthConfig& config);

void write_dataset(const SynthDataset& data, const std::filesystem::path& dir);

}  // namespace busuq::synth
