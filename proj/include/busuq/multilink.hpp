#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "busuq/gaussian_fit.hpp"

namespace busuq::multilink {

enum class SourceModel { Dqr, Brnn, Kalman };
std::string to_string(SourceModel m);
SourceModel source_from_string(const std::string& s);

struct RoutePlan {
  std::vector<int> links;   // ordered, from the vehicle's position to the target stop
  int start_horizon = 1;    // 1-based model horizon the first link is drawn from
  std::int64_t frequency = 900;

  void validate(int n_links, int horizons) const;
};

// Per-(horizon, link) Gaussian travel-time laws in seconds.
class LinkDistributions {
 public:
  LinkDistributions(int horizons, int links) : horizons_(horizons), links_(links),
        cells_(static_cast<std::size_t>(horizons * links)) {}

  int horizons() const { return horizons_; }
  int links() const { return links_; }
  // horizon is 1-based
  void set(int horizon, int link, gaussian::GaussianLinkFit fit) { cells_.at(index(horizon, link)) = std::move(fit); }
  const std::optional<gaussian::GaussianLinkFit>& get(int horizon, int link) const { return cells_.at(index(horizon, link)); }

 private:
  std::size_t index(int horizon, int link) const {
    return static_cast<std::size_t>((horizon - 1) * links_ + link);
  }
  int horizons_, links_;
  std::vector<std::optional<gaussian::GaussianLinkFit>> cells_;
};

struct RouteSampleSet {
  std::vector<double> samples;  // cumulative seconds
  // horizon_trace[i * route_length + j] = 1-based horizon used for link j of sample i
  std::vector<std::uint8_t> horizon_trace;
  int route_length = 0;
  SourceModel source = SourceModel::Dqr;

  std::size_t size() const { return samples.size(); }
  int horizon_used(std::size_t sample, int position) const {
    return horizon_trace[sample * static_cast<std::size_t>(route_length) + static_cast<std::size_t>(position)];
  }
  nlohmann::json summary() const;
};

// Horizon for the next link given the running clock (seconds since the
// decision time): start + floor(clock / frequency), capped at K.
inline int rollover_horizon(const RoutePlan& plan, double clock, int horizons) {
  const auto steps = static_cast<long long>(std::floor(clock / static_cast<double>(plan.frequency)));
  return static_cast<int>(std::min<long long>(horizons, plan.start_horizon + std::max(0LL, steps)));
}

// Independent link draws summed along the route with per-sample rollover.
RouteSampleSet sample_route_time(const LinkDistributions& dists, const RoutePlan& plan, int n, Rng& rng,
                                 SourceModel source = SourceModel::Dqr);

// Network draws (each K x L, seconds): sample i walks the route through draw
// i, so links within one sample stay jointly drawn.
RouteSampleSet route_from_draws(std::span<const Eigen::MatrixXd> draws, const RoutePlan& plan,
                                SourceModel source = SourceModel::Brnn);

struct DiffDistribution {
  std::vector<double> samples;
  std::vector<double> levels{0.05, 0.25, 0.5, 0.75, 0.95};
  std::vector<double> quantiles;

  double median() const;
};

DiffDistribution diff_distribution(const RouteSampleSet& a, const RouteSampleSet& b);
DiffDistribution diff_distribution(std::span<const double> a, std::span<const double> b);

// Linear interpolation between order statistics at position p * (n - 1).
double empirical_quantile(std::vector<double> samples, double p);
double empirical_quantile_sorted(std::span<const double> sorted, double p);
std::pair<double, double> empirical_interval(std::span<const double> samples, double alpha);

void write_samples_csv(const std::filesystem::path& path, const RouteSampleSet& set);

}  // namespace busuq::multilink
