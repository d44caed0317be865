#include "busuq/multilink.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace busuq::multilink {

std::string to_string(SourceModel m) {
  switch (m) {
    case SourceModel::Dqr: return "dqr";
    case SourceModel::Brnn: return "brnn";
    case SourceModel::Kalman: return "kalman";
  }
  return "unknown";
}

SourceModel source_from_string(const std::string& s) {
  if (s == "dqr") return SourceModel::Dqr;
  if (s == "brnn") return SourceModel::Brnn;
  if (s == "kalman") return SourceModel::Kalman;
  throw InputError("unknown model '" + s + "' (expected dqr, brnn or kalman)");
}

void RoutePlan::validate(int n_links, int horizons) const {
  require(!links.empty(), "route plan has no links");
  require(frequency > 0, "route plan frequency must be positive");
  require(start_horizon >= 1 && start_horizon <= horizons,
          "route start horizon " + std::to_string(start_horizon) + " outside 1.." + std::to_string(horizons));
  for (std::size_t j = 0; j < links.size(); ++j) {
    require(links[j] >= 0 && links[j] < n_links, "route link " + std::to_string(links[j]) + " is out of range");
    if (j > 0) require(links[j] == links[j - 1] + 1, "route links must be unique and contiguous");
  }
}

nlohmann::json RouteSampleSet::summary() const {
  require(!samples.empty(), "empty sample set");
  const double n = static_cast<double>(samples.size());
  const double mean = std::accumulate(samples.begin(), samples.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  nlohmann::json q = nlohmann::json::object();
  for (double p : {0.025, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.975}) {
    char key[16];
    std::snprintf(key, sizeof key, "%.3f", p);
    q[key] = empirical_quantile_sorted(sorted, p);
  }
  return {{"source", to_string(source)},
          {"count", samples.size()},
          {"route_length", route_length},
          {"mean", mean},
          {"std", samples.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0},
          {"quantiles", q}};
}

RouteSampleSet sample_route_time(const LinkDistributions& dists, const RoutePlan& plan, int n, Rng& rng,
                                 SourceModel source) {
  require(n >= 1, "sample_route_time: n must be >= 1");
  plan.validate(dists.links(), dists.horizons());
  for (int h = plan.start_horizon; h <= dists.horizons(); ++h) {
    for (int l : plan.links) {
      require(dists.get(h, l).has_value(),
              "no distribution for link " + std::to_string(l) + " at horizon " + std::to_string(h));
    }
  }
  RouteSampleSet out;
  out.source = source;
  out.route_length = static_cast<int>(plan.links.size());
  out.samples.resize(static_cast<std::size_t>(n));
  out.horizon_trace.resize(static_cast<std::size_t>(n) * plan.links.size());
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    double clock = 0.0;
    for (std::size_t j = 0; j < plan.links.size(); ++j) {
      const int h = rollover_horizon(plan, clock, dists.horizons());
      const auto& fit = *dists.get(h, plan.links[j]);
      clock += gaussian::draw_truncated(fit.mean, fit.sigma, rng);
      out.horizon_trace[i * plan.links.size() + j] = static_cast<std::uint8_t>(h);
    }
    out.samples[i] = clock;
  }
  return out;
}

RouteSampleSet route_from_draws(std::span<const Eigen::MatrixXd> draws, const RoutePlan& plan, SourceModel source) {
  require(!draws.empty(), "route_from_draws: no draws");
  const int K = static_cast<int>(draws.front().rows());
  const int L = static_cast<int>(draws.front().cols());
  plan.validate(L, K);
  RouteSampleSet out;
  out.source = source;
  out.route_length = static_cast<int>(plan.links.size());
  out.samples.resize(draws.size());
  out.horizon_trace.resize(draws.size() * plan.links.size());
  for (std::size_t i = 0; i < draws.size(); ++i) {
    require(draws[i].rows() == K && draws[i].cols() == L, "route_from_draws: draws differ in shape");
    double clock = 0.0;
    for (std::size_t j = 0; j < plan.links.size(); ++j) {
      const int h = rollover_horizon(plan, clock, K);
      clock += std::max(gaussian::kTruncationFloor, draws[i](h - 1, plan.links[j]));
      out.horizon_trace[i * plan.links.size() + j] = static_cast<std::uint8_t>(h);
    }
    out.samples[i] = clock;
  }
  return out;
}

double DiffDistribution::median() const {
  for (std::size_t i = 0; i < levels.size(); ++i)
    if (levels[i] == 0.5) return quantiles[i];
  return empirical_quantile(samples, 0.5);
}

DiffDistribution diff_distribution(std::span<const double> a, std::span<const double> b) {
  require(!a.empty() && !b.empty(), "diff_distribution: empty sample set");
  DiffDistribution d;
  const std::size_t n = std::min(a.size(), b.size());
  d.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.samples[i] = a[i] - b[i];
  std::vector<double> sorted = d.samples;
  std::sort(sorted.begin(), sorted.end());
  for (double p : d.levels) d.quantiles.push_back(empirical_quantile_sorted(sorted, p));
  return d;
}

DiffDistribution diff_distribution(const RouteSampleSet& a, const RouteSampleSet& b) {
  return diff_distribution(std::span<const double>(a.samples), std::span<const double>(b.samples));
}

double empirical_quantile_sorted(std::span<const double> sorted, double p) {
  require(!sorted.empty(), "empirical quantile of an empty set");
  require(p >= 0.0 && p <= 1.0, "empirical quantile level outside [0,1]");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double w = pos - static_cast<double>(lo);
  return sorted[lo] + w * (sorted[hi] - sorted[lo]);
}

double empirical_quantile(std::vector<double> samples, double p) {
  std::sort(samples.begin(), samples.end());
  return empirical_quantile_sorted(samples, p);
}

std::pair<double, double> empirical_interval(std::span<const double> samples, double alpha) {
  require(alpha > 0.0 && alpha < 1.0, "empirical_interval: alpha must lie in (0,1)");
  require(samples.size() >= 20, "empirical_interval: at least 20 samples are needed, got " +
                                    std::to_string(samples.size()));
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  return {empirical_quantile_sorted(sorted, (1.0 - alpha) / 2.0), empirical_quantile_sorted(sorted, (1.0 + alpha) / 2.0)};
}

void write_samples_csv(const std::filesystem::path& path, const RouteSampleSet& set) {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << "seconds\n";
  char buf[64];
  for (double v : set.samples) {
    std::snprintf(buf, sizeof buf, "%.6f\n", v);
    out << buf;
  }
}

}  // namespace busuq::multilink
