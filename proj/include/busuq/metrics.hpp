#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace busuq::metrics {

// All three skip cells whose mask is 0 and return nullopt when nothing is
// left. Intervals are closed.
std::optional<double> icp(std::span<const double> y, std::span<const double> lower, std::span<const double> upper,
                          std::span<const double> mask);
std::optional<double> mil(std::span<const double> lower, std::span<const double> upper, std::span<const double> mask);
std::optional<double> rmse(std::span<const double> y, std::span<const double> y_hat, std::span<const double> mask);

inline const std::vector<double> kDefaultIntervals{0.20, 0.60, 0.80, 0.90, 0.95};

// Route-level forecast for one test sample at one horizon.
struct RouteForecast {
  std::vector<double> samples;  // predictive route times, seconds
  double point = 0.0;           // point prediction of the route time
  std::optional<double> truth;  // observed route time, absent if any used cell was missing
};

// Per-link point errors feeding the labeled per-link RMSE.
struct LinkErrors {
  std::vector<double> truth, prediction, mask;
};

struct IntervalCell {
  double interval = 0.0;
  int horizon = 1;
  std::optional<double> icp;  // percent
  std::optional<double> mil;  // seconds
  std::size_t count = 0;
};

struct HorizonCell {
  int horizon = 1;
  std::optional<double> rmse_route;  // route-sum errors
  std::optional<double> rmse_link;   // per-link errors
  std::size_t route_count = 0;
  std::size_t link_count = 0;
};

struct EvalReport {
  std::string model;
  std::vector<double> intervals;
  int horizons = 0;
  std::vector<IntervalCell> cells;  // interval-major
  std::vector<HorizonCell> rmse;

  const IntervalCell& cell(double interval, int horizon) const;

  // Rows `model,interval,horizon,icp,mil,rmse`; RMSE rows carry interval
  // label `rmse_route` or `rmse_link`.
  std::string csv(bool header = true) const;
  std::string text_table() const;
  void write(const std::filesystem::path& dir) const;
};

// forecasts[h-1][i]: horizon h, test sample i. link_errors[h-1] optional.
EvalReport build_report(const std::string& model, const std::vector<std::vector<RouteForecast>>& forecasts,
                        const std::vector<double>& intervals, const std::vector<LinkErrors>& link_errors = {});

}  // namespace busuq::metrics
