#include "busuq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "busuq/common.hpp"
#include "busuq/multilink.hpp"

namespace busuq::metrics {

namespace {

void same_length(std::size_t a, std::size_t b, const char* what) {
  require(a == b, std::string(what) + ": inputs differ in length (" + std::to_string(a) + " vs " +
                      std::to_string(b) + ")");
}

}  // namespace

std::optional<double> icp(std::span<const double> y, std::span<const double> lower, std::span<const double> upper,
                          std::span<const double> mask) {
  same_length(y.size(), lower.size(), "icp");
  same_length(y.size(), upper.size(), "icp");
  same_length(y.size(), mask.size(), "icp");
  double covered = 0.0, n = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (mask[i] == 0.0) continue;
    require(lower[i] <= upper[i], "icp: lower bound above upper bound");
    n += 1.0;
    if (lower[i] <= y[i] && y[i] <= upper[i]) covered += 1.0;
  }
  if (n == 0.0) return std::nullopt;
  return 100.0 * covered / n;
}

std::optional<double> mil(std::span<const double> lower, std::span<const double> upper, std::span<const double> mask) {
  same_length(lower.size(), upper.size(), "mil");
  same_length(lower.size(), mask.size(), "mil");
  double total = 0.0, n = 0.0;
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (mask[i] == 0.0) continue;
    require(lower[i] <= upper[i], "mil: lower bound above upper bound");
    total += upper[i] - lower[i];
    n += 1.0;
  }
  if (n == 0.0) return std::nullopt;
  return total / n;
}

std::optional<double> rmse(std::span<const double> y, std::span<const double> y_hat, std::span<const double> mask) {
  same_length(y.size(), y_hat.size(), "rmse");
  same_length(y.size(), mask.size(), "rmse");
  double total = 0.0, n = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (mask[i] == 0.0) continue;
    const double e = y[i] - y_hat[i];
    total += e * e;
    n += 1.0;
  }
  if (n == 0.0) return std::nullopt;
  return std::sqrt(total / n);
}

const IntervalCell& EvalReport::cell(double interval, int horizon) const {
  for (const auto& c : cells)
    if (std::abs(c.interval - interval) < 1e-9 && c.horizon == horizon) return c;
  throw InputError("report has no cell for interval " + std::to_string(interval) + " horizon " +
                   std::to_string(horizon));
}

EvalReport build_report(const std::string& model, const std::vector<std::vector<RouteForecast>>& forecasts,
                        const std::vector<double>& intervals, const std::vector<LinkErrors>& link_errors) {
  require(!forecasts.empty(), "build_report: no horizons");
  require(link_errors.empty() || link_errors.size() == forecasts.size(),
          "build_report: per-link errors do not match the horizon count");
  EvalReport r;
  r.model = model;
  r.intervals = intervals;
  r.horizons = static_cast<int>(forecasts.size());
  for (double a : intervals) {
    for (int h = 1; h <= r.horizons; ++h) {
      const auto& fs = forecasts[static_cast<std::size_t>(h - 1)];
      std::vector<double> y, lo, hi, mask;
      for (const auto& f : fs) {
        if (!f.truth) continue;
        const auto [l, u] = multilink::empirical_interval(f.samples, a);
        y.push_back(*f.truth);
        lo.push_back(l);
        hi.push_back(u);
        mask.push_back(1.0);
      }
      IntervalCell c;
      c.interval = a;
      c.horizon = h;
      c.icp = icp(y, lo, hi, mask);
      c.mil = mil(lo, hi, mask);
      c.count = y.size();
      r.cells.push_back(c);
    }
  }
  for (int h = 1; h <= r.horizons; ++h) {
    const auto& fs = forecasts[static_cast<std::size_t>(h - 1)];
    std::vector<double> y, p, mask;
    for (const auto& f : fs) {
      if (!f.truth) continue;
      y.push_back(*f.truth);
      p.push_back(f.point);
      mask.push_back(1.0);
    }
    HorizonCell c;
    c.horizon = h;
    c.rmse_route = rmse(y, p, mask);
    c.route_count = y.size();
    if (!link_errors.empty()) {
      const auto& e = link_errors[static_cast<std::size_t>(h - 1)];
      c.rmse_link = rmse(e.truth, e.prediction, e.mask);
      c.link_count = static_cast<std::size_t>(std::count(e.mask.begin(), e.mask.end(), 1.0));
    }
    r.rmse.push_back(c);
  }
  return r;
}

namespace {

std::string fmt(const std::optional<double>& v, const char* spec = "%.3f") {
  if (!v) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, *v);
  return buf;
}

}  // namespace

std::string EvalReport::csv(bool header) const {
  std::ostringstream os;
  if (header) os << "model,interval,horizon,icp,mil,rmse\n";
  for (const auto& c : cells) {
    char label[16];
    std::snprintf(label, sizeof label, "%g", c.interval * 100.0);
    os << model << ',' << label << ',' << c.horizon << ',' << fmt(c.icp) << ',' << fmt(c.mil) << ",\n";
  }
  for (const auto& h : rmse) {
    os << model << ",rmse_route," << h.horizon << ",,," << fmt(h.rmse_route) << '\n';
    if (h.rmse_link) os << model << ",rmse_link," << h.horizon << ",,," << fmt(h.rmse_link) << '\n';
  }
  return os.str();
}

std::string EvalReport::text_table() const {
  std::ostringstream os;
  char buf[128];
  os << "Model: " << model << '\n';
  std::snprintf(buf, sizeof buf, "%-10s %-6s", "Interval", "");
  os << buf;
  for (int h = 1; h <= horizons; ++h) {
    std::snprintf(buf, sizeof buf, " %10s", ("t+" + std::to_string(h)).c_str());
    os << buf;
  }
  os << '\n';
  for (double a : intervals) {
    for (const char* metric : {"ICP", "MIL"}) {
      std::snprintf(buf, sizeof buf, "%-10s %-6s", metric[0] == 'I' ? (std::to_string(static_cast<int>(std::lround(a * 100))) + "%").c_str() : "",
                    metric);
      os << buf;
      for (int h = 1; h <= horizons; ++h) {
        const auto& c = cell(a, h);
        const auto v = metric[0] == 'I' ? c.icp : c.mil;
        std::snprintf(buf, sizeof buf, " %10s", v ? fmt(v, metric[0] == 'I' ? "%.1f%%" : "%.1f").c_str() : "-");
        os << buf;
      }
      os << '\n';
    }
  }
  for (const char* which : {"RMSE", "RMSE/link"}) {
    const bool route = which[4] == '\0';
    if (!route && std::none_of(rmse.begin(), rmse.end(), [](const HorizonCell& h) { return h.rmse_link.has_value(); }))
      continue;
    std::snprintf(buf, sizeof buf, "%-17s", which);
    os << buf;
    for (const auto& h : rmse) {
      const auto v = route ? h.rmse_route : h.rmse_link;
      std::snprintf(buf, sizeof buf, " %10s", v ? fmt(v, "%.2f").c_str() : "-");
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

void EvalReport::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / ("report_" + model + ".csv")) << csv();
  std::ofstream(dir / ("report_" + model + ".txt")) << text_table();
}

}  // namespace busuq::metrics
