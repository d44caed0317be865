#include "busuq/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "busuq/array_io.hpp"
#include "busuq/common.hpp"

namespace busuq::ingest {

using Eigen::Index;
using nlohmann::json;

void GridConfig::validate() const {
  require(frequency > 0, "grid frequency must be positive");
  require(window_u >= 1, "window size U must be >= 1");
  require(horizon_k >= 1, "horizon K must be >= 1");
  require(n_links >= 1, "grid needs at least one link");
  require(period_end > period_start, "grid period is empty");
}

int GridConfig::day_of_week(Index step) const {
  const Seconds t = step_time(step);
  Seconds days = t / kSecondsPerDay;
  if (t % kSecondsPerDay < 0) --days;
  // 1970-01-01 was a Thursday (Monday-based index 3).
  return static_cast<int>(((days + 3) % 7 + 7) % 7);
}

int GridConfig::time_of_day_bin(Index step) const {
  const Seconds t = step_time(step);
  const Seconds tod = ((t % kSecondsPerDay) + kSecondsPerDay) % kSecondsPerDay;
  return static_cast<int>(tod / frequency);
}

LinkIndex::LinkIndex(std::vector<std::string> ids) : ids_(std::move(ids)) {
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const bool inserted = index_.emplace(ids_[i], static_cast<int>(i)).second;
    require(inserted, "duplicate link id '" + ids_[i] + "'");
  }
}

namespace {

bool parse_integer(const std::string& s, long long& out) {
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

}  // namespace

LinkIndex LinkIndex::from_observations(std::span<const Observation> observations) {
  std::vector<std::string> ids;
  {
    std::unordered_map<std::string, bool> seen;
    for (const auto& o : observations) {
      if (seen.emplace(o.link_id, true).second) ids.push_back(o.link_id);
    }
  }
  const bool numeric = std::all_of(ids.begin(), ids.end(), [](const std::string& s) {
    long long v;
    return parse_integer(s, v);
  });
  if (numeric) {
    std::sort(ids.begin(), ids.end(), [](const std::string& a, const std::string& b) {
      long long va, vb;
      parse_integer(a, va);
      parse_integer(b, vb);
      return va < vb;
    });
  } else {
    std::sort(ids.begin(), ids.end());
  }
  return LinkIndex(std::move(ids));
}

int LinkIndex::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw InputError("unknown link id '" + id + "'");
  return it->second;
}

RawGrid snap_to_grid(std::span<const Observation> observations, const GridConfig& grid,
                     const LinkIndex& links) {
  grid.validate();
  require(links.size() == grid.n_links, "link index size does not match grid n_links");
  const Index steps = grid.steps();
  RawGrid raw;
  raw.mean = Eigen::MatrixXd::Zero(steps, grid.n_links);
  raw.count = Eigen::MatrixXi::Zero(steps, grid.n_links);
  for (const auto& o : observations) {
    const int link = links.at(o.link_id);
    if (o.observed_at < grid.period_start || o.observed_at >= grid.period_end) {
      throw InputError("observation for link '" + o.link_id + "' at " + format_rfc3339(o.observed_at) +
                       " lies outside the grid period");
    }
    require(std::isfinite(o.travel_time) && o.travel_time > 0.0,
            "non-positive travel time for link '" + o.link_id + "'");
    const Index step = static_cast<Index>((o.observed_at - grid.period_start) / grid.frequency);
    raw.mean(step, link) += o.travel_time;
    raw.count(step, link) += 1;
  }
  for (Index s = 0; s < steps; ++s) {
    for (Index l = 0; l < grid.n_links; ++l) {
      raw.mean(s, l) = raw.count(s, l) > 0 ? raw.mean(s, l) / raw.count(s, l)
                                           : std::numeric_limits<double>::quiet_NaN();
    }
  }
  return raw;
}

ConditionalMeanTable::ConditionalMeanTable(int n_links, int tod_bins)
    : n_links_(n_links),
      tod_bins_(tod_bins),
      bins_(static_cast<std::size_t>(n_links) * 7 * static_cast<std::size_t>(tod_bins)),
      link_global_(static_cast<std::size_t>(n_links)),
      pooled_variance_(static_cast<std::size_t>(n_links), kVarianceFloor) {}

BinStats ConditionalMeanTable::lookup(int link, int dow, int tod) const {
  const BinStats& lg = link_global_[static_cast<std::size_t>(link)];
  const BinStats& fallback = lg.count > 0 ? lg : global_;
  const BinStats& b = bins_[index(link, dow, tod)];
  BinStats out;
  out.count = b.count;
  out.mean = b.count > 0 ? b.mean : fallback.mean;
  // A single observation carries no spread information.
  if (b.count > 1) {
    const double n = b.count;
    const double k = variance_pooling_;
    out.variance = (n * b.variance + k * pooled_variance_[static_cast<std::size_t>(link)]) / (n + k);
  } else {
    out.variance = fallback.variance;
  }
  out.variance = std::max(out.variance, kVarianceFloor);
  return out;
}

void ConditionalMeanTable::set_variance_pooling(double k) {
  require(std::isfinite(k) && k >= 0.0, "variance pooling strength must be non-negative");
  variance_pooling_ = k;
  update_pooled_variance();
}

void ConditionalMeanTable::update_pooled_variance() {
  pooled_variance_.assign(static_cast<std::size_t>(n_links_), 0.0);
  for (int l = 0; l < n_links_; ++l) {
    double sum = 0.0;
    int used = 0;
    for (int d = 0; d < 7; ++d) {
      for (int t = 0; t < tod_bins_; ++t) {
        const BinStats& b = bins_[index(l, d, t)];
        if (b.count < 2) continue;
        sum += b.variance;
        ++used;
      }
    }
    const BinStats& lg = link_global_[static_cast<std::size_t>(l)];
    pooled_variance_[static_cast<std::size_t>(l)] = used > 0 ? sum / used : (lg.count > 0 ? lg : global_).variance;
  }
}

json ConditionalMeanTable::to_json() const {
  std::vector<double> mean, var;
  std::vector<int> count;
  mean.reserve(bins_.size());
  var.reserve(bins_.size());
  count.reserve(bins_.size());
  for (const auto& b : bins_) {
    mean.push_back(b.mean);
    var.push_back(b.variance);
    count.push_back(b.count);
  }
  json links = json::array();
  for (const auto& b : link_global_) links.push_back({b.mean, b.variance, b.count});
  return json{{"n_links", n_links_},
              {"tod_bins", tod_bins_},
              {"layout", "link,dow,tod"},
              {"mean", mean},
              {"variance", var},
              {"count", count},
              {"link_global", links},
              {"global", {global_.mean, global_.variance, global_.count}},
              {"variance_pooling", variance_pooling_},
              {"warnings", warnings}};
}

ConditionalMeanTable ConditionalMeanTable::from_json(const json& j) {
  ConditionalMeanTable t(j.at("n_links").get<int>(), j.at("tod_bins").get<int>());
  const auto mean = j.at("mean").get<std::vector<double>>();
  const auto var = j.at("variance").get<std::vector<double>>();
  const auto count = j.at("count").get<std::vector<int>>();
  require(mean.size() == t.bins_.size() && var.size() == mean.size() && count.size() == mean.size(),
          "conditional table arrays have the wrong length");
  for (std::size_t i = 0; i < mean.size(); ++i) t.bins_[i] = {mean[i], var[i], count[i]};
  const auto& links = j.at("link_global");
  require(links.size() == t.link_global_.size(), "conditional table link count mismatch");
  for (std::size_t i = 0; i < links.size(); ++i) {
    t.link_global_[i] = {links[i][0].get<double>(), links[i][1].get<double>(), links[i][2].get<int>()};
  }
  const auto& g = j.at("global");
  t.global_ = {g[0].get<double>(), g[1].get<double>(), g[2].get<int>()};
  t.warnings = j.value("warnings", std::vector<std::string>{});
  t.set_variance_pooling(j.value("variance_pooling", 0.0));
  return t;
}

namespace {

// Welford accumulator, population variance.
struct Moments {
  long n = 0;
  double mean = 0.0, m2 = 0.0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  BinStats stats() const {
    return {mean, n > 0 ? m2 / static_cast<double>(n) : 0.0, static_cast<int>(n)};
  }
};

}  // namespace

ConditionalMeanTable build_conditional_means(const RawGrid& raw, const GridConfig& grid, Index train_end,
                                             Index exclude_begin, Index exclude_end, double variance_pooling) {
  grid.validate();
  require(raw.mean.rows() == grid.steps() && raw.mean.cols() == grid.n_links,
          "raw grid does not match grid config");
  require(train_end > 0 && train_end <= raw.mean.rows(), "training range is empty or out of bounds");

  ConditionalMeanTable table(grid.n_links, grid.tod_bins());
  std::vector<Moments> bins(static_cast<std::size_t>(grid.n_links) * 7 *
                            static_cast<std::size_t>(grid.tod_bins()));
  std::vector<Moments> per_link(static_cast<std::size_t>(grid.n_links));
  Moments all;
  for (Index s = 0; s < train_end; ++s) {
    if (s >= exclude_begin && s < exclude_end) continue;
    const int dow = grid.day_of_week(s);
    const int tod = grid.time_of_day_bin(s);
    for (int l = 0; l < grid.n_links; ++l) {
      if (!raw.observed(s, l)) continue;
      const double v = raw.mean(s, l);
      bins[(static_cast<std::size_t>(l) * 7 + static_cast<std::size_t>(dow)) *
               static_cast<std::size_t>(grid.tod_bins()) +
           static_cast<std::size_t>(tod)]
          .add(v);
      per_link[static_cast<std::size_t>(l)].add(v);
      all.add(v);
    }
  }
  require(all.n > 0, "no observations in the training period");
  for (int l = 0; l < grid.n_links; ++l) {
    table.link_global(l) = per_link[static_cast<std::size_t>(l)].stats();
    for (int d = 0; d < 7; ++d) {
      for (int t = 0; t < grid.tod_bins(); ++t) {
        table.bin(l, d, t) =
            bins[(static_cast<std::size_t>(l) * 7 + static_cast<std::size_t>(d)) *
                     static_cast<std::size_t>(grid.tod_bins()) +
                 static_cast<std::size_t>(t)]
                .stats();
      }
    }
  }
  table.global() = all.stats();
  table.set_variance_pooling(variance_pooling);
  if (train_end * grid.frequency < kSecondsPerWeek) {
    table.warnings.push_back("training period is shorter than one week; some day-of-week bins are empty");
  }
  return table;
}

double standardize(double seconds, int link, Index step, const ConditionalMeanTable& table,
                   const GridConfig& grid) {
  const BinStats b = table.lookup(link, step, grid);
  return (seconds - b.mean) / std::sqrt(b.variance);
}

double destandardize(double value, int link, Index step, const ConditionalMeanTable& table,
                     const GridConfig& grid) {
  const BinStats b = table.lookup(link, step, grid);
  return value * std::sqrt(b.variance) + b.mean;
}

StandardizedGrid impute_and_standardize(const RawGrid& raw, const ConditionalMeanTable& table,
                                        const GridConfig& grid) {
  require(table.n_links() == grid.n_links, "conditional table does not match grid");
  const Index steps = raw.mean.rows();
  StandardizedGrid out;
  out.values.resize(steps, grid.n_links);
  out.mask.resize(steps, grid.n_links);
  for (Index s = 0; s < steps; ++s) {
    for (int l = 0; l < grid.n_links; ++l) {
      const BinStats b = table.lookup(l, s, grid);
      if (raw.observed(s, l)) {
        out.values(s, l) = (raw.mean(s, l) - b.mean) / std::sqrt(b.variance);
        out.mask(s, l) = 1.0;
      } else {
        out.values(s, l) = 0.0;  // imputed value is the conditional mean
        out.mask(s, l) = 0.0;
      }
    }
  }
  return out;
}

SplitBounds split_bounds(const GridConfig& grid, const SplitWeeks& weeks) {
  require(weeks.train >= 1 && weeks.validation >= 0 && weeks.test >= 0, "invalid split weeks");
  require(kSecondsPerWeek % grid.frequency == 0, "grid frequency must divide one week");
  const Index week = grid.steps_per_week();
  SplitBounds b;
  b.train_end = week * weeks.train;
  b.validation_end = b.train_end + week * weeks.validation;
  b.test_end = b.validation_end + week * weeks.test;
  require(b.test_end <= grid.steps(), "split weeks exceed the grid period (" +
                                          std::to_string(grid.steps() / week) + " whole weeks available)");
  return b;
}

LinkSeriesTensor fold_range(const StandardizedGrid& data, const GridConfig& grid, Index begin, Index end,
                            const FoldOptions& options) {
  const Index usable = end - begin - options.trailing_guard_steps;
  const Index span = grid.window_u + grid.horizon_k;
  if (usable < span) {
    throw InputError("split [" + std::to_string(begin) + ", " + std::to_string(end) + ") has " +
                     std::to_string(end - begin) + " steps; one window needs " + std::to_string(span));
  }
  const Index n = usable - span + 1;
  const Index L = grid.n_links;
  LinkSeriesTensor t;
  t.grid = grid;
  t.first_step = begin;
  t.x = nn::Tensor<float>({n, grid.window_u, L});
  t.mask_x = nn::Tensor<float>({n, grid.window_u, L});
  t.y = nn::Tensor<float>({n, grid.horizon_k, L});
  t.mask_y = nn::Tensor<float>({n, grid.horizon_k, L});
  for (Index i = 0; i < n; ++i) {
    for (Index u = 0; u < grid.window_u; ++u) {
      for (Index l = 0; l < L; ++l) {
        t.x(i, u, l) = static_cast<float>(data.values(begin + i + u, l));
        t.mask_x(i, u, l) = static_cast<float>(data.mask(begin + i + u, l));
      }
    }
    for (Index k = 0; k < grid.horizon_k; ++k) {
      for (Index l = 0; l < L; ++l) {
        t.y(i, k, l) = static_cast<float>(data.values(begin + i + grid.window_u + k, l));
        t.mask_y(i, k, l) = static_cast<float>(data.mask(begin + i + grid.window_u + k, l));
      }
    }
  }
  return t;
}

FoldedSplits fold_windows(const StandardizedGrid& data, const GridConfig& grid, const SplitBounds& bounds,
                          const FoldOptions& options) {
  FoldedSplits s;
  s.train = fold_range(data, grid, 0, bounds.train_end, options);
  s.validation = fold_range(data, grid, bounds.train_end, bounds.validation_end, options);
  s.test = fold_range(data, grid, bounds.validation_end, bounds.test_end, options);
  return s;
}

// ---------------------------------------------------------------------------
// Timestamps and CSV

Seconds parse_rfc3339(const std::string& text) {
  int y, mo, d, h, mi, s;
  char sep;
  int consumed = 0;
  if (std::sscanf(text.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d%n", &y, &mo, &d, &sep, &h, &mi, &s, &consumed) != 7 ||
      (sep != 'T' && sep != 't' && sep != ' ')) {
    throw InputError("malformed RFC 3339 timestamp '" + text + "'");
  }
  std::size_t pos = static_cast<std::size_t>(consumed);
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && std::isdigit(static_cast<unsigned char>(text[pos]))) ++pos;
  }
  Seconds offset = 0;
  if (pos < text.size() && (text[pos] == 'Z' || text[pos] == 'z')) {
    ++pos;
  } else if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    int oh, om;
    if (std::sscanf(text.c_str() + pos + 1, "%2d:%2d", &oh, &om) != 2) {
      throw InputError("malformed UTC offset in '" + text + "'");
    }
    offset = (text[pos] == '+' ? 1 : -1) * (oh * 3600 + om * 60);
    pos += 6;
  } else {
    throw InputError("timestamp '" + text + "' lacks a UTC offset");
  }
  if (pos != text.size()) throw InputError("trailing characters in timestamp '" + text + "'");

  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 60) throw InputError("invalid date in '" + text + "'");
  const Seconds days = sys_days{ymd}.time_since_epoch().count();
  return days * kSecondsPerDay + h * 3600 + mi * 60 + s - offset;
}

std::string format_rfc3339(Seconds t) {
  using namespace std::chrono;
  Seconds days = t / kSecondsPerDay;
  Seconds rem = t % kSecondsPerDay;
  if (rem < 0) {
    rem += kSecondsPerDay;
    --days;
  }
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

namespace {

std::string trim(std::string s) {
  const auto ws = " \t\r\n";
  s.erase(0, s.find_first_not_of(ws));
  s.erase(s.find_last_not_of(ws) + 1);
  return s;
}

}  // namespace

std::vector<Observation> read_observations_csv(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!trim(line).empty()) break;
  }
  if (trim(line) != "link_id,observed_at,travel_time_s") {
    throw InputError("line " + std::to_string(line_no) + ": expected header link_id,observed_at,travel_time_s");
  }
  std::vector<Observation> out;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    const auto where = "line " + std::to_string(line_no) + ": ";
    if (fields.size() != 3 || fields[0].empty()) throw InputError(where + "expected 3 fields");
    Observation o;
    o.link_id = fields[0];
    try {
      o.observed_at = parse_rfc3339(fields[1]);
    } catch (const InputError& e) {
      throw InputError(where + e.what());
    }
    const char* b = fields[2].data();
    const char* e = b + fields[2].size();
    auto [ptr, ec] = std::from_chars(b, e, o.travel_time);
    if (ec != std::errc{} || ptr != e || !std::isfinite(o.travel_time) || o.travel_time <= 0.0) {
      throw InputError(where + "travel_time_s must be a positive decimal, got '" + fields[2] + "'");
    }
    out.push_back(std::move(o));
  }
  return out;
}

std::vector<Observation> read_observations_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), "cannot open " + path.string());
  return read_observations_csv(in);
}

void write_observations_csv(std::ostream& out, std::span<const Observation> observations) {
  out << "link_id,observed_at,travel_time_s\n";
  char buf[64];
  for (const auto& o : observations) {
    std::snprintf(buf, sizeof buf, "%.3f", o.travel_time);
    out << o.link_id << ',' << format_rfc3339(o.observed_at) << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Prepared directory

const LinkSeriesTensor& PreparedData::split(const std::string& name) const {
  if (name == "train") return splits.train;
  if (name == "validation") return splits.validation;
  if (name == "test") return splits.test;
  throw InputError("unknown split '" + name + "'");
}

double PreparedData::observed_seconds(Index step, int link) const {
  return raw.observed(step, link) ? raw.mean(step, link) : std::numeric_limits<double>::quiet_NaN();
}

bool cross_fit_training_rows(const RawGrid& raw, const GridConfig& grid, Index train_end,
                             StandardizedGrid& standardized, double variance_pooling) {
  const Index week = grid.steps_per_week();
  const Index weeks = train_end / week;
  if (weeks < 2) return false;
  for (Index w = 0; w < weeks; ++w) {
    const Index begin = w * week;
    const Index end = (w + 1 == weeks) ? train_end : begin + week;
    const auto table = build_conditional_means(raw, grid, train_end, begin, end, variance_pooling);
    for (Index s = begin; s < end; ++s) {
      for (int l = 0; l < grid.n_links; ++l) {
        if (!raw.observed(s, l)) continue;
        const BinStats b = table.lookup(l, s, grid);
        standardized.values(s, l) = (raw.mean(s, l) - b.mean) / std::sqrt(b.variance);
      }
    }
  }
  return true;
}

PreparedData prepare(std::span<const Observation> observations, GridConfig grid, const SplitWeeks& weeks,
                     const FoldOptions& fold, const StandardizeOptions& standardize_options) {
  require(!observations.empty(), "no observations");
  PreparedData p;
  p.links = LinkIndex::from_observations(observations);
  grid.n_links = p.links.size();
  grid.validate();
  p.grid = grid;
  p.split_weeks = weeks;
  p.fold = fold;
  p.bounds = split_bounds(grid, weeks);
  p.raw = snap_to_grid(observations, grid, p.links);
  p.table = build_conditional_means(p.raw, grid, p.bounds.train_end, 0, 0, standardize_options.variance_pooling);
  p.standardized = impute_and_standardize(p.raw, p.table, grid);
  p.standardize_options = standardize_options;
  if (standardize_options.cross_fit_training &&
      !cross_fit_training_rows(p.raw, grid, p.bounds.train_end, p.standardized,
                               standardize_options.variance_pooling)) {
    p.table.warnings.push_back("cross-fitted standardization needs two training weeks; training rows use the full table");
  }
  p.splits = fold_windows(p.standardized, grid, p.bounds, fold);
  p.observation_count = observations.size();
  return p;
}

namespace {

nn::Tensor<float> matrix_tensor(const Eigen::MatrixXd& m) {
  nn::Tensor<float> t({m.rows(), m.cols()});
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) t(r, c) = static_cast<float>(m(r, c));
  return t;
}

Eigen::MatrixXd tensor_matrix(const nn::Tensor<float>& t) {
  require(t.rank() == 2, "expected a rank-2 array");
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) m(r, c) = t(r, c);
  return m;
}

json grid_json(const GridConfig& g) {
  return {{"frequency_s", g.frequency},
          {"window_u", g.window_u},
          {"horizon_k", g.horizon_k},
          {"n_links", g.n_links},
          {"period_start", format_rfc3339(g.period_start)},
          {"period_end", format_rfc3339(g.period_end)}};
}

GridConfig grid_from_json(const json& j) {
  GridConfig g;
  g.frequency = j.at("frequency_s").get<Seconds>();
  g.window_u = j.at("window_u").get<int>();
  g.horizon_k = j.at("horizon_k").get<int>();
  g.n_links = j.at("n_links").get<int>();
  g.period_start = parse_rfc3339(j.at("period_start").get<std::string>());
  g.period_end = parse_rfc3339(j.at("period_end").get<std::string>());
  g.validate();
  return g;
}

}  // namespace

void save_prepared(const PreparedData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json arrays;
  // Raw means keep NaN for empty cells; counts live in the mask.
  arrays["raw_mean"] = io::write_tensor(dir, "raw_mean", matrix_tensor(data.raw.mean));
  arrays["raw_count"] = io::write_tensor(dir, "raw_count", matrix_tensor(data.raw.count.cast<double>()));
  arrays["standardized"] = io::write_tensor(dir, "standardized", matrix_tensor(data.standardized.values));
  arrays["mask"] = io::write_tensor(dir, "mask", matrix_tensor(data.standardized.mask));
  json splits;
  for (const char* name : {"train", "validation", "test"}) {
    const auto& t = data.split(name);
    const std::string n = name;
    splits[n] = {{"first_step", t.first_step},
                 {"samples", t.samples()},
                 {"x", io::write_tensor(dir, n + "_x", t.x)},
                 {"y", io::write_tensor(dir, n + "_y", t.y)},
                 {"mask_x", io::write_tensor(dir, n + "_mask_x", t.mask_x)},
                 {"mask_y", io::write_tensor(dir, n + "_mask_y", t.mask_y)}};
  }
  json meta{{"format", "busuq-prepared-v1"},
            {"grid", grid_json(data.grid)},
            {"links", data.links.ids()},
            {"split_weeks", {data.split_weeks.train, data.split_weeks.validation, data.split_weeks.test}},
            {"split_bounds", {data.bounds.train_end, data.bounds.validation_end, data.bounds.test_end}},
            {"trailing_guard_steps", data.fold.trailing_guard_steps},
            {"cross_fit_training", data.standardize_options.cross_fit_training},
            {"variance_pooling", data.standardize_options.variance_pooling},
            {"observation_count", data.observation_count},
            {"conditional_table", data.table.to_json()},
            {"arrays", arrays},
            {"splits", splits}};
  io::write_json(dir / "meta.json", meta);
}

PreparedData load_prepared(const std::filesystem::path& dir) {
  const json meta = io::read_json(dir / "meta.json");
  require(meta.value("format", "") == "busuq-prepared-v1", dir.string() + ": not a prepared tensor directory");
  PreparedData p;
  p.grid = grid_from_json(meta.at("grid"));
  p.links = LinkIndex(meta.at("links").get<std::vector<std::string>>());
  const auto w = meta.at("split_weeks");
  p.split_weeks = {w[0].get<int>(), w[1].get<int>(), w[2].get<int>()};
  const auto b = meta.at("split_bounds");
  p.bounds = {b[0].get<Index>(), b[1].get<Index>(), b[2].get<Index>()};
  p.fold.trailing_guard_steps = meta.value("trailing_guard_steps", 0);
  p.standardize_options.cross_fit_training = meta.value("cross_fit_training", false);
  p.standardize_options.variance_pooling = meta.value("variance_pooling", 0.0);
  p.observation_count = meta.at("observation_count").get<std::size_t>();
  p.table = ConditionalMeanTable::from_json(meta.at("conditional_table"));
  const auto& arrays = meta.at("arrays");
  p.raw.mean = tensor_matrix(io::read_tensor(dir, arrays.at("raw_mean")));
  p.raw.count = tensor_matrix(io::read_tensor(dir, arrays.at("raw_count"))).cast<int>();
  p.standardized.values = tensor_matrix(io::read_tensor(dir, arrays.at("standardized")));
  p.standardized.mask = tensor_matrix(io::read_tensor(dir, arrays.at("mask")));
  auto load_split = [&](const std::string& name, LinkSeriesTensor& t) {
    const auto& s = meta.at("splits").at(name);
    t.grid = p.grid;
    t.first_step = s.at("first_step").get<Index>();
    t.x = io::read_tensor(dir, s.at("x"));
    t.y = io::read_tensor(dir, s.at("y"));
    t.mask_x = io::read_tensor(dir, s.at("mask_x"));
    t.mask_y = io::read_tensor(dir, s.at("mask_y"));
  };
  load_split("train", p.splits.train);
  load_split("validation", p.splits.validation);
  load_split("test", p.splits.test);
  return p;
}

std::string describe(const PreparedData& data) {
  std::ostringstream os;
  auto shape = [](const nn::Tensor<float>& t) {
    return std::to_string(t.dim(0)) + " x " + std::to_string(t.dim(1)) + " x " + std::to_string(t.dim(2));
  };
  os << "Link count                   " << data.grid.n_links << '\n'
     << "Link travel time observations " << data.observation_count << '\n';
  for (const char* name : {"train", "validation", "test"}) {
    const auto& t = data.split(name);
    std::string label = name;
    label[0] = static_cast<char>(std::toupper(label[0]));
    os << label << ": X size" << std::string(22 - label.size(), ' ') << shape(t.x) << '\n'
       << label << ": Y size" << std::string(22 - label.size(), ' ') << shape(t.y) << '\n';
  }
  for (const auto& w : data.table.warnings) os << "warning: " << w << '\n';
  return os.str();
}

}  // namespace busuq::ingest
