#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "busuq/nn/tensor.hpp"

namespace busuq::ingest {

using Seconds = std::int64_t;  // unix time, UTC, second resolution

inline constexpr Seconds kSecondsPerDay = 86'400;
inline constexpr Seconds kSecondsPerWeek = 7 * kSecondsPerDay;

struct Observation {
  std::string link_id;
  Seconds observed_at = 0;
  double travel_time = 0.0;  // seconds
};

struct GridConfig {
  Seconds frequency = 900;
  int window_u = 32;
  int horizon_k = 3;
  int n_links = 1;
  Seconds period_start = 0;
  Seconds period_end = 0;  // exclusive

  void validate() const;
  Eigen::Index steps() const { return static_cast<Eigen::Index>((period_end - period_start) / frequency); }
  Seconds step_time(Eigen::Index step) const { return period_start + step * frequency; }
  Eigen::Index steps_per_week() const { return static_cast<Eigen::Index>(kSecondsPerWeek / frequency); }
  int tod_bins() const { return static_cast<int>((kSecondsPerDay + frequency - 1) / frequency); }
  // Monday = 0 ... Sunday = 6
  int day_of_week(Eigen::Index step) const;
  int time_of_day_bin(Eigen::Index step) const;
};

// Maps opaque link ids onto dense indices 0..n-1 in route order.
class LinkIndex {
 public:
  LinkIndex() = default;
  explicit LinkIndex(std::vector<std::string> ids);

  // Numeric ids sort numerically, anything else lexicographically.
  static LinkIndex from_observations(std::span<const Observation> observations);

  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }
  // Throws InputError naming the id when unknown.
  int at(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, int> index_;
};

// Per-cell mean of observed travel times (NaN where empty) and counts.
struct RawGrid {
  Eigen::MatrixXd mean;   // steps x links
  Eigen::MatrixXi count;  // steps x links

  bool observed(Eigen::Index step, Eigen::Index link) const { return count(step, link) > 0; }
};

RawGrid snap_to_grid(std::span<const Observation> observations, const GridConfig& grid,
                     const LinkIndex& links);

inline constexpr double kVarianceFloor = 1.0;  // s^2

struct BinStats {
  double mean = 0.0;
  double variance = kVarianceFloor;
  int count = 0;
};

// E[X | link, DoW, ToD] and Var[X | link, DoW, ToD] over observed training cells,
// with fallback (link, DoW, ToD) -> link global -> all-links global.
class ConditionalMeanTable {
 public:
  ConditionalMeanTable() = default;
  ConditionalMeanTable(int n_links, int tod_bins);

  int n_links() const { return n_links_; }
  int tod_bins() const { return tod_bins_; }

  BinStats& bin(int link, int dow, int tod) { return bins_[index(link, dow, tod)]; }
  const BinStats& bin(int link, int dow, int tod) const { return bins_[index(link, dow, tod)]; }
  BinStats& link_global(int link) { return link_global_[static_cast<std::size_t>(link)]; }
  const BinStats& link_global(int link) const { return link_global_[static_cast<std::size_t>(link)]; }
  BinStats& global() { return global_; }
  const BinStats& global() const { return global_; }

  // Bin variances with at least two observations are shrunk toward the link's
  // mean within-bin variance: (n V + k P) / (n + k). k = 0 leaves them as is.
  double variance_pooling() const { return variance_pooling_; }
  void set_variance_pooling(double k);
  double pooled_variance(int link) const { return pooled_variance_[static_cast<std::size_t>(link)]; }

  // Resolved (mean, variance) after fallback and variance floor.
  BinStats lookup(int link, int dow, int tod) const;
  BinStats lookup(int link, Eigen::Index step, const GridConfig& grid) const {
    return lookup(link, grid.day_of_week(step), grid.time_of_day_bin(step));
  }

  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static ConditionalMeanTable from_json(const nlohmann::json& j);

 private:
  std::size_t index(int link, int dow, int tod) const {
    return (static_cast<std::size_t>(link) * 7 + static_cast<std::size_t>(dow)) *
               static_cast<std::size_t>(tod_bins_) +
           static_cast<std::size_t>(tod);
  }

  int n_links_ = 0;
  int tod_bins_ = 0;
  std::vector<BinStats> bins_;
  std::vector<BinStats> link_global_;
  BinStats global_;
  double variance_pooling_ = 0.0;
  std::vector<double> pooled_variance_;

  void update_pooled_variance();
};

// Statistics use cells in steps [0, train_end) only, minus the optional
// excluded range [exclude_begin, exclude_end).
ConditionalMeanTable build_conditional_means(const RawGrid& raw, const GridConfig& grid,
                                             Eigen::Index train_end, Eigen::Index exclude_begin = 0,
                                             Eigen::Index exclude_end = 0, double variance_pooling = 0.0);

struct StandardizedGrid {
  Eigen::MatrixXd values;  // steps x links, standardized
  Eigen::MatrixXd mask;    // 1 observed, 0 imputed
};

StandardizedGrid impute_and_standardize(const RawGrid& raw, const ConditionalMeanTable& table,
                                        const GridConfig& grid);

double standardize(double seconds, int link, Eigen::Index step, const ConditionalMeanTable& table,
                   const GridConfig& grid);
double destandardize(double value, int link, Eigen::Index step, const ConditionalMeanTable& table,
                     const GridConfig& grid);

struct LinkSeriesTensor {
  nn::Tensor<float> x, y, mask_x, mask_y;  // N x U x L, N x K x L
  GridConfig grid;
  Eigen::Index first_step = 0;  // grid step of x(0, 0, .)

  Eigen::Index samples() const { return x.shape.empty() ? 0 : x.dim(0); }
  // Grid step that holds y(sample, horizon_index, .), horizon_index in [0, K).
  Eigen::Index target_step(Eigen::Index sample, int horizon_index) const {
    return first_step + sample + grid.window_u + horizon_index;
  }
  Seconds target_time(Eigen::Index sample, int horizon_index) const {
    return grid.step_time(target_step(sample, horizon_index));
  }
};

struct SplitWeeks {
  int train = 13;
  int validation = 2;
  int test = 2;
};

struct SplitBounds {
  Eigen::Index train_end = 0;
  Eigen::Index validation_end = 0;
  Eigen::Index test_end = 0;
};

SplitBounds split_bounds(const GridConfig& grid, const SplitWeeks& weeks);

struct FoldOptions {
  // Steps withheld at the tail of every split. 0 gives steps - U - K + 1
  // windows per split; 1 gives 8701 training windows for 13 weeks at 15 min.
  int trailing_guard_steps = 0;
};

struct StandardizeOptions {
  // Training rows are re-standardized week by week with statistics from the
  // other training weeks, so no training target is scaled by a variance it
  // contributed to. Validation and test rows always use the full table.
  bool cross_fit_training = true;
  // Shrinkage strength for bin variances (see ConditionalMeanTable). With a
  // handful of weeks per bin the raw variances are too noisy to scale by.
  double variance_pooling = 4.0;
};

// Applies the leave-one-week-out standardization to steps [0, train_end).
// Needs at least two training weeks; returns false (grid untouched) otherwise.
bool cross_fit_training_rows(const RawGrid& raw, const GridConfig& grid, Eigen::Index train_end,
                             StandardizedGrid& standardized, double variance_pooling = 0.0);

struct FoldedSplits {
  LinkSeriesTensor train, validation, test;
};

LinkSeriesTensor fold_range(const StandardizedGrid& data, const GridConfig& grid, Eigen::Index begin,
                            Eigen::Index end, const FoldOptions& options = {});
FoldedSplits fold_windows(const StandardizedGrid& data, const GridConfig& grid, const SplitBounds& bounds,
                          const FoldOptions& options = {});

// RFC 3339 timestamps ("2020-08-03T07:30:00Z", offsets and fractions accepted).
Seconds parse_rfc3339(const std::string& text);
std::string format_rfc3339(Seconds t);

// CSV with header `link_id,observed_at,travel_time_s`. Errors carry the line number.
std::vector<Observation> read_observations_csv(std::istream& in);
std::vector<Observation> read_observations_csv(const std::filesystem::path& path);
void write_observations_csv(std::ostream& out, std::span<const Observation> observations);

// Everything `prepare` produces, persisted as a directory.
struct PreparedData {
  GridConfig grid;
  LinkIndex links;
  SplitWeeks split_weeks;
  SplitBounds bounds;
  FoldOptions fold;
  StandardizeOptions standardize_options;
  ConditionalMeanTable table;
  RawGrid raw;
  StandardizedGrid standardized;
  FoldedSplits splits;
  std::size_t observation_count = 0;

  const LinkSeriesTensor& split(const std::string& name) const;
  // Observed travel time in seconds, NaN if the cell was empty.
  double observed_seconds(Eigen::Index step, int link) const;
};

PreparedData prepare(std::span<const Observation> observations, GridConfig grid, const SplitWeeks& weeks,
                     const FoldOptions& fold = {}, const StandardizeOptions& standardize_options = {});

void save_prepared(const PreparedData& data, const std::filesystem::path& dir);
PreparedData load_prepared(const std::filesystem::path& dir);

// Table-1 style summary lines.
std::string describe(const PreparedData& data);

}  // namespace busuq::ingest
