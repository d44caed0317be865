#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "busuq/brnn.hpp"
#include "busuq/common.hpp"
#include "busuq/dqr.hpp"

namespace busuq::hpo {

enum class Scale { Linear, Log };

struct ParamSpec {
  std::string name;
  double lower = 0.0;
  double upper = 1.0;
  Scale scale = Scale::Linear;
  bool integer = false;
};

struct SearchSpace {
  std::vector<ParamSpec> params;

  void validate() const;
  bool contains(const nlohmann::json& config) const;

  // lstm_state_size [10,128], conv_kernel_size [1,20], dropout_probability [0,0.6]
  static SearchSpace dqr();
  // lstm_state_size [10,50], prior_pi [0.7,1], prior_sigma1 [1,3], prior_sigma2 [0.001,1] (log)
  static SearchSpace brnn();
};

// n independent draws, each a JSON object {name: value}. Integers are drawn
// uniformly over the whole numbers in [lower, upper].
std::vector<nlohmann::json> sample_configs(const SearchSpace& space, int n, std::uint64_t seed);

// Overlay sampled values on a base configuration.
dqr::DqrConfig apply_dqr(const nlohmann::json& params, dqr::DqrConfig base);
brnn::BrnnConfig apply_brnn(const nlohmann::json& params, brnn::BrnnConfig base);

struct Trial {
  int trial = 0;
  nlohmann::json params;
  std::optional<double> val_loss;  // absent when the trial failed
  double runtime_s = 0.0;
  std::string error;
};

struct SearchResult {
  std::vector<Trial> trials;
  std::size_t best = 0;  // index into trials

  const Trial& best_trial() const { return trials.at(best); }
  // Running minimum of the validation loss after each trial.
  std::vector<double> incumbent() const;
  // `trial,params_json,val_loss,runtime_s`
  std::string csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

using TrainFn = std::function<double(const nlohmann::json& params, int trial)>;

struct SearchOptions {
  int trials = 25;
  std::uint64_t seed = 1;
  double budget_s = 0.0;  // no new trial starts once this much time has passed; 0 means unlimited
  std::function<void(const Trial&)> on_trial;
};

// Exceptions and non-finite losses mark a trial as failed. Throws
// NumericalError listing every trial's error if none succeeded.
SearchResult run_search(const SearchSpace& space, const TrainFn& train, const SearchOptions& options);

}  // namespace busuq::hpo
