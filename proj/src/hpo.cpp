#include "busuq/hpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace busuq::hpo {

void SearchSpace::validate() const {
  require(!params.empty(), "search space is empty");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    require(!p.name.empty(), "search space parameter without a name");
    require(std::isfinite(p.lower) && std::isfinite(p.upper) && p.lower < p.upper,
            "search space '" + p.name + "': lower bound must be below the upper bound");
    require(p.scale == Scale::Linear || p.lower > 0.0, "search space '" + p.name + "': log scale needs lower > 0");
    if (p.integer) {
      require(std::ceil(p.lower) <= std::floor(p.upper), "search space '" + p.name + "': no integer in range");
    }
    for (std::size_t j = 0; j < i; ++j)
      require(params[j].name != p.name, "search space lists '" + p.name + "' twice");
  }
}

bool SearchSpace::contains(const nlohmann::json& config) const {
  for (const auto& p : params) {
    if (!config.contains(p.name)) return false;
    const double v = config.at(p.name).get<double>();
    if (v < p.lower || v > p.upper) return false;
    if (p.integer && v != std::round(v)) return false;
  }
  return true;
}

SearchSpace SearchSpace::dqr() {
  return {{{"lstm_state_size", 10, 128, Scale::Linear, true},
           {"conv_kernel_size", 1, 20, Scale::Linear, true},
           {"dropout_probability", 0.0, 0.6, Scale::Linear, false}}};
}

SearchSpace SearchSpace::brnn() {
  return {{{"lstm_state_size", 10, 50, Scale::Linear, true},
           {"prior_pi", 0.7, 1.0, Scale::Linear, false},
           {"prior_sigma1", 1.0, 3.0, Scale::Linear, false},
           {"prior_sigma2", 0.001, 1.0, Scale::Log, false}}};
}

std::vector<nlohmann::json> sample_configs(const SearchSpace& space, int n, std::uint64_t seed) {
  space.validate();
  require(n >= 1, "sample_configs: n must be >= 1");
  std::vector<nlohmann::json> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    Rng rng = derived_rng(seed, static_cast<std::uint64_t>(i));
    nlohmann::json c = nlohmann::json::object();
    for (const auto& p : space.params) {
      if (p.integer) {
        std::uniform_int_distribution<long long> d(static_cast<long long>(std::ceil(p.lower)),
                                                   static_cast<long long>(std::floor(p.upper)));
        c[p.name] = d(rng);
      } else if (p.scale == Scale::Log) {
        std::uniform_real_distribution<double> d(std::log(p.lower), std::log(p.upper));
        c[p.name] = std::clamp(std::exp(d(rng)), p.lower, p.upper);
      } else {
        std::uniform_real_distribution<double> d(p.lower, p.upper);
        c[p.name] = d(rng);
      }
    }
    out.push_back(std::move(c));
  }
  return out;
}

dqr::DqrConfig apply_dqr(const nlohmann::json& params, dqr::DqrConfig base) {
  for (const auto& [key, value] : params.items()) {
    if (key == "lstm_state_size") base.lstm_state_size = value.get<int>();
    else if (key == "conv_kernel_size") base.conv_kernel_size = value.get<int>();
    else if (key == "dropout_probability") base.dropout_probability = value.get<double>();
    else throw InputError("unknown DQR hyper-parameter '" + key + "'");
  }
  base.validate();
  return base;
}

brnn::BrnnConfig apply_brnn(const nlohmann::json& params, brnn::BrnnConfig base) {
  for (const auto& [key, value] : params.items()) {
    if (key == "lstm_state_size") base.lstm_state_size = value.get<int>();
    else if (key == "prior_pi") base.prior.pi = value.get<double>();
    else if (key == "prior_sigma1") base.prior.sigma1 = value.get<double>();
    else if (key == "prior_sigma2") base.prior.sigma2 = value.get<double>();
    else throw InputError("unknown BRNN hyper-parameter '" + key + "'");
  }
  base.validate();
  return base;
}

std::vector<double> SearchResult::incumbent() const {
  std::vector<double> out;
  double best_so_far = std::numeric_limits<double>::infinity();
  for (const auto& t : trials) {
    if (t.val_loss) best_so_far = std::min(best_so_far, *t.val_loss);
    out.push_back(best_so_far);
  }
  return out;
}

std::string SearchResult::csv() const {
  std::ostringstream os;
  os << "trial,params_json,val_loss,runtime_s\n";
  char buf[64];
  for (const auto& t : trials) {
    std::string params = t.params.dump();
    std::string quoted = "\"";
    for (char ch : params) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    quoted += '"';
    os << t.trial << ',' << quoted << ',';
    if (t.val_loss) {
      std::snprintf(buf, sizeof buf, "%.9g", *t.val_loss);
      os << buf;
    }
    std::snprintf(buf, sizeof buf, ",%.3f\n", t.runtime_s);
    os << buf;
  }
  return os.str();
}

void SearchResult::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << csv();
}

SearchResult run_search(const SearchSpace& space, const TrainFn& train, const SearchOptions& options) {
  require(options.trials >= 1, "run_search: at least one trial");
  require(options.budget_s >= 0.0, "run_search: budget must be non-negative");
  const auto configs = sample_configs(space, options.trials, options.seed);
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };

  SearchResult result;
  std::optional<std::size_t> best;
  for (int i = 0; i < options.trials; ++i) {
    if (options.budget_s > 0.0 && i > 0 && elapsed() >= options.budget_s) break;
    Trial t;
    t.trial = i;
    t.params = configs[static_cast<std::size_t>(i)];
    const double t0 = elapsed();
    try {
      const double loss = train(t.params, i);
      if (std::isfinite(loss)) t.val_loss = loss;
      else t.error = "non-finite validation loss";
    } catch (const std::exception& e) {
      t.error = e.what();
    }
    t.runtime_s = elapsed() - t0;
    // Strict comparison keeps the earlier trial on ties.
    if (t.val_loss && (!best || *t.val_loss < *result.trials[*best].val_loss)) best = result.trials.size();
    result.trials.push_back(std::move(t));
    if (options.on_trial) options.on_trial(result.trials.back());
  }
  if (!best) {
    std::string why = "every hyper-parameter trial failed:";
    for (const auto& t : result.trials) why += "\n  trial " + std::to_string(t.trial) + ": " + t.error;
    throw NumericalError(why);
  }
  result.best = *best;
  return result;
}

}  // namespace busuq::hpo
