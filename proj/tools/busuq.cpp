// busuq: command-line workbench for preparing link travel-time data,
// training the forecasting models, aggregating route times and running the
// evaluation and transfer-synchronization experiments.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "busuq/array_io.hpp"
#include "busuq/brnn.hpp"
#include "busuq/dqr.hpp"
#include "busuq/gaussian_fit.hpp"
#include "busuq/hpo.hpp"
#include "busuq/ingest.hpp"
#include "busuq/kalman.hpp"
#include "busuq/metrics.hpp"
#include "busuq/multilink.hpp"
#include "busuq/pipeline.hpp"
#include "busuq/synth.hpp"
#include "busuq/transfer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace busuq;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;

struct Context {
  json config = json::object();
  fs::path artifacts;
  std::optional<std::uint64_t> seed;
  std::optional<int> samples;
  bool force = false;
  std::string out;

  json section(const std::string& name) const {
    return config.contains(name) ? config.at(name) : json::object();
  }
  std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
  int sample_count() const {
    const int n = samples.value_or(config.value("samples", 500));
    require(n >= 1, "--samples must be at least 1");
    return n;
  }
};

// ---- artifact layout --------------------------------------------------------

std::string digest_path(const fs::path& p) {
  require(fs::exists(p), "no such file or directory: " + p.string());
  if (fs::is_directory(p)) {
    for (const char* marker : {"model.json", "meta.json", "run.json"}) {
      if (fs::exists(p / marker)) return io::hex_digest(io::fnv1a(io::read_json(p / marker).dump()));
    }
    return io::hex_digest(io::fnv1a(fs::absolute(p).lexically_normal().string()));
  }
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return io::hex_digest(io::fnv1a(buf.str()));
}

// Output directory named by a hash of everything that determines the result.
struct RunDir {
  fs::path path;
  json key;
  bool up_to_date = false;
};

RunDir run_dir(const Context& ctx, const std::string& command, json key) {
  key["command"] = command;
  RunDir r;
  r.key = key;
  r.path = ctx.out.empty() ? ctx.artifacts / (command + "-" + io::hex_digest(io::fnv1a(key.dump())).substr(0, 12))
                           : fs::path(ctx.out);
  if (!ctx.force && fs::exists(r.path / "run.json")) {
    const auto previous = io::read_json(r.path / "run.json");
    r.up_to_date = previous.value("key", json()) == key;
  }
  if (!r.up_to_date) fs::create_directories(r.path);
  return r;
}

void finish(const RunDir& r, json info = json::object()) {
  info["key"] = r.key;
  io::write_json(r.path / "run.json", info);
  std::cout << r.path.string() << "\n";
}

bool report_up_to_date(const RunDir& r) {
  if (!r.up_to_date) return false;
  std::cerr << "up to date (use --force to rerun)\n";
  std::cout << r.path.string() << "\n";
  return true;
}

std::string checkpoint_kind(const fs::path& dir) {
  const auto manifest = io::read_json(dir / "model.json");
  require(manifest.contains("kind"), dir.string() + ": not a model checkpoint");
  return manifest.at("kind").get<std::string>();
}

// ---- models behind a common forecaster --------------------------------------

struct LoadedModel {
  std::string kind;
  std::unique_ptr<dqr::DqrNetwork<float>> dqr;
  std::unique_ptr<brnn::BrnnNetwork<float>> brnn;
  std::optional<kalman::KalmanParams> kalman;

  Eigen::Index links() const {
    if (dqr) return dqr->links();
    if (brnn) return brnn->links();
    return kalman->dim();
  }
};

LoadedModel load_model(const fs::path& dir) {
  LoadedModel m;
  m.kind = checkpoint_kind(dir);
  if (m.kind == "dqr") m.dqr = dqr::load_dqr(dir);
  else if (m.kind == "brnn") m.brnn = brnn::load_brnn(dir);
  else if (m.kind == "kalman") m.kalman = kalman::load_kalman(dir);
  else throw InputError(dir.string() + ": unknown model kind '" + m.kind + "'");
  return m;
}

void check_compatible(const LoadedModel& m, const ingest::PreparedData& data, const fs::path& where) {
  require(m.links() == data.grid.n_links, where.string() + ": model has " + std::to_string(m.links()) +
                                              " links, the prepared data has " + std::to_string(data.grid.n_links));
  if (m.dqr) {
    require(m.dqr->window() == data.grid.window_u && m.dqr->horizon() == data.grid.horizon_k,
            where.string() + ": model window/horizon differ from the prepared data");
  }
  if (m.brnn) {
    require(m.brnn->window() == data.grid.window_u && m.brnn->horizon() == data.grid.horizon_k,
            where.string() + ": model window/horizon differ from the prepared data");
  }
}

pipeline::Forecaster make_forecaster(const LoadedModel& m, const ingest::PreparedData& data,
                                     const ingest::LinkSeriesTensor& split, int draws, std::uint64_t seed) {
  if (m.dqr) return pipeline::dqr_forecaster(*m.dqr, data, split);
  if (m.brnn) {
    brnn::SampleOptions so;
    so.draws = draws;
    so.seed = seed;
    return pipeline::brnn_forecaster(*m.brnn, data, split, so);
  }
  return pipeline::kalman_forecaster(*m.kalman, data, split);
}

std::vector<int> route_links(const json& ids, const ingest::PreparedData& data) {
  std::vector<int> links;
  if (ids.is_null()) return links;
  for (const auto& id : ids) links.push_back(data.links.at(id.get<std::string>()));
  return links;
}

std::vector<int> parse_route(const std::string& text, const ingest::PreparedData& data) {
  std::vector<int> links;
  if (text.empty()) {
    for (int l = 0; l < data.grid.n_links; ++l) links.push_back(l);
    return links;
  }
  std::stringstream ss(text);
  std::string id;
  while (std::getline(ss, id, ',')) links.push_back(data.links.at(id));
  return links;
}

multilink::RouteSampleSet route_samples(const pipeline::SampleForecast& fc, const multilink::RoutePlan& plan,
                                        int n, Rng& rng) {
  if (fc.gaussians) return multilink::sample_route_time(*fc.gaussians, plan, n, rng, fc.source);
  return multilink::route_from_draws(fc.draws, plan, fc.source);
}

Eigen::Index sample_at(const ingest::LinkSeriesTensor& split, ingest::Seconds t) {
  const auto& g = split.grid;
  const Eigen::Index step = static_cast<Eigen::Index>(std::floor(static_cast<double>(t - g.period_start) /
                                                                 static_cast<double>(g.frequency)));
  return step - (split.target_step(0, 0) - 1);
}

// ---- commands -----------------------------------------------------------------

struct PrepareArgs {
  std::string csv;
  std::optional<long long> frequency;
  std::optional<int> window, horizon, guard;
  std::string period_start, weeks;
};

int cmd_prepare(const Context& ctx, const PrepareArgs& a) {
  const json cfg = ctx.section("grid");
  ingest::GridConfig grid;
  grid.frequency = a.frequency.value_or(cfg.value("frequency_s", static_cast<long long>(grid.frequency)));
  grid.window_u = a.window.value_or(cfg.value("window_u", grid.window_u));
  grid.horizon_k = a.horizon.value_or(cfg.value("horizon_k", grid.horizon_k));
  std::string start = a.period_start.empty() ? cfg.value("period_start", std::string()) : a.period_start;

  ingest::SplitWeeks weeks;
  std::vector<int> w = ctx.config.value("split_weeks", std::vector<int>{weeks.train, weeks.validation, weeks.test});
  if (!a.weeks.empty()) {
    w.clear();
    std::stringstream ss(a.weeks);
    std::string part;
    while (std::getline(ss, part, ',')) w.push_back(std::stoi(part));
  }
  require(w.size() == 3, "split weeks must be three numbers: train,validation,test");
  weeks = {w[0], w[1], w[2]};
  ingest::FoldOptions fold;
  fold.trailing_guard_steps = a.guard.value_or(ctx.config.value("trailing_guard_steps", 0));
  ingest::StandardizeOptions so;
  so.variance_pooling = ctx.config.value("variance_pooling", so.variance_pooling);

  json key{{"input", digest_path(a.csv)}, {"frequency", grid.frequency}, {"window_u", grid.window_u},
           {"horizon_k", grid.horizon_k}, {"period_start", start}, {"weeks", w},
           {"guard", fold.trailing_guard_steps}, {"variance_pooling", so.variance_pooling}};
  auto run = run_dir(ctx, "prepare", key);
  if (report_up_to_date(run)) return 0;

  const auto observations = ingest::read_observations_csv(fs::path(a.csv));
  require(!observations.empty(), a.csv + ": no observations");
  if (start.empty()) {
    ingest::Seconds first = observations.front().observed_at;
    for (const auto& o : observations) first = std::min(first, o.observed_at);
    grid.period_start = first - ((first % 86400) + 86400) % 86400;  // midnight UTC of the first day
  } else {
    grid.period_start = ingest::parse_rfc3339(start);
  }
  grid.period_end = grid.period_start + static_cast<ingest::Seconds>(weeks.train + weeks.validation + weeks.test) *
                                            ingest::kSecondsPerWeek;
  const auto data = ingest::prepare(observations, grid, weeks, fold, so);
  ingest::save_prepared(data, run.path);
  std::cerr << ingest::describe(data);
  finish(run, {{"observations", data.observation_count}, {"links", data.grid.n_links}});
  return 0;
}

int cmd_synth(const Context& ctx) {
  auto cfg = synth::SynthConfig::from_json(ctx.section("synth"));
  cfg.seed = ctx.seed_or(cfg.seed);
  auto run = run_dir(ctx, "synth", cfg.to_json());
  if (report_up_to_date(run)) return 0;
  const auto data = synth::generate(cfg);
  synth::write_dataset(data, run.path);
  std::cerr << data.observations.size() << " observations over " << cfg.n_links << " links, " << cfg.weeks
            << " weeks\n";
  finish(run, {{"observations", data.observations.size()}, {"period_start", ingest::format_rfc3339(data.grid.period_start)}});
  return 0;
}

int cmd_train(const Context& ctx, const std::string& model, const std::string& tensors) {
  json key{{"model", model}, {"tensors", digest_path(tensors)}};
  dqr::DqrConfig dcfg;
  brnn::BrnnConfig bcfg;
  json kcfg = ctx.section("kalman");
  if (model == "dqr") {
    dcfg = dqr::DqrConfig::from_json(ctx.section("dqr"));
    dcfg.seed = ctx.seed_or(dcfg.seed);
    key["config"] = dcfg.to_json();
  } else if (model == "brnn") {
    bcfg = brnn::BrnnConfig::from_json(ctx.section("brnn"));
    bcfg.seed = ctx.seed_or(bcfg.seed);
    key["config"] = bcfg.to_json();
  } else if (model == "kalman") {
    key["config"] = {{"n_iter", kcfg.value("n_iter", 50)}, {"tol", kcfg.value("tol", 1e-3)}};
  } else {
    throw InputError("unknown model '" + model + "' (expected dqr, brnn or kalman)");
  }
  auto run = run_dir(ctx, "train", key);
  if (report_up_to_date(run)) return 0;

  const auto data = ingest::load_prepared(tensors);
  const auto t0 = std::chrono::steady_clock::now();
  bool diverged = false;
  json info{{"model", model}};
  if (model == "dqr") {
    auto trained = dqr::train_dqr(data.splits.train, data.splits.validation, dcfg, [](const dqr::EpochRecord& r) {
      std::fprintf(stderr, "epoch %3d  train %.5f  val %.5f\n", r.epoch, r.train_loss, r.val_loss);
    });
    dqr::save_dqr(*trained.model, run.path);
    trained.log.write_csv(run.path / "training_log.csv");
    diverged = trained.log.diverged;
    info["best_epoch"] = trained.log.best_epoch;
    info["best_val_loss"] = trained.log.best_val_loss;
  } else if (model == "brnn") {
    auto trained = brnn::train_brnn(data.splits.train, data.splits.validation, bcfg, [](const brnn::EpochRecord& r) {
      std::fprintf(stderr, "epoch %3d  -elbo %.5f  kl %.1f  val loglik %.5f\n", r.epoch, r.neg_elbo, r.kl,
                   r.val_log_lik);
    });
    brnn::save_brnn(*trained.model, run.path);
    trained.log.write_csv(run.path / "training_log.csv");
    diverged = trained.log.diverged;
    info["best_epoch"] = trained.log.best_epoch;
    info["best_val_log_lik"] = trained.log.best_val_log_lik;
  } else {
    const auto em = pipeline::train_kalman(data, key["config"]["n_iter"].get<int>(), key["config"]["tol"].get<double>());
    kalman::save_kalman(em.params, em.log_likelihood, run.path);
    std::ofstream log(run.path / "training_log.csv");
    log << "iteration,log_likelihood\n";
    for (std::size_t i = 0; i < em.log_likelihood.size(); ++i) log << i << ',' << em.log_likelihood[i] << '\n';
    info["iterations"] = em.iterations;
    info["converged"] = em.converged;
    if (!em.converged) std::cerr << "EM stopped at the iteration cap before reaching the tolerance\n";
  }
  info["train_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (diverged) {
    std::cerr << "training diverged; see training_log.csv\n";
    std::cout << run.path.string() << "\n";
    return kExitNumerical;
  }
  finish(run, info);
  return 0;
}

struct SampleArgs {
  std::string checkpoint, tensors, split = "test", route;
  int sample = 0;
  int start_horizon = 1;
};

json forecast_json(const pipeline::SampleForecast& fc, const ingest::PreparedData& data) {
  json links = json::array();
  for (Eigen::Index l = 0; l < fc.point.cols(); ++l) {
    json horizons = json::array();
    for (Eigen::Index h = 0; h < fc.point.rows(); ++h) {
      json cell{{"horizon", h + 1}, {"point_s", fc.point(h, l)}};
      if (fc.gaussians) {
        if (const auto& g = fc.gaussians->get(static_cast<int>(h) + 1, static_cast<int>(l))) {
          cell["mean_s"] = g->mean;
          cell["sigma_s"] = g->sigma;
        }
      } else if (!fc.draws.empty()) {
        std::vector<double> v;
        for (const auto& d : fc.draws) v.push_back(d(h, l));
        const auto [lo, hi] = multilink::empirical_interval(v, 0.9);
        cell["p05_s"] = lo;
        cell["p95_s"] = hi;
      }
      horizons.push_back(cell);
    }
    links.push_back({{"link", data.links.ids()[static_cast<std::size_t>(l)]}, {"horizons", horizons}});
  }
  return {{"source", multilink::to_string(fc.source)}, {"links", links}};
}

int cmd_predict(const Context& ctx, const SampleArgs& a) {
  const auto data = ingest::load_prepared(a.tensors);
  const auto model = load_model(a.checkpoint);
  check_compatible(model, data, a.checkpoint);
  const auto& split = data.split(a.split);
  require(a.sample >= 0 && a.sample < split.samples(), "sample index out of range for split '" + a.split + "'");
  const auto fc = make_forecaster(model, data, split, ctx.sample_count(), ctx.seed_or(1))(a.sample);
  json out = forecast_json(fc, data);
  out["split"] = a.split;
  out["sample"] = a.sample;
  out["decision_time"] = ingest::format_rfc3339(split.grid.step_time(split.target_step(a.sample, 0) - 1));
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_fit_gaussians(const Context& ctx, const SampleArgs& a) {
  const auto data = ingest::load_prepared(a.tensors);
  const auto model = load_model(a.checkpoint);
  require(model.kind == "dqr", "fit-gaussians needs a DQR checkpoint");
  check_compatible(model, data, a.checkpoint);
  const auto& split = data.split(a.split);
  require(a.sample >= 0 && a.sample < split.samples(), "sample index out of range for split '" + a.split + "'");
  auto run = run_dir(ctx, "fit-gaussians", {{"checkpoint", digest_path(a.checkpoint)}, {"tensors", digest_path(a.tensors)},
                                            {"split", a.split}, {"sample", a.sample}});
  if (report_up_to_date(run)) return 0;
  const auto dists = *make_forecaster(model, data, split, 1, 1)(a.sample).gaussians;
  std::vector<gaussian::FitRow> rows;
  for (int h = 1; h <= dists.horizons(); ++h)
    for (int l = 0; l < dists.links(); ++l)
      if (const auto& g = dists.get(h, l)) rows.push_back({l, h, *g});
  gaussian::write_fits_csv(run.path / "fits.csv", rows);
  finish(run, {{"cells", rows.size()}});
  return 0;
}

int cmd_aggregate(const Context& ctx, const SampleArgs& a) {
  const auto data = ingest::load_prepared(a.tensors);
  const auto model = load_model(a.checkpoint);
  check_compatible(model, data, a.checkpoint);
  const auto& split = data.split(a.split);
  require(a.sample >= 0 && a.sample < split.samples(), "sample index out of range for split '" + a.split + "'");
  const int n = ctx.sample_count();
  const auto seed = ctx.seed_or(1);
  multilink::RoutePlan plan;
  plan.links = parse_route(a.route, data);
  plan.start_horizon = a.start_horizon;
  plan.frequency = data.grid.frequency;
  plan.validate(data.grid.n_links, data.grid.horizon_k);

  auto run = run_dir(ctx, "aggregate", {{"checkpoint", digest_path(a.checkpoint)}, {"tensors", digest_path(a.tensors)},
                                        {"split", a.split}, {"sample", a.sample}, {"route", plan.links},
                                        {"start_horizon", a.start_horizon}, {"samples", n}, {"seed", seed}});
  if (report_up_to_date(run)) return 0;
  const auto fc = make_forecaster(model, data, split, n, seed)(a.sample);
  Rng rng = derived_rng(seed, static_cast<std::uint64_t>(a.sample));
  const auto set = route_samples(fc, plan, n, rng);
  multilink::write_samples_csv(run.path / "samples.csv", set);
  json summary = set.summary();
  io::write_json(run.path / "summary.json", summary);
  std::cerr << summary.dump(2) << "\n";
  finish(run);
  return 0;
}

int cmd_evaluate(const Context& ctx, const std::vector<std::string>& checkpoints, const std::string& tensors,
                 const std::string& split_name, const std::string& route) {
  const json cfg = ctx.section("evaluate");
  pipeline::EvalOptions options;
  options.samples = ctx.sample_count();
  options.seed = ctx.seed_or(1);
  options.intervals = cfg.value("intervals", options.intervals);
  options.max_horizon = cfg.value("max_horizon", 0);
  const std::string split_used = split_name.empty() ? cfg.value("split", std::string("test")) : split_name;

  json key{{"tensors", digest_path(tensors)}, {"split", split_used}, {"samples", options.samples},
           {"seed", options.seed}, {"intervals", options.intervals}, {"max_horizon", options.max_horizon},
           {"route", route}};
  for (const auto& c : checkpoints) key["checkpoints"].push_back(digest_path(c));
  auto run = run_dir(ctx, "evaluate", key);
  if (report_up_to_date(run)) return 0;

  const auto data = ingest::load_prepared(tensors);
  const auto& split = data.split(split_used);
  options.route = route.empty() ? route_links(cfg.value("route", json()), data) : parse_route(route, data);
  std::string combined_csv;
  for (const auto& c : checkpoints) {
    const auto model = load_model(c);
    check_compatible(model, data, c);
    const auto report = pipeline::evaluate_split(model.kind, data, split,
                                                 make_forecaster(model, data, split, options.samples, options.seed),
                                                 options);
    report.write(run.path / model.kind);
    combined_csv += report.csv(combined_csv.empty());
    std::cout << report.text_table() << "\n";
  }
  std::ofstream(run.path / "report.csv") << combined_csv;
  finish(run);
  return 0;
}

// One line of the transfer experiment: a model, its prepared data and the
// links the vehicle still has to cover at decision time.
struct LineForecast {
  ingest::PreparedData data;
  LoadedModel model;
  const ingest::LinkSeriesTensor* split = nullptr;
  pipeline::Forecaster forecaster;
  multilink::RoutePlan plan;

  std::optional<std::vector<double>> arrivals(ingest::Seconds decision, int n, Rng& rng) const {
    const auto sample = sample_at(*split, decision);
    if (sample < 0 || sample >= split->samples()) return std::nullopt;
    const auto set = route_samples(forecaster(sample), plan, n, rng);
    std::vector<double> out(set.samples);
    for (auto& v : out) v += static_cast<double>(decision);
    return out;
  }
};

std::unique_ptr<LineForecast> load_line(const Context& ctx, const json& spec, const std::string& role) {
  require(spec.is_object(), "transfer." + role + " must name checkpoint, tensors and route");
  auto line = std::make_unique<LineForecast>();
  const fs::path tensors = spec.at("tensors").get<std::string>();
  const fs::path checkpoint = spec.at("checkpoint").get<std::string>();
  line->data = ingest::load_prepared(tensors);
  line->model = load_model(checkpoint);
  check_compatible(line->model, line->data, checkpoint);
  line->split = &line->data.split(spec.value("split", std::string("test")));
  line->forecaster = make_forecaster(line->model, line->data, *line->split, ctx.sample_count(), ctx.seed_or(1));
  line->plan.links = route_links(spec.at("route"), line->data);
  line->plan.frequency = line->data.grid.frequency;
  line->plan.validate(line->data.grid.n_links, line->data.grid.horizon_k);
  return line;
}

int cmd_simulate_transfer(const Context& ctx, const std::string& pairs_csv, bool fixture) {
  const json cfg = ctx.section("transfer");
  transfer::PolicyOptions options;
  options.exchange_time = cfg.value("exchange_time_s", options.exchange_time);
  options.origin_fraction = cfg.value("origin_fraction", options.origin_fraction);
  options.seed = ctx.seed_or(options.seed);

  json key{{"exchange_time", options.exchange_time}, {"origin_fraction", options.origin_fraction},
           {"seed", options.seed}, {"samples", ctx.sample_count()}};
  std::vector<transfer::JourneyPair> pairs;
  transfer::PairPredictor predictor;
  std::unique_ptr<LineForecast> feeder, receiver;
  if (fixture) {
    transfer::FixtureConfig fc;
    const json f = cfg.value("fixture", json::object());
    fc.pairs = f.value("pairs", fc.pairs);
    fc.forecast_sd = f.value("forecast_sd", fc.forecast_sd);
    fc.feeder_delay_mean = f.value("feeder_delay_mean", fc.feeder_delay_mean);
    fc.feeder_delay_sd = f.value("feeder_delay_sd", fc.feeder_delay_sd);
    fc.receiver_travel_sd = f.value("receiver_travel_sd", fc.receiver_travel_sd);
    fc.forecast_samples = ctx.sample_count();
    fc.seed = options.seed;
    key["fixture"] = {{"pairs", fc.pairs}, {"forecast_sd", fc.forecast_sd}, {"feeder_delay_mean", fc.feeder_delay_mean},
                      {"feeder_delay_sd", fc.feeder_delay_sd}, {"receiver_travel_sd", fc.receiver_travel_sd}};
    auto run = run_dir(ctx, "simulate-transfer", key);
    if (report_up_to_date(run)) return 0;
    auto fx = transfer::make_fixture(fc);
    const auto report = transfer::evaluate_policy(fx.pairs, fx.predictor, options);
    report.write_outcomes_csv(run.path / "outcomes.csv");
    io::write_json(run.path / "summary.json", report.summary());
    std::cerr << report.summary().dump(2) << "\n";
    finish(run);
    return 0;
  }

  require(!pairs_csv.empty(), "simulate-transfer needs a pairs CSV or --fixture");
  key["pairs"] = digest_path(pairs_csv);
  key["feeder"] = cfg.value("feeder", json());
  key["receiver"] = cfg.value("receiver", json());
  auto run = run_dir(ctx, "simulate-transfer", key);
  if (report_up_to_date(run)) return 0;

  feeder = load_line(ctx, cfg.value("feeder", json()), "feeder");
  receiver = load_line(ctx, cfg.value("receiver", json()), "receiver");
  pairs = transfer::read_pairs_csv(fs::path(pairs_csv));
  // Forecasters cache forward in time.
  std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    return a.receiver_origin_scheduled < b.receiver_origin_scheduled;
  });
  const int n = ctx.sample_count();
  predictor = [&](const transfer::JourneyPair& p, Rng& rng) -> std::optional<transfer::PairForecast> {
    const auto t0 = p.receiver_origin_scheduled;
    auto f = feeder->arrivals(t0, n, rng);
    auto r = receiver->arrivals(t0, n, rng);
    if (!f || !r) return std::nullopt;
    return transfer::PairForecast{std::move(*f), std::move(*r)};
  };
  const auto report = transfer::evaluate_policy(pairs, predictor, options);
  report.write_outcomes_csv(run.path / "outcomes.csv");
  io::write_json(run.path / "summary.json", report.summary());
  std::cerr << report.summary().dump(2) << "\n";
  finish(run);
  return 0;
}

int cmd_hpo(const Context& ctx, const std::string& model, const std::string& tensors, std::optional<int> trials,
            std::optional<double> budget) {
  const json cfg = ctx.section("hpo");
  hpo::SearchOptions options;
  options.trials = trials.value_or(cfg.value("trials", options.trials));
  options.budget_s = budget.value_or(cfg.value("budget_s", 0.0));
  options.seed = ctx.seed_or(1);
  hpo::SearchSpace space;
  json base;
  if (model == "dqr") {
    space = hpo::SearchSpace::dqr();
    base = dqr::DqrConfig::from_json(ctx.section("dqr")).to_json();
  } else if (model == "brnn") {
    space = hpo::SearchSpace::brnn();
    base = brnn::BrnnConfig::from_json(ctx.section("brnn")).to_json();
  } else {
    throw InputError("hpo supports dqr and brnn, not '" + model + "'");
  }
  auto run = run_dir(ctx, "hpo", {{"model", model}, {"tensors", digest_path(tensors)}, {"trials", options.trials},
                                  {"budget_s", options.budget_s}, {"seed", options.seed}, {"base", base}});
  if (report_up_to_date(run)) return 0;
  const auto data = ingest::load_prepared(tensors);

  hpo::TrainFn train = [&](const json& params, int) -> double {
    if (model == "dqr") {
      const auto c = hpo::apply_dqr(params, dqr::DqrConfig::from_json(base));
      return dqr::train_dqr(data.splits.train, data.splits.validation, c).log.best_val_loss;
    }
    const auto c = hpo::apply_brnn(params, brnn::BrnnConfig::from_json(base));
    return -brnn::train_brnn(data.splits.train, data.splits.validation, c).log.best_val_log_lik;
  };
  options.on_trial = [](const hpo::Trial& t) {
    std::cerr << "trial " << t.trial << " " << t.params.dump() << " -> "
              << (t.val_loss ? std::to_string(*t.val_loss) : "failed: " + t.error) << "\n";
  };
  const auto result = hpo::run_search(space, train, options);
  result.write_csv(run.path / "trials.csv");
  json best = base;
  if (model == "dqr") best = hpo::apply_dqr(result.best_trial().params, dqr::DqrConfig::from_json(base)).to_json();
  else best = hpo::apply_brnn(result.best_trial().params, brnn::BrnnConfig::from_json(base)).to_json();
  io::write_json(run.path / "best_config.json", {{model, best}});
  finish(run, {{"best_trial", result.best_trial().trial}, {"best_val_loss", *result.best_trial().val_loss}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Link travel-time uncertainty workbench"};
  app.require_subcommand(1);
  app.fallthrough();

  Context ctx;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> samples;
  std::string artifacts;
  app.add_option("--config", config_path, "JSON configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "random seed (overrides the configuration)");
  app.add_option("--samples", samples, "Monte Carlo samples per forecast (default 500)");
  app.add_option("--artifacts", artifacts, "artifacts root (default $BUSUQ_ARTIFACTS or ./artifacts)");
  app.add_option("--out", ctx.out, "write to this directory instead of a content-addressed one");
  app.add_flag("--force", ctx.force, "rerun even if the output is up to date");

  PrepareArgs prep;
  auto* prepare = app.add_subcommand("prepare", "snap observations to the grid, standardize and fold into windows");
  prepare->add_option("csv", prep.csv, "observations CSV (link_id,observed_at,travel_time_s)")->required();
  prepare->add_option("--frequency", prep.frequency, "grid step in seconds");
  prepare->add_option("--window", prep.window, "input window length U");
  prepare->add_option("--horizon", prep.horizon, "prediction horizon K");
  prepare->add_option("--period-start", prep.period_start, "grid origin (RFC 3339); default midnight of the first day");
  prepare->add_option("--weeks", prep.weeks, "train,validation,test weeks");
  prepare->add_option("--guard", prep.guard, "steps withheld at the end of each split");

  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic link travel-time dataset");

  std::string model, tensors;
  auto* train = app.add_subcommand("train", "train a model on prepared tensors");
  train->add_option("model", model, "dqr, brnn or kalman")->required();
  train->add_option("tensors", tensors, "prepared tensor directory")->required()->check(CLI::ExistingDirectory);

  SampleArgs sa;
  auto add_sample_args = [&](CLI::App* cmd) {
    cmd->add_option("checkpoint", sa.checkpoint, "checkpoint directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("tensors", sa.tensors, "prepared tensor directory")->required()->check(CLI::ExistingDirectory);
    cmd->add_option("--split", sa.split, "train, validation or test");
    cmd->add_option("--sample", sa.sample, "window index within the split");
  };
  auto* predict = app.add_subcommand("predict", "per-link forecast for one window, as JSON");
  add_sample_args(predict);
  auto* fit = app.add_subcommand("fit-gaussians", "fit per-link Gaussians to DQR quantiles for one window");
  add_sample_args(fit);
  auto* aggregate = app.add_subcommand("aggregate", "sample the route travel time for one window");
  add_sample_args(aggregate);
  aggregate->add_option("--route", sa.route, "comma-separated link ids (default: all links in order)");
  aggregate->add_option("--start-horizon", sa.start_horizon, "model horizon of the first link");

  std::vector<std::string> checkpoints;
  std::string eval_split, eval_route;
  auto* evaluate = app.add_subcommand("evaluate", "ICP/MIL/RMSE report for one or more checkpoints");
  evaluate->add_option("tensors", tensors, "prepared tensor directory")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("checkpoints", checkpoints, "checkpoint directories")->required()->check(CLI::ExistingDirectory);
  evaluate->add_option("--split", eval_split, "split to evaluate (default test)");
  evaluate->add_option("--route", eval_route, "comma-separated link ids (default: all links in order)");

  std::string pairs_csv;
  bool fixture = false;
  auto* simulate = app.add_subcommand("simulate-transfer", "evaluate the holding policy on feeder/receiver pairs");
  simulate->add_option("pairs", pairs_csv, "pairs CSV")->check(CLI::ExistingFile);
  simulate->add_flag("--fixture", fixture, "use the synthetic connection fixture instead of models");

  std::optional<int> trials;
  std::optional<double> budget;
  auto* search = app.add_subcommand("hpo", "random hyper-parameter search");
  search->add_option("model", model, "dqr or brnn")->required();
  search->add_option("tensors", tensors, "prepared tensor directory")->required()->check(CLI::ExistingDirectory);
  search->add_option("--trials", trials, "number of trials (default 25)");
  search->add_option("--budget", budget, "wall-clock budget in seconds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitInput;
  }

  try {
    if (!config_path.empty()) ctx.config = io::read_json(config_path);
    ctx.seed = seed;
    ctx.samples = samples;
    if (!artifacts.empty()) ctx.artifacts = artifacts;
    else if (const char* env = std::getenv("BUSUQ_ARTIFACTS")) ctx.artifacts = env;
    else ctx.artifacts = "artifacts";

    if (*prepare) return cmd_prepare(ctx, prep);
    if (*synth_cmd) return cmd_synth(ctx);
    if (*train) return cmd_train(ctx, model, tensors);
    if (*predict) return cmd_predict(ctx, sa);
    if (*fit) return cmd_fit_gaussians(ctx, sa);
    if (*aggregate) return cmd_aggregate(ctx, sa);
    if (*evaluate) return cmd_evaluate(ctx, checkpoints, tensors, eval_split, eval_route);
    if (*simulate) return cmd_simulate_transfer(ctx, pairs_csv, fixture);
    if (*search) return cmd_hpo(ctx, model, tensors, trials, budget);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const json::exception& e) {
    std::cerr << "error: bad JSON: " << e.what() << "\n";
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
