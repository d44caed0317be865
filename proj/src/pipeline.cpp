#include "busuq/pipeline.hpp"

#include <memory>
#include <numeric>

namespace busuq::pipeline {

std::optional<double> route_truth(const ingest::PreparedData& data, Index start_step, const std::vector<int>& links) {
  double clock = 0.0;
  for (int l : links) {
    const Index step = start_step + static_cast<Index>(std::floor(clock / static_cast<double>(data.grid.frequency)));
    if (step >= data.grid.steps()) return std::nullopt;
    const double v = data.observed_seconds(step, l);
    if (std::isnan(v)) return std::nullopt;
    clock += v;
  }
  return clock;
}

metrics::EvalReport evaluate_split(const std::string& model, const ingest::PreparedData& data,
                                   const ingest::LinkSeriesTensor& split, const Forecaster& forecaster,
                                   const EvalOptions& options) {
  require(split.grid.n_links == data.grid.n_links, "evaluate: split and data disagree on the link count");
  require(options.samples >= 20, "evaluate: at least 20 samples per forecast are needed");
  std::vector<int> route = options.route;
  if (route.empty()) {
    route.resize(static_cast<std::size_t>(data.grid.n_links));
    std::iota(route.begin(), route.end(), 0);
  }
  const int K = options.max_horizon > 0 ? std::min(options.max_horizon, split.grid.horizon_k) : split.grid.horizon_k;
  std::vector<std::vector<metrics::RouteForecast>> forecasts(static_cast<std::size_t>(K));
  std::vector<metrics::LinkErrors> link_errors(static_cast<std::size_t>(K));
  for (Index i = 0; i < split.samples(); ++i) {
    const SampleForecast f = forecaster(i);
    Rng rng = derived_rng(options.seed, static_cast<std::uint64_t>(i));
    for (int h = 1; h <= K; ++h) {
      multilink::RoutePlan plan;
      plan.links = route;
      plan.start_horizon = h;
      plan.frequency = data.grid.frequency;
      multilink::RouteSampleSet set;
      if (f.gaussians) {
        set = multilink::sample_route_time(*f.gaussians, plan, options.samples, rng, f.source);
      } else {
        require(!f.draws.empty(), "forecaster returned neither distributions nor draws");
        set = multilink::route_from_draws(f.draws, plan, f.source);
      }
      metrics::RouteForecast rf;
      rf.point = std::accumulate(set.samples.begin(), set.samples.end(), 0.0) / static_cast<double>(set.size());
      rf.samples = std::move(set.samples);
      rf.truth = route_truth(data, split.target_step(i, h - 1), route);
      forecasts[static_cast<std::size_t>(h - 1)].push_back(std::move(rf));

      auto& e = link_errors[static_cast<std::size_t>(h - 1)];
      for (int l : route) {
        const double y = data.observed_seconds(split.target_step(i, h - 1), l);
        e.truth.push_back(std::isnan(y) ? 0.0 : y);
        e.prediction.push_back(f.point(h - 1, l));
        e.mask.push_back(std::isnan(y) ? 0.0 : 1.0);
      }
    }
  }
  return metrics::build_report(model, forecasts, options.intervals, link_errors);
}

multilink::LinkDistributions dqr_distributions(const dqr::QuantilePrediction& prediction,
                                               const ingest::PreparedData& data,
                                               const ingest::LinkSeriesTensor& split, Index sample,
                                               Eigen::MatrixXd* point_seconds) {
  const int K = static_cast<int>(prediction.point.rows());
  const int L = static_cast<int>(prediction.point.cols());
  const std::size_t J = prediction.quantiles.size();
  multilink::LinkDistributions dists(K, L);
  if (point_seconds) point_seconds->resize(K, L);
  std::vector<double> q(J);
  for (int k = 0; k < K; ++k) {
    const Index step = split.target_step(sample, k);
    for (int l = 0; l < L; ++l) {
      const double mean = ingest::destandardize(prediction.point(k, l), l, step, data.table, data.grid);
      for (std::size_t j = 0; j < J; ++j)
        q[j] = ingest::destandardize(prediction.quantiles[j](k, l), l, step, data.table, data.grid);
      dists.set(k + 1, l, gaussian::fit_sigma(mean, q, prediction.levels.values));
      if (point_seconds) (*point_seconds)(k, l) = mean;
    }
  }
  return dists;
}

Forecaster dqr_forecaster(const dqr::DqrNetwork<float>& model, const ingest::PreparedData& data,
                          const ingest::LinkSeriesTensor& split) {
  auto predictions = std::make_shared<std::vector<dqr::QuantilePrediction>>(dqr::predict_all(model, split));
  return [predictions, &data, &split](Index i) {
    SampleForecast f;
    f.source = multilink::SourceModel::Dqr;
    f.gaussians = dqr_distributions((*predictions)[static_cast<std::size_t>(i)], data, split, i, &f.point);
    return f;
  };
}

namespace {
constexpr Index kBrnnBlock = 128;
}  // namespace

Forecaster brnn_forecaster(const brnn::BrnnNetwork<float>& model, const ingest::PreparedData& data,
                           const ingest::LinkSeriesTensor& split, const brnn::SampleOptions& options) {
  struct Cache {
    Index first = -1;
    std::vector<std::vector<Eigen::MatrixXd>> draws;
  };
  auto cache = std::make_shared<Cache>();
  return [cache, &model, &data, &split, options](Index i) {
    require(i >= 0 && i < split.samples(), "sample index " + std::to_string(i) + " out of range");
    if (cache->first < 0 || i < cache->first || i >= cache->first + static_cast<Index>(cache->draws.size())) {
      cache->first = (i / kBrnnBlock) * kBrnnBlock;
      std::vector<Index> ids(static_cast<std::size_t>(std::min(kBrnnBlock, split.samples() - cache->first)));
      std::iota(ids.begin(), ids.end(), cache->first);
      cache->draws = brnn::sample_predict(model, split, ids, options);
    }
    SampleForecast f;
    f.source = multilink::SourceModel::Brnn;
    f.draws = std::move(cache->draws[static_cast<std::size_t>(i - cache->first)]);
    const Index K = model.horizon(), L = model.links();
    f.point = Eigen::MatrixXd::Zero(K, L);
    for (auto& d : f.draws) {
      for (Index k = 0; k < K; ++k) {
        const Index step = split.target_step(i, static_cast<int>(k));
        for (Index l = 0; l < L; ++l) d(k, l) = ingest::destandardize(d(k, l), static_cast<int>(l), step, data.table, data.grid);
      }
      f.point += d;
    }
    f.point /= static_cast<double>(f.draws.size());
    return f;
  };
}

kalman::EmResult train_kalman(const ingest::PreparedData& data, int n_iter, double tol) {
  const Index T = data.bounds.train_end;
  require(T > 0, "train kalman: no training steps");
  return kalman::em_fit(data.standardized.values.topRows(T), data.standardized.mask.topRows(T),
                        kalman::KalmanParams::identity(data.grid.n_links), n_iter, tol);
}

Forecaster kalman_forecaster(const kalman::KalmanParams& params, const ingest::PreparedData& data,
                             const ingest::LinkSeriesTensor& split) {
  params.validate();
  require(params.dim() == data.grid.n_links, "kalman model has " + std::to_string(params.dim()) +
                                                 " links, the data has " + std::to_string(data.grid.n_links));
  const Index n = split.samples();
  require(n > 0, "kalman forecaster: empty split");
  // filtered[i] is the state after the last step of sample i's input window.
  auto filtered = std::make_shared<std::vector<kalman::GaussianState>>();
  filtered->reserve(static_cast<std::size_t>(n));
  const Index first = split.target_step(0, 0) - 1;
  const Index last = split.target_step(n - 1, 0) - 1;
  kalman::GaussianState pred{params.initial_mean, params.initial_cov};
  kalman::GaussianState state;
  for (Index t = 0; t <= last; ++t) {
    if (t > 0) pred = kalman::predict_step(state, params);
    state = kalman::update_step(pred, data.standardized.values.row(t).transpose(),
                                data.standardized.mask.row(t).transpose(), params)
                .state;
    if (t >= first) filtered->push_back(state);
  }
  const int K = split.grid.horizon_k;
  return [filtered, params, &data, &split, K](Index i) {
    require(i >= 0 && i < split.samples(), "sample index " + std::to_string(i) + " out of range");
    const auto ahead = kalman::kf_predict_k((*filtered)[static_cast<std::size_t>(i)], params, K);
    SampleForecast f;
    f.source = multilink::SourceModel::Kalman;
    const int L = data.grid.n_links;
    multilink::LinkDistributions dists(K, L);
    f.point.resize(K, L);
    for (int k = 0; k < K; ++k) {
      const Index step = split.target_step(i, k);
      const auto& m = ahead.mean[static_cast<std::size_t>(k)];
      const auto& c = ahead.cov[static_cast<std::size_t>(k)];
      for (int l = 0; l < L; ++l) {
        const double sd = std::sqrt(c(l, l) + params.R(l, l));
        gaussian::GaussianLinkFit fit;
        fit.mean = ingest::destandardize(m(l), l, step, data.table, data.grid);
        fit.sigma = std::max(gaussian::kSigmaFloor,
                             ingest::destandardize(m(l) + sd, l, step, data.table, data.grid) - fit.mean);
        f.point(k, l) = fit.mean;
        dists.set(k + 1, l, std::move(fit));
      }
    }
    f.gaussians = std::move(dists);
    return f;
  };
}

}  // namespace busuq::pipeline
