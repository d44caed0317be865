#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "busuq/brnn.hpp"
#include "busuq/dqr.hpp"
#include "busuq/ingest.hpp"
#include "busuq/kalman.hpp"
#include "busuq/metrics.hpp"
#include "busuq/multilink.hpp"

namespace busuq::pipeline {

using Eigen::Index;

// Observed route time starting at `start_step`, walking `links` in order and
// moving to the next grid step whenever the running time crosses a step
// boundary. Absent when a used cell is missing or falls off the grid.
std::optional<double> route_truth(const ingest::PreparedData& data, Index start_step, const std::vector<int>& links);

// What a model says about one test sample, in seconds.
struct SampleForecast {
  std::optional<multilink::LinkDistributions> gaussians;  // DQR, Kalman
  std::vector<Eigen::MatrixXd> draws;                     // BRNN, each K x L
  Eigen::MatrixXd point;                                  // K x L
  multilink::SourceModel source = multilink::SourceModel::Dqr;
};

using Forecaster = std::function<SampleForecast(Index sample)>;

struct EvalOptions {
  std::vector<int> route;  // empty: every link in order
  int samples = 500;
  std::uint64_t seed = 1;
  std::vector<double> intervals = metrics::kDefaultIntervals;
  int max_horizon = 0;  // 0: all K
};

metrics::EvalReport evaluate_split(const std::string& model, const ingest::PreparedData& data,
                                   const ingest::LinkSeriesTensor& split, const Forecaster& forecaster,
                                   const EvalOptions& options);

// DQR prediction of one sample turned into per-link Gaussians in seconds.
multilink::LinkDistributions dqr_distributions(const dqr::QuantilePrediction& prediction,
                                               const ingest::PreparedData& data,
                                               const ingest::LinkSeriesTensor& split, Index sample,
                                               Eigen::MatrixXd* point_seconds = nullptr);

Forecaster dqr_forecaster(const dqr::DqrNetwork<float>& model, const ingest::PreparedData& data,
                          const ingest::LinkSeriesTensor& split);

// Monte Carlo draws in seconds; `point` is their mean. Draws are computed for
// blocks of consecutive samples and cached, so call in increasing order.
Forecaster brnn_forecaster(const brnn::BrnnNetwork<float>& model, const ingest::PreparedData& data,
                           const ingest::LinkSeriesTensor& split, const brnn::SampleOptions& options);

// EM on the standardized training rows; imputed cells count as missing.
kalman::EmResult train_kalman(const ingest::PreparedData& data, int n_iter = 50, double tol = 1e-3);

// Filters the standardized grid up to each sample's decision time and
// propagates K steps ahead. Per-link observation variances become Gaussians
// in seconds.
Forecaster kalman_forecaster(const kalman::KalmanParams& params, const ingest::PreparedData& data,
                             const ingest::LinkSeriesTensor& split);

}  // namespace busuq::pipeline
