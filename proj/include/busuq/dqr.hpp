#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "busuq/ingest.hpp"
#include "busuq/nn/adam.hpp"
#include "busuq/nn/checkpoint.hpp"
#include "busuq/nn/layers.hpp"
#include "busuq/nn/losses.hpp"

namespace busuq::dqr {

using nn::Index;

struct QuantileLevels {
  std::vector<double> values{0.025, 0.05, 0.10, 0.20, 0.40, 0.60, 0.80, 0.90, 0.95, 0.975};

  void validate() const;
  std::size_t size() const { return values.size(); }
  // Index of the level equal to p (within 1e-9), if present.
  std::optional<std::size_t> find(double p) const;
  // Levels (1-alpha)/2 and (1+alpha)/2 for a central interval of mass alpha.
  std::pair<std::size_t, std::size_t> interval(double alpha) const;
};

struct DqrConfig {
  int lstm_state_size = 32;
  int conv_kernel_size = 3;
  double dropout_probability = 0.1;
  QuantileLevels levels;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int max_epochs = 200;
  int patience = 10;
  std::uint64_t seed = 1;

  void validate() const;
  // Same-padding needs an odd width; even values use the next smaller odd one.
  int effective_kernel_size() const { return conv_kernel_size % 2 == 1 ? conv_kernel_size : conv_kernel_size - 1; }
  nlohmann::json to_json() const;
  static DqrConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Losses on plain arrays. All sums run over cells with mask == 1.

double l2_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& y_hat, const Eigen::MatrixXd& mask);
double pinball_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& q_hat, double p, const Eigen::MatrixXd& mask);
double joint_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& y_hat, const std::vector<Eigen::MatrixXd>& q_hat,
                  const QuantileLevels& levels, const Eigen::MatrixXd& mask);

// Tape form of the joint loss for a head output laid out as
// [mean | q_1 ... q_J] (R x (1+J)) against an R x 1 target.
template <typename Scalar>
nn::Var<Scalar> joint_loss_node(nn::Var<Scalar> head, const nn::Matrix<Scalar>& target, const nn::Matrix<Scalar>& mask,
                                const std::vector<double>& levels) {
  const Index J = static_cast<Index>(levels.size());
  nn::detail::check(head.cols() == 1 + J, "joint_loss",
                    "head has " + std::to_string(head.cols()) + " columns, expected " + std::to_string(1 + J));
  nn::detail::check(target.rows() == head.rows() && target.cols() == 1 && mask.rows() == head.rows() &&
                        mask.cols() == 1,
                    "joint_loss", "target/mask must be R x 1 matching the head");
  const auto& out = head.value();
  nn::Matrix<Scalar> slope = nn::Matrix<Scalar>::Zero(out.rows(), out.cols());
  double total = 0.0;
  for (Index r = 0; r < out.rows(); ++r) {
    const Scalar m = mask(r, 0);
    if (m == Scalar(0)) continue;
    const Scalar y = target(r, 0);
    const Scalar e = y - out(r, 0);
    total += static_cast<double>(m) * static_cast<double>(e) * static_cast<double>(e);
    slope(r, 0) = -Scalar(2) * m * e;
    for (Index j = 0; j < J; ++j) {
      const Scalar p = static_cast<Scalar>(levels[static_cast<std::size_t>(j)]);
      const Scalar res = y - out(r, 1 + j);
      total += static_cast<double>(m) * std::max(static_cast<double>(p * res), static_cast<double>((p - 1) * res));
      slope(r, 1 + j) = m * (res >= 0 ? -p : Scalar(1) - p);
    }
  }
  nn::Matrix<Scalar> value(1, 1);
  value(0, 0) = static_cast<Scalar>(total);
  const int ih = head.id;
  return head.tape->push(std::move(value), [ih, slope = std::move(slope)](nn::Tape<Scalar>& t, int self) {
    t.grad(ih) += t.grad(self)(0, 0) * slope;
  });
}

// ---------------------------------------------------------------------------

struct QuantilePrediction {
  Eigen::MatrixXd point;                   // K x L, standardized
  std::vector<Eigen::MatrixXd> quantiles;  // J entries of K x L, standardized
  QuantileLevels levels;
};

// Sorts each cell's quantile vector ascending.
void repair_crossings(QuantilePrediction& prediction);

struct Batch {
  // Per time step u: (B*L) x 1 inputs; per horizon k: (B*L) x 1 targets/masks.
  std::vector<Eigen::MatrixXd> inputs, targets, masks;
  Index batch = 0;
  Index links = 0;
};

Batch make_batch(const ingest::LinkSeriesTensor& data, std::span<const Index> samples, bool with_targets = true);

// ConvLSTM encoder-decoder: single-layer encoder and decoder whose input and
// state transforms are 1-D convolutions over links, followed by one affine
// head [mean | quantiles] shared across links.
template <typename Scalar>
class DqrNetwork {
 public:
  using Mat = nn::Matrix<Scalar>;

  DqrNetwork(const DqrConfig& config, Index n_links, Index window_u, Index horizon_k)
      : config_(config), links_(n_links), window_(window_u), horizon_(horizon_k) {
    config_.validate();
    Rng rng = derived_rng(config_.seed, 0);
    const Index H = config_.lstm_state_size;
    const Index k = config_.effective_kernel_size();
    encoder_ = nn::LstmCellParams<Scalar>::create(store_, "encoder", {1, H, k}, rng);
    decoder_ = nn::LstmCellParams<Scalar>::create(store_, "decoder", {H, H, k}, rng);
    head_ = nn::AffineParams<Scalar>::create(store_, "head", H, 1 + static_cast<Index>(config_.levels.size()), rng);
    // Start quantile heads at their standard-normal positions.
    for (std::size_t j = 0; j < config_.levels.size(); ++j) {
      head_.bias->value(0, 1 + static_cast<Index>(j)) = static_cast<Scalar>(normal_quantile(config_.levels.values[j]));
    }
  }

  const DqrConfig& config() const { return config_; }
  Index links() const { return links_; }
  Index window() const { return window_; }
  Index horizon() const { return horizon_; }
  nn::ParameterStore<Scalar>& parameters() { return store_; }
  const nn::ParameterStore<Scalar>& parameters() const { return store_; }
  nn::AffineParams<Scalar>& head() { return head_; }

  // Head outputs per horizon, each (B*L) x (1+J). `rng` is only used when
  // training with dropout.
  std::vector<nn::Var<Scalar>> forward(nn::Tape<Scalar>& tape, const Batch& batch, bool training, Rng* rng) const {
    nn::detail::check(static_cast<Index>(batch.inputs.size()) == window_, "dqr.encoder",
                      "expected " + std::to_string(window_) + " input steps, got " +
                          std::to_string(batch.inputs.size()));
    nn::detail::check(batch.links == links_, "dqr.encoder",
                      "expected " + std::to_string(links_) + " links, got " + std::to_string(batch.links));
    const Index R = batch.batch * links_;
    const Index H = config_.lstm_state_size;
    auto enc = encoder_.bind(tape, links_);
    auto dec = decoder_.bind(tape, links_);
    auto head_w = tape.parameter(*head_.weight);
    auto head_b = tape.parameter(*head_.bias);

    nn::LstmState<Scalar> state{tape.constant(Mat::Zero(R, H)), tape.constant(Mat::Zero(R, H))};
    for (const auto& x : batch.inputs) {
      nn::detail::check(x.rows() == R && x.cols() == 1, "dqr.encoder", "input step has the wrong shape");
      state = nn::lstm_step(tape.constant(x.template cast<Scalar>()), state, enc, "dqr.encoder");
    }
    const auto context = state.h;
    std::vector<nn::Var<Scalar>> outputs;
    for (Index k = 0; k < horizon_; ++k) {
      state = nn::lstm_step(context, state, dec, "dqr.decoder");
      auto h = state.h;
      if (training && config_.dropout_probability > 0.0) h = nn::dropout(h, config_.dropout_probability, *rng);
      outputs.push_back(nn::affine(h, head_w, head_b, "dqr.head"));
    }
    return outputs;
  }

  // Summed joint loss over horizons and the number of observed target cells.
  std::pair<nn::Var<Scalar>, double> loss(nn::Tape<Scalar>& tape, const Batch& batch, bool training,
                                          Rng* rng) const {
    const auto outputs = forward(tape, batch, training, rng);
    nn::Var<Scalar> total;
    double observed = 0.0;
    for (Index k = 0; k < horizon_; ++k) {
      const Mat target = batch.targets[static_cast<std::size_t>(k)].template cast<Scalar>();
      const Mat mask = batch.masks[static_cast<std::size_t>(k)].template cast<Scalar>();
      observed += batch.masks[static_cast<std::size_t>(k)].sum();
      auto term = joint_loss_node(outputs[static_cast<std::size_t>(k)], target, mask, config_.levels.values);
      total = k == 0 ? term : nn::add(total, term, "dqr.loss");
    }
    return {total, observed};
  }

  // Raw (unsorted) head outputs for a batch, per sample.
  std::vector<QuantilePrediction> predict_raw(const Batch& batch) const {
    nn::Tape<Scalar> tape;
    const auto outputs = forward(tape, batch, false, nullptr);
    const Index J = static_cast<Index>(config_.levels.size());
    std::vector<QuantilePrediction> out(static_cast<std::size_t>(batch.batch));
    for (Index b = 0; b < batch.batch; ++b) {
      auto& p = out[static_cast<std::size_t>(b)];
      p.levels = config_.levels;
      p.point.resize(horizon_, links_);
      p.quantiles.assign(static_cast<std::size_t>(J), Eigen::MatrixXd(horizon_, links_));
      for (Index k = 0; k < horizon_; ++k) {
        const auto& v = outputs[static_cast<std::size_t>(k)].value();
        for (Index l = 0; l < links_; ++l) {
          const Index r = b * links_ + l;
          p.point(k, l) = static_cast<double>(v(r, 0));
          for (Index j = 0; j < J; ++j) p.quantiles[static_cast<std::size_t>(j)](k, l) = static_cast<double>(v(r, 1 + j));
        }
      }
    }
    return out;
  }

  std::vector<QuantilePrediction> predict(const Batch& batch) const {
    auto out = predict_raw(batch);
    for (auto& p : out) repair_crossings(p);
    return out;
  }

 private:
  DqrConfig config_;
  Index links_, window_, horizon_;
  nn::ParameterStore<Scalar> store_;
  nn::LstmCellParams<Scalar> encoder_, decoder_;
  nn::AffineParams<Scalar> head_;
};

// One window (U x L, standardized) through a trained network.
QuantilePrediction predict_dqr(const DqrNetwork<float>& model, const Eigen::MatrixXd& window);

// Predictions for every sample of a split, batched.
std::vector<QuantilePrediction> predict_all(const DqrNetwork<float>& model, const ingest::LinkSeriesTensor& data,
                                            Index batch_size = 256);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_loss = std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::vector<std::string> incidents;

  void write_csv(const std::filesystem::path& path) const;
};

struct TrainedDqr {
  std::unique_ptr<DqrNetwork<float>> model;
  TrainingLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam on the joint loss per observed cell; early stopping on the validation
// joint loss; returns the best-validation parameters.
TrainedDqr train_dqr(const ingest::LinkSeriesTensor& train, const ingest::LinkSeriesTensor& validation,
                     const DqrConfig& config, const EpochCallback& on_epoch = {});

// Mean joint loss per observed target cell.
double evaluate_loss(const DqrNetwork<float>& model, const ingest::LinkSeriesTensor& data, Index batch_size = 256);

void save_dqr(const DqrNetwork<float>& model, const std::filesystem::path& dir);
std::unique_ptr<DqrNetwork<float>> load_dqr(const std::filesystem::path& dir);

}  // namespace busuq::dqr
