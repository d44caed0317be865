#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "busuq/ingest.hpp"
#include "busuq/nn/adam.hpp"
#include "busuq/nn/checkpoint.hpp"
#include "busuq/nn/layers.hpp"
#include "busuq/nn/losses.hpp"

namespace busuq::brnn {

using nn::Index;

struct MixturePriorConfig {
  double pi = 0.8;
  double sigma1 = 1.0;
  double sigma2 = 0.05;

  void validate() const;
  nn::MixturePrior prior() const { return {pi, sigma1, sigma2}; }
};

struct BrnnConfig {
  int lstm_state_size = 32;
  MixturePriorConfig prior;
  int batch_size = 64;  // N_B; the batch count B follows from the training size
  int mc_samples = 1;   // N_MC weight draws per minibatch step
  double learning_rate = 1e-3;
  int max_epochs = 200;
  int patience = 10;
  std::uint64_t seed = 1;
  double init_mu_std = 0.05;
  double init_rho = -5.0;
  int validation_draws = 10;

  void validate() const;
  nlohmann::json to_json() const;
  static BrnnConfig from_json(const nlohmann::json& j);
};

// Variational posterior of one weight tensor: w = mu + softplus(rho) * eps.
template <typename Scalar>
struct VariationalWeights {
  std::string name;
  nn::Parameter<Scalar>* mu = nullptr;
  nn::Parameter<Scalar>* rho = nullptr;

  nn::Matrix<Scalar> sigma() const {
    return rho->value.unaryExpr([](Scalar x) { return nn::detail::softplus(x); });
  }
};

// Concrete weight set drawn from the posterior, recorded on a tape.
template <typename Scalar>
struct SampledWeights {
  std::vector<nn::Var<Scalar>> w;
  nn::Var<Scalar> log_q;      // sum log q(w | mu, rho)
  nn::Var<Scalar> log_prior;  // sum log P(w)
};

// Minibatch in time-major form: U inputs of B x L, K targets/masks of B x L.
struct SequenceBatch {
  std::vector<Eigen::MatrixXd> inputs, targets, masks;
  Index batch = 0;
  Index links = 0;
};

SequenceBatch make_sequence_batch(const ingest::LinkSeriesTensor& data, std::span<const Index> samples,
                                  bool with_targets = true);

// Dense LSTM encoder-decoder over the full link vector with Gaussian weight
// posteriors on every tensor, including the global output log-variance.
template <typename Scalar>
class BrnnNetwork {
 public:
  using Mat = nn::Matrix<Scalar>;

  enum Group { kEncIn, kEncState, kEncBias, kDecIn, kDecState, kDecBias, kHeadW, kHeadB, kLogVar, kGroups };

  BrnnNetwork(const BrnnConfig& config, Index n_links, Index window_u, Index horizon_k)
      : config_(config), links_(n_links), window_(window_u), horizon_(horizon_k) {
    config_.validate();
    Rng rng = derived_rng(config_.seed, 0);
    const Index H = config_.lstm_state_size, G = 4 * H;
    add("encoder.input_weights", links_, G, rng);
    add("encoder.state_weights", H, G, rng);
    add("encoder.bias", 1, G, rng);
    add("decoder.input_weights", H, G, rng);
    add("decoder.state_weights", H, G, rng);
    add("decoder.bias", 1, G, rng);
    add("head.weight", H, links_, rng);
    add("head.bias", 1, links_, rng);
    add("log_variance", 1, 1, rng);
  }

  const BrnnConfig& config() const { return config_; }
  Index links() const { return links_; }
  Index window() const { return window_; }
  Index horizon() const { return horizon_; }
  nn::ParameterStore<Scalar>& parameters() { return store_; }
  const nn::ParameterStore<Scalar>& parameters() const { return store_; }
  std::vector<VariationalWeights<Scalar>>& groups() { return groups_; }
  const std::vector<VariationalWeights<Scalar>>& groups() const { return groups_; }

  std::size_t weight_count() const {
    std::size_t n = 0;
    for (const auto& g : groups_) n += static_cast<std::size_t>(g.mu->value.size());
    return n;
  }

  // Draws every weight once; with `with_densities` the log q and log prior
  // nodes are recorded for the KL term.
  SampledWeights<Scalar> sample(nn::Tape<Scalar>& tape, Rng& rng, bool with_densities = true) const {
    std::normal_distribution<double> n01(0.0, 1.0);
    SampledWeights<Scalar> s;
    const auto prior = config_.prior.prior();
    for (const auto& g : groups_) {
      Mat eps(g.mu->value.rows(), g.mu->value.cols());
      for (Index i = 0; i < eps.size(); ++i) eps.data()[i] = static_cast<Scalar>(n01(rng));
      auto mu = tape.parameter(*g.mu);
      auto rho = tape.parameter(*g.rho);
      auto w = nn::reparameterize(mu, rho, eps, g.name);
      s.w.push_back(w);
      if (with_densities) {
        auto lq = nn::log_variational_density(w, mu, rho, g.name);
        auto lp = nn::log_mixture_prior(w, prior);
        s.log_q = s.w.size() == 1 ? lq : nn::add(s.log_q, lq, "brnn.log_q");
        s.log_prior = s.w.size() == 1 ? lp : nn::add(s.log_prior, lp, "brnn.log_prior");
      }
    }
    return s;
  }

  // Network means for each horizon, B x L each.
  std::vector<nn::Var<Scalar>> forward(nn::Tape<Scalar>& tape, const SampledWeights<Scalar>& w,
                                       const std::vector<Eigen::MatrixXd>& inputs) const {
    nn::detail::check(static_cast<Index>(inputs.size()) == window_, "brnn.encoder",
                      "expected " + std::to_string(window_) + " input steps, got " + std::to_string(inputs.size()));
    const Index B = inputs.front().rows();
    const Index H = config_.lstm_state_size;
    const nn::LstmWeights<Scalar> enc{w.w[kEncIn], w.w[kEncState], w.w[kEncBias], H, 0, 1};
    const nn::LstmWeights<Scalar> dec{w.w[kDecIn], w.w[kDecState], w.w[kDecBias], H, 0, 1};
    nn::LstmState<Scalar> state{tape.constant(Mat::Zero(B, H)), tape.constant(Mat::Zero(B, H))};
    for (const auto& x : inputs) {
      nn::detail::check(x.rows() == B && x.cols() == links_, "brnn.encoder",
                        "input step must be " + nn::detail::dims(B, links_) + ", got " +
                            nn::detail::dims(x.rows(), x.cols()));
      state = nn::lstm_step(tape.constant(x.template cast<Scalar>()), state, enc, "brnn.encoder");
    }
    const auto context = state.h;
    std::vector<nn::Var<Scalar>> out;
    for (Index k = 0; k < horizon_; ++k) {
      state = nn::lstm_step(context, state, dec, "brnn.decoder");
      out.push_back(nn::affine(state.h, w.w[kHeadW], w.w[kHeadB], "brnn.head"));
    }
    return out;
  }

 private:
  void add(const std::string& name, Index rows, Index cols, Rng& rng) {
    std::normal_distribution<double> init(0.0, config_.init_mu_std);
    Mat mu(rows, cols);
    for (Index i = 0; i < mu.size(); ++i) mu.data()[i] = static_cast<Scalar>(init(rng));
    VariationalWeights<Scalar> g;
    g.name = name;
    g.mu = &store_.add(name + ".mu", std::move(mu));
    g.rho = &store_.add(name + ".rho", Mat::Constant(rows, cols, static_cast<Scalar>(config_.init_rho)));
    groups_.push_back(g);
  }

  BrnnConfig config_;
  Index links_, window_, horizon_;
  nn::ParameterStore<Scalar> store_;
  std::vector<VariationalWeights<Scalar>> groups_;
};

// Free-standing pieces of the objective, usable on any weight tensor.
double sample_weight(double mu, double rho, Rng& rng);
double log_mixture_prior(std::span<const double> weights, const MixturePriorConfig& prior);

// (1/N_MC) sum_s [ (1/B)(log q(w_s) - log P(w_s)) - log P(y | w_s) ].
template <typename Scalar>
struct ElboTerms {
  nn::Var<Scalar> loss;
  double kl = 0.0;
  double nll = 0.0;
  double observed = 0.0;
};

template <typename Scalar>
ElboTerms<Scalar> elbo_minibatch_loss(nn::Tape<Scalar>& tape, const BrnnNetwork<Scalar>& model,
                                       const SequenceBatch& batch, Index batch_count, int mc_samples, Rng& rng) {
  nn::detail::check(batch_count >= 1, "brnn.elbo", "batch count must be at least 1");
  nn::detail::check(mc_samples >= 1, "brnn.elbo", "N_MC must be at least 1");
  ElboTerms<Scalar> out;
  for (const auto& m : batch.masks) out.observed += m.sum();
  const Scalar kl_weight = static_cast<Scalar>(1.0 / static_cast<double>(batch_count));
  const Scalar mc_weight = static_cast<Scalar>(1.0 / mc_samples);
  for (int s = 0; s < mc_samples; ++s) {
    const auto w = model.sample(tape, rng, true);
    const auto means = model.forward(tape, w, batch.inputs);
    nn::Var<Scalar> nll;
    for (Index k = 0; k < model.horizon(); ++k) {
      const nn::Matrix<Scalar> target = batch.targets[static_cast<std::size_t>(k)].template cast<Scalar>();
      const nn::Matrix<Scalar> mask = batch.masks[static_cast<std::size_t>(k)].template cast<Scalar>();
      auto term = nn::masked_gaussian_nll(means[static_cast<std::size_t>(k)], target, mask,
                                          w.w[BrnnNetwork<Scalar>::kLogVar], "brnn.likelihood");
      nll = k == 0 ? term : nn::add(nll, term, "brnn.likelihood");
    }
    auto kl = nn::sub(w.log_q, w.log_prior, "brnn.kl");
    auto total = nn::add(nn::scale(kl, kl_weight), nll, "brnn.elbo");
    total = nn::scale(total, mc_weight);
    out.loss = s == 0 ? total : nn::add(out.loss, total, "brnn.elbo");
    out.kl += static_cast<double>(kl.scalar()) / mc_samples;
    out.nll += static_cast<double>(nll.scalar()) / mc_samples;
  }
  return out;
}

struct EpochRecord {
  int epoch = 0;
  double neg_elbo = 0.0;        // summed minibatch losses per observed training cell
  double kl = 0.0;              // full-data KL estimate (sum of (1/B) KL over minibatches)
  double val_log_lik = 0.0;     // predictive log-likelihood per observed validation cell
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val_log_lik = -std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::vector<std::string> incidents;

  void write_csv(const std::filesystem::path& path) const;
};

struct TrainedBrnn {
  std::unique_ptr<BrnnNetwork<float>> model;
  TrainingLog log;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

TrainedBrnn train_brnn(const ingest::LinkSeriesTensor& train, const ingest::LinkSeriesTensor& validation,
                       const BrnnConfig& config, const EpochCallback& on_epoch = {});

// Monte Carlo predictive log-likelihood per observed target cell, with the
// weight draws taken from derived streams of `seed`.
double predictive_log_likelihood(const BrnnNetwork<float>& model, const ingest::LinkSeriesTensor& data, int draws,
                                 std::uint64_t seed);

struct SampleOptions {
  int draws = 500;
  std::uint64_t seed = 1;
  // Adds the learned output noise to each draw; without it the draws carry
  // weight uncertainty only.
  bool observation_noise = true;
};

// draws[sample][d] is a K x L standardized matrix. Draw d uses the weight
// sample from stream (seed, d) for every window, so results do not depend on
// how samples are grouped (up to float rounding in the batched products).
std::vector<std::vector<Eigen::MatrixXd>> sample_predict(const BrnnNetwork<float>& model,
                                                         const ingest::LinkSeriesTensor& data,
                                                         std::span<const Index> samples, const SampleOptions& options);

// One U x L window.
std::vector<Eigen::MatrixXd> sample_predict(const BrnnNetwork<float>& model, const Eigen::MatrixXd& window,
                                            const SampleOptions& options);

void save_brnn(const BrnnNetwork<float>& model, const std::filesystem::path& dir);
std::unique_ptr<BrnnNetwork<float>> load_brnn(const std::filesystem::path& dir);

}  // namespace busuq::brnn
