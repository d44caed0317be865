#include "busuq/brnn.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>

namespace busuq::brnn {

void MixturePriorConfig::validate() const {
  require(pi > 0.0 && pi <= 1.0, "prior pi must lie in (0, 1]");
  require(sigma2 > 0.0, "prior sigma2 must be positive");
  require(sigma1 >= sigma2, "prior sigma1 must be at least sigma2");
}

void BrnnConfig::validate() const {
  require(lstm_state_size >= 10 && lstm_state_size <= 50, "lstm_state_size must lie in [10, 50]");
  prior.validate();
  require(batch_size >= 1, "batch_size must be at least 1");
  require(mc_samples >= 1, "mc_samples must be at least 1");
  require(learning_rate >= 0.0, "learning_rate must be non-negative");
  require(max_epochs >= 0, "max_epochs must be non-negative");
  require(patience >= 1, "patience must be at least 1");
  require(init_mu_std >= 0.0, "init_mu_std must be non-negative");
  require(std::isfinite(init_rho), "init_rho must be finite");
  require(validation_draws >= 1, "validation_draws must be at least 1");
}

nlohmann::json BrnnConfig::to_json() const {
  return {{"lstm_state_size", lstm_state_size},
          {"prior", {{"pi", prior.pi}, {"sigma1", prior.sigma1}, {"sigma2", prior.sigma2}}},
          {"batch_size", batch_size},
          {"mc_samples", mc_samples},
          {"learning_rate", learning_rate},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seed", seed},
          {"init_mu_std", init_mu_std},
          {"init_rho", init_rho},
          {"validation_draws", validation_draws}};
}

BrnnConfig BrnnConfig::from_json(const nlohmann::json& j) {
  BrnnConfig c;
  c.lstm_state_size = j.value("lstm_state_size", c.lstm_state_size);
  if (j.contains("prior")) {
    const auto& p = j.at("prior");
    c.prior.pi = p.value("pi", c.prior.pi);
    c.prior.sigma1 = p.value("sigma1", c.prior.sigma1);
    c.prior.sigma2 = p.value("sigma2", c.prior.sigma2);
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.mc_samples = j.value("mc_samples", c.mc_samples);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.init_mu_std = j.value("init_mu_std", c.init_mu_std);
  c.init_rho = j.value("init_rho", c.init_rho);
  c.validation_draws = j.value("validation_draws", c.validation_draws);
  c.validate();
  return c;
}

double sample_weight(double mu, double rho, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  return mu + nn::detail::softplus(rho) * n01(rng);
}

double log_mixture_prior(std::span<const double> weights, const MixturePriorConfig& prior) {
  prior.validate();
  const auto p = prior.prior();
  double total = 0.0;
  for (double w : weights) total += nn::log_mixture_density(w, p).first;
  return total;
}

SequenceBatch make_sequence_batch(const ingest::LinkSeriesTensor& data, std::span<const Index> samples,
                                  bool with_targets) {
  SequenceBatch b;
  b.batch = static_cast<Index>(samples.size());
  b.links = data.grid.n_links;
  const Index U = data.x.dim(1), K = data.y.dim(1), L = b.links;
  b.inputs.assign(static_cast<std::size_t>(U), Eigen::MatrixXd(b.batch, L));
  if (with_targets) {
    b.targets.assign(static_cast<std::size_t>(K), Eigen::MatrixXd(b.batch, L));
    b.masks.assign(static_cast<std::size_t>(K), Eigen::MatrixXd(b.batch, L));
  }
  for (Index s = 0; s < b.batch; ++s) {
    const Index i = samples[static_cast<std::size_t>(s)];
    require(i >= 0 && i < data.samples(), "sample index " + std::to_string(i) + " out of range");
    for (Index u = 0; u < U; ++u)
      for (Index l = 0; l < L; ++l) b.inputs[static_cast<std::size_t>(u)](s, l) = data.x(i, u, l);
    if (!with_targets) continue;
    for (Index k = 0; k < K; ++k) {
      for (Index l = 0; l < L; ++l) {
        b.targets[static_cast<std::size_t>(k)](s, l) = data.y(i, k, l);
        b.masks[static_cast<std::size_t>(k)](s, l) = data.mask_y(i, k, l);
      }
    }
  }
  return b;
}

namespace {

constexpr Index kChunk = 256;

std::vector<Index> range(Index begin, Index end) {
  std::vector<Index> v(static_cast<std::size_t>(end - begin));
  std::iota(v.begin(), v.end(), begin);
  return v;
}

// Observation-noise stream for (draw, sample), disjoint from the weight streams.
Rng noise_rng(std::uint64_t seed, int draw, Index sample) {
  return derived_rng(seed, (static_cast<std::uint64_t>(draw) + 1) << 32 | static_cast<std::uint64_t>(sample));
}

}  // namespace

double predictive_log_likelihood(const BrnnNetwork<float>& model, const ingest::LinkSeriesTensor& data, int draws,
                                 std::uint64_t seed) {
  require(draws >= 1, "predictive_log_likelihood: need at least one draw");
  double total = 0.0, observed = 0.0;
  nn::Tape<float> tape;
  for (Index start = 0; start < data.samples(); start += kChunk) {
    const auto idx = range(start, std::min(data.samples(), start + kChunk));
    const auto batch = make_sequence_batch(data, idx);
    const Index K = model.horizon(), B = batch.batch, L = batch.links;
    // Running log-sum-exp over draws for every cell of the chunk.
    Eigen::ArrayXXd lse_max = Eigen::ArrayXXd::Constant(B, K * L, -std::numeric_limits<double>::infinity());
    Eigen::ArrayXXd lse_sum = Eigen::ArrayXXd::Zero(B, K * L);
    for (int d = 0; d < draws; ++d) {
      Rng rng = derived_rng(seed, static_cast<std::uint64_t>(d));
      tape.clear();
      const auto w = model.sample(tape, rng, false);
      const auto means = model.forward(tape, w, batch.inputs);
      const double lv = static_cast<double>(w.w[BrnnNetwork<float>::kLogVar].scalar());
      for (Index k = 0; k < K; ++k) {
        const auto& f = means[static_cast<std::size_t>(k)].value();
        const auto& y = batch.targets[static_cast<std::size_t>(k)];
        for (Index b = 0; b < B; ++b) {
          for (Index l = 0; l < L; ++l) {
            const double r = y(b, l) - static_cast<double>(f(b, l));
            const double lp = -kLogSqrt2Pi - 0.5 * lv - 0.5 * r * r * std::exp(-lv);
            double& m = lse_max(b, k * L + l);
            double& s = lse_sum(b, k * L + l);
            if (lp > m) {
              s = s * std::exp(m - lp) + 1.0;
              m = lp;
            } else {
              s += std::exp(lp - m);
            }
          }
        }
      }
    }
    for (Index k = 0; k < K; ++k) {
      const auto& mask = batch.masks[static_cast<std::size_t>(k)];
      for (Index b = 0; b < B; ++b) {
        for (Index l = 0; l < L; ++l) {
          if (mask(b, l) == 0.0) continue;
          total += lse_max(b, k * L + l) + std::log(lse_sum(b, k * L + l) / draws);
          observed += 1.0;
        }
      }
    }
  }
  return observed > 0.0 ? total / observed : 0.0;
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << "epoch,neg_elbo,kl,val_log_lik\n" << std::setprecision(9);
  for (const auto& e : epochs) out << e.epoch << ',' << e.neg_elbo << ',' << e.kl << ',' << e.val_log_lik << '\n';
}

TrainedBrnn train_brnn(const ingest::LinkSeriesTensor& train, const ingest::LinkSeriesTensor& validation,
                       const BrnnConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  require(train.samples() > 0, "train_brnn: training split has no samples");
  require(validation.grid.n_links == train.grid.n_links, "train_brnn: splits disagree on the link count");
  TrainedBrnn result;
  result.model = std::make_unique<BrnnNetwork<float>>(config, train.grid.n_links, train.grid.window_u,
                                                      train.grid.horizon_k);
  auto& model = *result.model;
  auto& log = result.log;
  nn::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  nn::Adam<float> adam(adam_cfg);
  auto params = model.parameters().all();

  const Index n = train.samples();
  const Index batch_count = (n + config.batch_size - 1) / config.batch_size;
  const double train_observed = std::max(1.0, static_cast<double>(train.mask_y.data.cast<double>().sum()));
  // Per-cell scaling keeps step sizes comparable across dataset sizes.
  const float grad_scale = static_cast<float>(static_cast<double>(batch_count) / train_observed);

  Rng shuffle_rng = derived_rng(config.seed, 1);
  Rng weight_rng = derived_rng(config.seed, 2);
  const std::uint64_t val_seed = derived_rng(config.seed, 3)();
  std::vector<Index> order = range(0, n);

  auto best = model.parameters().snapshot();
  int since_best = 0;
  nn::Tape<float> tape;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double neg_elbo = 0.0, kl = 0.0;
    bool finite = true;
    for (Index start = 0; start < n; start += config.batch_size) {
      const Index end = std::min(n, start + static_cast<Index>(config.batch_size));
      const auto batch = make_sequence_batch(
          train, std::span<const Index>(order.data() + start, static_cast<std::size_t>(end - start)));
      tape.clear();
      model.parameters().zero_grad();
      const auto terms = elbo_minibatch_loss(tape, model, batch, batch_count, config.mc_samples, weight_rng);
      const double value = static_cast<double>(terms.loss.scalar());
      if (!std::isfinite(value)) {
        finite = false;
        break;
      }
      neg_elbo += value;
      kl += terms.kl / static_cast<double>(batch_count);
      tape.backward(nn::scale(terms.loss, grad_scale));
      if (!adam.step(params)) log.incidents.push_back("epoch " + std::to_string(epoch) + ": " + adam.incidents().back());
    }
    if (!finite) {
      log.diverged = true;
      log.incidents.push_back("epoch " + std::to_string(epoch) + ": non-finite ELBO, stopped");
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.neg_elbo = neg_elbo / train_observed;
    rec.kl = kl;
    rec.val_log_lik = validation.samples() > 0
                          ? predictive_log_likelihood(model, validation, config.validation_draws, val_seed)
                          : -rec.neg_elbo;
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!std::isfinite(rec.val_log_lik)) {
      log.diverged = true;
      log.incidents.push_back("epoch " + std::to_string(epoch) + ": non-finite validation likelihood, stopped");
      break;
    }
    if (rec.val_log_lik > log.best_val_log_lik) {
      log.best_val_log_lik = rec.val_log_lik;
      log.best_epoch = epoch;
      best = model.parameters().snapshot();
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  model.parameters().restore(best);
  return result;
}

namespace {

std::vector<std::vector<Eigen::MatrixXd>> sample_batch(const BrnnNetwork<float>& model,
                                                       const std::vector<Eigen::MatrixXd>& inputs,
                                                       std::span<const Index> sample_ids, const SampleOptions& options) {
  const Index B = static_cast<Index>(sample_ids.size()), K = model.horizon(), L = model.links();
  std::vector<std::vector<Eigen::MatrixXd>> out(static_cast<std::size_t>(B),
                                                std::vector<Eigen::MatrixXd>(static_cast<std::size_t>(options.draws)));
  std::normal_distribution<double> n01(0.0, 1.0);
  nn::Tape<float> tape;
  for (int d = 0; d < options.draws; ++d) {
    Rng rng = derived_rng(options.seed, static_cast<std::uint64_t>(d));
    tape.clear();
    const auto w = model.sample(tape, rng, false);
    const auto means = model.forward(tape, w, inputs);
    const double sd = std::exp(0.5 * static_cast<double>(w.w[BrnnNetwork<float>::kLogVar].scalar()));
    for (Index b = 0; b < B; ++b) {
      Eigen::MatrixXd draw(K, L);
      for (Index k = 0; k < K; ++k) draw.row(k) = means[static_cast<std::size_t>(k)].value().row(b).cast<double>();
      if (options.observation_noise) {
        Rng noise = noise_rng(options.seed, d, sample_ids[static_cast<std::size_t>(b)]);
        for (Index k = 0; k < K; ++k)
          for (Index l = 0; l < L; ++l) draw(k, l) += sd * n01(noise);
      }
      out[static_cast<std::size_t>(b)][static_cast<std::size_t>(d)] = std::move(draw);
    }
  }
  return out;
}

}  // namespace

std::vector<std::vector<Eigen::MatrixXd>> sample_predict(const BrnnNetwork<float>& model,
                                                         const ingest::LinkSeriesTensor& data,
                                                         std::span<const Index> samples, const SampleOptions& options) {
  require(options.draws >= 1, "sample_predict: need at least one draw");
  require(data.grid.n_links == model.links(), "sample_predict: model has " + std::to_string(model.links()) +
                                                  " links, data has " + std::to_string(data.grid.n_links));
  std::vector<std::vector<Eigen::MatrixXd>> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(kChunk)) {
    const auto part = samples.subspan(start, std::min(samples.size() - start, static_cast<std::size_t>(kChunk)));
    auto draws = sample_batch(model, make_sequence_batch(data, part, false).inputs, part, options);
    for (auto& d : draws) out.push_back(std::move(d));
  }
  return out;
}

std::vector<Eigen::MatrixXd> sample_predict(const BrnnNetwork<float>& model, const Eigen::MatrixXd& window,
                                            const SampleOptions& options) {
  require(options.draws >= 1, "sample_predict: need at least one draw");
  require(window.rows() == model.window() && window.cols() == model.links(),
          "sample_predict: window must be " + std::to_string(model.window()) + "x" + std::to_string(model.links()) +
              ", got " + std::to_string(window.rows()) + "x" + std::to_string(window.cols()));
  std::vector<Eigen::MatrixXd> inputs;
  for (Index u = 0; u < window.rows(); ++u) inputs.push_back(window.row(u));
  const Index id = 0;
  return std::move(sample_batch(model, inputs, std::span<const Index>(&id, 1), options).front());
}

void save_brnn(const BrnnNetwork<float>& model, const std::filesystem::path& dir) {
  nlohmann::json extra{{"n_links", model.links()}, {"window_u", model.window()}, {"horizon_k", model.horizon()}};
  nn::save_checkpoint(dir, "brnn", model.parameters(), model.config().to_json(), model.config().seed, extra);
}

std::unique_ptr<BrnnNetwork<float>> load_brnn(const std::filesystem::path& dir) {
  const auto manifest = nn::read_manifest(dir, "brnn");
  const auto config = BrnnConfig::from_json(manifest.at("hyper"));
  const auto& extra = manifest.at("extra");
  auto model = std::make_unique<BrnnNetwork<float>>(config, extra.at("n_links").get<Index>(),
                                                    extra.at("window_u").get<Index>(), extra.at("horizon_k").get<Index>());
  nn::load_parameters(dir, manifest, model->parameters());
  return model;
}

}  // namespace busuq::brnn
