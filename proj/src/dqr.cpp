#include "busuq/dqr.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>

namespace busuq::dqr {

void QuantileLevels::validate() const {
  for (std::size_t j = 0; j < values.size(); ++j) {
    require(values[j] > 0.0 && values[j] < 1.0, "quantile level " + std::to_string(values[j]) + " is outside (0,1)");
    if (j > 0) require(values[j] > values[j - 1], "quantile levels must be strictly increasing");
  }
}

std::optional<std::size_t> QuantileLevels::find(double p) const {
  for (std::size_t j = 0; j < values.size(); ++j)
    if (std::abs(values[j] - p) < 1e-9) return j;
  return std::nullopt;
}

std::pair<std::size_t, std::size_t> QuantileLevels::interval(double alpha) const {
  const auto lo = find((1.0 - alpha) / 2.0);
  const auto hi = find((1.0 + alpha) / 2.0);
  require(lo && hi, "quantile levels do not contain the pair for a " + std::to_string(alpha * 100.0) + "% interval");
  return {*lo, *hi};
}

void DqrConfig::validate() const {
  require(lstm_state_size >= 10 && lstm_state_size <= 128, "lstm_state_size must lie in [10, 128]");
  require(conv_kernel_size >= 1 && conv_kernel_size <= 20, "conv_kernel_size must lie in [1, 20]");
  require(dropout_probability >= 0.0 && dropout_probability <= 0.6, "dropout_probability must lie in [0, 0.6]");
  levels.validate();
  require(learning_rate >= 0.0, "learning_rate must be non-negative");
  require(batch_size >= 1, "batch_size must be at least 1");
  require(max_epochs >= 0, "max_epochs must be non-negative");
  require(patience >= 1, "patience must be at least 1");
}

nlohmann::json DqrConfig::to_json() const {
  return {{"lstm_state_size", lstm_state_size},
          {"conv_kernel_size", conv_kernel_size},
          {"dropout_probability", dropout_probability},
          {"quantile_levels", levels.values},
          {"learning_rate", learning_rate},
          {"batch_size", batch_size},
          {"max_epochs", max_epochs},
          {"patience", patience},
          {"seed", seed}};
}

DqrConfig DqrConfig::from_json(const nlohmann::json& j) {
  DqrConfig c;
  c.lstm_state_size = j.value("lstm_state_size", c.lstm_state_size);
  c.conv_kernel_size = j.value("conv_kernel_size", c.conv_kernel_size);
  c.dropout_probability = j.value("dropout_probability", c.dropout_probability);
  if (j.contains("quantile_levels")) c.levels.values = j.at("quantile_levels").get<std::vector<double>>();
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.patience = j.value("patience", c.patience);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

namespace {

void check_shapes(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* what) {
  require(a.rows() == b.rows() && a.cols() == b.cols(),
          std::string(what) + ": shape mismatch " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
              " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
}

}  // namespace

double l2_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& y_hat, const Eigen::MatrixXd& mask) {
  check_shapes(y, y_hat, "l2_loss");
  check_shapes(y, mask, "l2_loss");
  return ((y - y_hat).array().square() * mask.array()).sum();
}

double pinball_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& q_hat, double p, const Eigen::MatrixXd& mask) {
  require(p > 0.0 && p < 1.0, "pinball_loss: level " + std::to_string(p) + " is outside (0,1)");
  check_shapes(y, q_hat, "pinball_loss");
  check_shapes(y, mask, "pinball_loss");
  const Eigen::ArrayXXd r = (y - q_hat).array();
  return ((p * r).max((p - 1.0) * r) * mask.array()).sum();
}

double joint_loss(const Eigen::MatrixXd& y, const Eigen::MatrixXd& y_hat, const std::vector<Eigen::MatrixXd>& q_hat,
                  const QuantileLevels& levels, const Eigen::MatrixXd& mask) {
  levels.validate();
  require(q_hat.size() == levels.size(), "joint_loss: " + std::to_string(q_hat.size()) + " quantile arrays for " +
                                             std::to_string(levels.size()) + " levels");
  double total = l2_loss(y, y_hat, mask);
  for (std::size_t j = 0; j < q_hat.size(); ++j) total += pinball_loss(y, q_hat[j], levels.values[j], mask);
  return total;
}

void repair_crossings(QuantilePrediction& prediction) {
  const std::size_t J = prediction.quantiles.size();
  if (J < 2) return;
  std::vector<double> cell(J);
  const Index K = prediction.quantiles[0].rows(), L = prediction.quantiles[0].cols();
  for (Index k = 0; k < K; ++k) {
    for (Index l = 0; l < L; ++l) {
      for (std::size_t j = 0; j < J; ++j) cell[j] = prediction.quantiles[j](k, l);
      std::sort(cell.begin(), cell.end());
      for (std::size_t j = 0; j < J; ++j) prediction.quantiles[j](k, l) = cell[j];
    }
  }
}

Batch make_batch(const ingest::LinkSeriesTensor& data, std::span<const Index> samples, bool with_targets) {
  Batch b;
  b.batch = static_cast<Index>(samples.size());
  b.links = data.grid.n_links;
  const Index U = data.x.dim(1), K = data.y.dim(1), L = b.links;
  b.inputs.assign(static_cast<std::size_t>(U), Eigen::MatrixXd(b.batch * L, 1));
  for (Index s = 0; s < b.batch; ++s) {
    const Index i = samples[static_cast<std::size_t>(s)];
    require(i >= 0 && i < data.samples(), "sample index " + std::to_string(i) + " out of range");
    for (Index u = 0; u < U; ++u)
      for (Index l = 0; l < L; ++l) b.inputs[static_cast<std::size_t>(u)](s * L + l, 0) = data.x(i, u, l);
  }
  if (with_targets) {
    b.targets.assign(static_cast<std::size_t>(K), Eigen::MatrixXd(b.batch * L, 1));
    b.masks.assign(static_cast<std::size_t>(K), Eigen::MatrixXd(b.batch * L, 1));
    for (Index s = 0; s < b.batch; ++s) {
      const Index i = samples[static_cast<std::size_t>(s)];
      for (Index k = 0; k < K; ++k) {
        for (Index l = 0; l < L; ++l) {
          b.targets[static_cast<std::size_t>(k)](s * L + l, 0) = data.y(i, k, l);
          b.masks[static_cast<std::size_t>(k)](s * L + l, 0) = data.mask_y(i, k, l);
        }
      }
    }
  }
  return b;
}

QuantilePrediction predict_dqr(const DqrNetwork<float>& model, const Eigen::MatrixXd& window) {
  require(window.rows() == model.window() && window.cols() == model.links(),
          "predict_dqr: window must be " + std::to_string(model.window()) + "x" + std::to_string(model.links()) +
              ", got " + std::to_string(window.rows()) + "x" + std::to_string(window.cols()));
  Batch b;
  b.batch = 1;
  b.links = model.links();
  for (Index u = 0; u < window.rows(); ++u) b.inputs.push_back(window.row(u).transpose());
  return model.predict(b).front();
}

std::vector<QuantilePrediction> predict_all(const DqrNetwork<float>& model, const ingest::LinkSeriesTensor& data,
                                            Index batch_size) {
  require(data.grid.n_links == model.links(), "predict: model has " + std::to_string(model.links()) +
                                                  " links, data has " + std::to_string(data.grid.n_links));
  std::vector<QuantilePrediction> out;
  out.reserve(static_cast<std::size_t>(data.samples()));
  std::vector<Index> idx;
  for (Index start = 0; start < data.samples(); start += batch_size) {
    idx.clear();
    for (Index i = start; i < std::min(data.samples(), start + batch_size); ++i) idx.push_back(i);
    auto part = model.predict(make_batch(data, idx, false));
    for (auto& p : part) out.push_back(std::move(p));
  }
  return out;
}

double evaluate_loss(const DqrNetwork<float>& model, const ingest::LinkSeriesTensor& data, Index batch_size) {
  double total = 0.0, observed = 0.0;
  std::vector<Index> idx;
  nn::Tape<float> tape;
  for (Index start = 0; start < data.samples(); start += batch_size) {
    idx.clear();
    for (Index i = start; i < std::min(data.samples(), start + batch_size); ++i) idx.push_back(i);
    tape.clear();
    const auto [loss, n] = model.loss(tape, make_batch(data, idx), false, nullptr);
    total += static_cast<double>(loss.scalar());
    observed += n;
  }
  return observed > 0.0 ? total / observed : 0.0;
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), "cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n" << std::setprecision(9);
  for (const auto& e : epochs) out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << '\n';
}

TrainedDqr train_dqr(const ingest::LinkSeriesTensor& train, const ingest::LinkSeriesTensor& validation,
                     const DqrConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  require(train.samples() > 0, "train_dqr: training split has no samples");
  require(validation.grid.n_links == train.grid.n_links, "train_dqr: splits disagree on the link count");
  TrainedDqr result;
  result.model = std::make_unique<DqrNetwork<float>>(config, train.grid.n_links, train.grid.window_u,
                                                     train.grid.horizon_k);
  auto& model = *result.model;
  auto& log = result.log;
  nn::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  nn::Adam<float> adam(adam_cfg);
  auto params = model.parameters().all();

  Rng shuffle_rng = derived_rng(config.seed, 1);
  Rng dropout_rng = derived_rng(config.seed, 2);
  std::vector<Index> order(static_cast<std::size_t>(train.samples()));
  std::iota(order.begin(), order.end(), Index{0});

  auto best = model.parameters().snapshot();
  int since_best = 0;
  nn::Tape<float> tape;
  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0, epoch_obs = 0.0;
    bool finite = true;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const auto batch = make_batch(train, std::span<const Index>(order.data() + start, end - start));
      tape.clear();
      model.parameters().zero_grad();
      const auto [loss, observed] = model.loss(tape, batch, true, &dropout_rng);
      if (!std::isfinite(loss.scalar())) {
        finite = false;
        break;
      }
      epoch_loss += static_cast<double>(loss.scalar());
      epoch_obs += observed;
      if (observed == 0.0) continue;  // nothing observed: zero gradient
      tape.backward(nn::scale(loss, static_cast<float>(1.0 / observed)));
      if (!adam.step(params)) log.incidents.push_back("epoch " + std::to_string(epoch) + ": " + adam.incidents().back());
    }
    if (!finite) {
      log.diverged = true;
      log.incidents.push_back("epoch " + std::to_string(epoch) + ": non-finite training loss, stopped");
      break;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_obs > 0.0 ? epoch_loss / epoch_obs : 0.0;
    rec.val_loss = validation.samples() > 0 ? evaluate_loss(model, validation) : rec.train_loss;
    log.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (!std::isfinite(rec.val_loss)) {
      log.diverged = true;
      log.incidents.push_back("epoch " + std::to_string(epoch) + ": non-finite validation loss, stopped");
      break;
    }
    if (rec.val_loss < log.best_val_loss) {
      log.best_val_loss = rec.val_loss;
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

void save_dqr(const DqrNetwork<float>& model, const std::filesystem::path& dir) {
  nlohmann::json extra{{"n_links", model.links()}, {"window_u", model.window()}, {"horizon_k", model.horizon()}};
  nn::save_checkpoint(dir, "dqr", model.parameters(), model.config().to_json(), model.config().seed, extra);
}

std::unique_ptr<DqrNetwork<float>> load_dqr(const std::filesystem::path& dir) {
  const auto manifest = nn::read_manifest(dir, "dqr");
  const auto config = DqrConfig::from_json(manifest.at("hyper"));
  const auto& extra = manifest.at("extra");
  auto model = std::make_unique<DqrNetwork<float>>(config, extra.at("n_links").get<Index>(),
                                                   extra.at("window_u").get<Index>(), extra.at("horizon_k").get<Index>());
  nn::load_parameters(dir, manifest, model->parameters());
  return model;
}

}  // namespace busuq::dqr
