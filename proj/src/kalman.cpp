#include "busuq/kalman.hpp"

#include <cmath>
#include <limits>

#include "busuq/nn/checkpoint.hpp"
#include "busuq/normal.hpp"

namespace busuq::kalman {

namespace {

using IndexList = std::vector<Index>;

nlohmann::json matrix_json(const MatrixXd& m) {
  return {{"shape", {m.rows(), m.cols()}}, {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

MatrixXd matrix_from_json(const nlohmann::json& j) {
  const Index rows = j.at("shape")[0].get<Index>(), cols = j.at("shape")[1].get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  require(static_cast<Index>(data.size()) == rows * cols, "kalman parameters: array size does not match its shape");
  return Eigen::Map<const MatrixXd>(data.data(), rows, cols);
}

IndexList observed_entries(const VectorXd& y, const VectorXd& mask) {
  IndexList o;
  for (Index i = 0; i < y.size(); ++i)
    if (mask(i) != 0.0 && std::isfinite(y(i))) o.push_back(i);
  return o;
}

// Cholesky of a covariance that is supposed to be positive definite; floors
// its eigenvalues first when the factorization fails.
Eigen::LLT<MatrixXd> robust_llt(MatrixXd& s, bool& repaired) {
  Eigen::LLT<MatrixXd> llt(s);
  if (llt.info() != Eigen::Success) {
    floor_eigenvalues(s);
    repaired = true;
    llt.compute(s);
  }
  return llt;
}

}  // namespace

void KalmanParams::validate() const {
  const Index n = A.rows();
  require(n >= 1 && A.cols() == n, "kalman: A must be square");
  require(Q.rows() == n && Q.cols() == n && R.rows() == n && R.cols() == n, "kalman: Q and R must match A");
  require(initial_mean.size() == n && initial_cov.rows() == n && initial_cov.cols() == n,
          "kalman: initial state does not match A");
  for (const MatrixXd* m : {&A, &Q, &R, &initial_cov}) require(m->allFinite(), "kalman: non-finite parameter");
  require(initial_mean.allFinite(), "kalman: non-finite initial mean");
  for (const MatrixXd* m : {&Q, &R, &initial_cov}) {
    require(((*m) - m->transpose()).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, m->cwiseAbs().maxCoeff()),
            "kalman: covariance is not symmetric");
  }
}

KalmanParams KalmanParams::identity(Index n) {
  require(n >= 1, "kalman: state dimension must be positive");
  KalmanParams p;
  p.A = MatrixXd::Identity(n, n);
  p.Q = MatrixXd::Identity(n, n);
  p.R = MatrixXd::Identity(n, n);
  p.initial_mean = VectorXd::Zero(n);
  p.initial_cov = MatrixXd::Identity(n, n);
  return p;
}

nlohmann::json KalmanParams::to_json() const {
  return {{"A", matrix_json(A)},
          {"Q", matrix_json(Q)},
          {"R", matrix_json(R)},
          {"initial_mean", matrix_json(initial_mean)},
          {"initial_cov", matrix_json(initial_cov)}};
}

KalmanParams KalmanParams::from_json(const nlohmann::json& j) {
  KalmanParams p;
  p.A = matrix_from_json(j.at("A"));
  p.Q = matrix_from_json(j.at("Q"));
  p.R = matrix_from_json(j.at("R"));
  p.initial_mean = matrix_from_json(j.at("initial_mean"));
  p.initial_cov = matrix_from_json(j.at("initial_cov"));
  p.validate();
  return p;
}

bool floor_eigenvalues(MatrixXd& m, double floor) {
  m = 0.5 * (m + m.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(m);
  if (eig.info() != Eigen::Success) throw NumericalError("kalman: eigen decomposition failed");
  if (eig.eigenvalues().minCoeff() >= floor) return false;
  const VectorXd lambda = eig.eigenvalues().cwiseMax(floor);
  m = eig.eigenvectors() * lambda.asDiagonal() * eig.eigenvectors().transpose();
  m = 0.5 * (m + m.transpose()).eval();
  return true;
}

GaussianState predict_step(const GaussianState& filtered, const KalmanParams& p) {
  GaussianState out;
  out.mean = p.A * filtered.mean;
  out.cov = p.A * filtered.cov * p.A.transpose() + p.Q;
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

UpdateResult update_step(const GaussianState& predicted, const VectorXd& y, const VectorXd& mask,
                         const KalmanParams& p) {
  const Index n = p.dim();
  require(y.size() == n && mask.size() == n, "kalman: observation does not match the state dimension");
  UpdateResult r;
  r.whitened_innovation = VectorXd::Constant(n, std::numeric_limits<double>::quiet_NaN());
  const IndexList o = observed_entries(y, mask);
  r.observed = static_cast<int>(o.size());
  if (o.empty()) {
    r.state = predicted;
    return r;
  }
  const MatrixXd& P = predicted.cov;
  MatrixXd S = P(o, o) + p.R(o, o);
  const auto llt = robust_llt(S, r.repaired);
  const VectorXd v = y(o) - predicted.mean(o);
  const MatrixXd gain = llt.solve(P(o, Eigen::all)).transpose();  // n x |o|

  r.state.mean = predicted.mean + gain * v;
  // Joseph form keeps the update symmetric and PSD in floating point.
  MatrixXd ikh = MatrixXd::Identity(n, n);
  ikh(Eigen::all, o) -= gain;
  r.state.cov = ikh * P * ikh.transpose() + gain * p.R(o, o) * gain.transpose();
  r.state.cov = 0.5 * (r.state.cov + r.state.cov.transpose()).eval();
  if (Eigen::LLT<MatrixXd>(r.state.cov).info() != Eigen::Success) r.repaired |= floor_eigenvalues(r.state.cov);

  const VectorXd w = llt.matrixL().solve(v);
  r.whitened_innovation(o) = w;
  const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  r.log_likelihood = -0.5 * (w.squaredNorm() + log_det) - static_cast<double>(o.size()) * kLogSqrt2Pi;
  return r;
}

FilterResult kf_filter(const KalmanParams& p, const MatrixXd& observations, const MatrixXd& mask,
                       bool keep_predicted) {
  p.validate();
  require(observations.cols() == p.dim(), "kalman: observations have " + std::to_string(observations.cols()) +
                                              " columns, the model has " + std::to_string(p.dim()) + " states");
  require(mask.rows() == observations.rows() && mask.cols() == observations.cols(),
          "kalman: mask does not match the observations");
  const Index T = observations.rows();
  FilterResult out;
  out.filtered.reserve(static_cast<std::size_t>(T));
  if (keep_predicted) out.predicted.reserve(static_cast<std::size_t>(T));
  out.whitened_innovations.resize(T, p.dim());
  GaussianState pred{p.initial_mean, p.initial_cov};
  for (Index t = 0; t < T; ++t) {
    if (t > 0) pred = predict_step(out.filtered.back(), p);
    auto u = update_step(pred, observations.row(t).transpose(), mask.row(t).transpose(), p);
    out.log_likelihood += u.log_likelihood;
    out.whitened_innovations.row(t) = u.whitened_innovation.transpose();
    out.repairs += u.repaired ? 1 : 0;
    if (keep_predicted) out.predicted.push_back(pred);
    out.filtered.push_back(std::move(u.state));
  }
  if (!std::isfinite(out.log_likelihood)) throw NumericalError("kalman: log-likelihood is not finite");
  return out;
}

HorizonPrediction kf_predict_k(const GaussianState& filtered, const KalmanParams& p, int k) {
  require(k >= 1, "kalman: horizon count must be >= 1");
  HorizonPrediction out;
  GaussianState s = filtered;
  for (int h = 0; h < k; ++h) {
    s = predict_step(s, p);
    out.mean.push_back(s.mean);
    out.cov.push_back(s.cov);
  }
  return out;
}

namespace {

// Backward RTS pass. `visit(t, smoothed_t, lag_one_t)` is called for
// t = T-1 down to 0; lag_one_t is Cov(x_t, x_{t-1}) and empty at t = 0.
template <typename Visit>
void backward_pass(const KalmanParams& p, const std::vector<GaussianState>& filtered, Visit&& visit) {
  const auto T = static_cast<Index>(filtered.size());
  if (T == 0) return;
  GaussianState next = filtered.back();
  MatrixXd lag;
  for (Index t = T - 1; t >= 0; --t) {
    GaussianState current;
    MatrixXd j_prev;  // smoother gain J_{t-1}
    if (t == T - 1) {
      current = next;
    } else {
      const GaussianState& f = filtered[static_cast<std::size_t>(t)];
      const GaussianState pred = predict_step(f, p);
      // J_t = P_{t|t} A' P_{t+1|t}^{-1}
      const MatrixXd jt = pred.cov.ldlt().solve(p.A * f.cov).transpose();
      current.mean = f.mean + jt * (next.mean - pred.mean);
      current.cov = f.cov + jt * (next.cov - pred.cov) * jt.transpose();
      current.cov = 0.5 * (current.cov + current.cov.transpose()).eval();
      lag = next.cov * jt.transpose();  // Cov(x_{t+1}, x_t)
    }
    if (t < T - 1) visit(t + 1, next, lag);
    next = std::move(current);
  }
  visit(Index{0}, next, MatrixXd());
}

}  // namespace

SmootherResult rts_smooth(const KalmanParams& p, const FilterResult& filter) {
  SmootherResult out;
  const std::size_t T = filter.filtered.size();
  out.smoothed.resize(T);
  out.lag_one_cov.resize(T);
  backward_pass(p, filter.filtered, [&](Index t, const GaussianState& s, const MatrixXd& lag) {
    out.smoothed[static_cast<std::size_t>(t)] = s;
    out.lag_one_cov[static_cast<std::size_t>(t)] = lag;
  });
  return out;
}

EmResult em_fit(const MatrixXd& observations, const MatrixXd& mask, const KalmanParams& initial, int n_iter,
                double tol) {
  initial.validate();
  require(n_iter >= 0, "em_fit: n_iter must be >= 0");
  const Index n = initial.dim();
  const Index T = observations.rows();
  require(T >= 2 * n, "em_fit: need at least " + std::to_string(2 * n) + " time steps, got " + std::to_string(T));

  EmResult out;
  out.params = initial;
  for (int it = 0;; ++it) {
    const KalmanParams& p = out.params;
    const FilterResult f = kf_filter(p, observations, mask, false);
    out.repairs += f.repairs;
    out.log_likelihood.push_back(f.log_likelihood);
    if (it > 0 && f.log_likelihood - out.log_likelihood[out.log_likelihood.size() - 2] < tol) {
      out.converged = true;
      break;
    }
    if (it == n_iter) break;

    // Sufficient statistics from the smoother.
    MatrixXd s00 = MatrixXd::Zero(n, n), s11 = MatrixXd::Zero(n, n), s10 = MatrixXd::Zero(n, n);
    MatrixXd r_sum = MatrixXd::Zero(n, n);
    GaussianState first;
    VectorXd later_mean;  // smoothed mean of x_{t+1} while visiting t
    backward_pass(p, f.filtered, [&](Index t, const GaussianState& s, const MatrixXd& lag) {
      const MatrixXd second = s.cov + s.mean * s.mean.transpose();
      if (t >= 1) s11 += second;
      if (t <= T - 2) s00 += second;
      // s10 = sum over t >= 1 of Cov(x_t, x_{t-1}) + E[x_t] E[x_{t-1}]'; the
      // mean product is added when x_{t-1} is visited.
      if (t >= 1) s10 += lag;
      if (t <= T - 2) s10 += later_mean * s.mean.transpose();
      later_mean = s.mean;

      // Observation noise with missing entries (conditional expectation
      // under the current R for the unobserved block).
      const VectorXd y = observations.row(t).transpose();
      const IndexList o = observed_entries(y, mask.row(t).transpose());
      if (o.empty()) {
        r_sum += p.R;
      } else if (static_cast<Index>(o.size()) == n) {
        const VectorXd e = y - s.mean;
        r_sum += e * e.transpose() + s.cov;
      } else {
        IndexList m;
        for (Index i = 0, k = 0; i < n; ++i) {
          if (k < static_cast<Index>(o.size()) && o[static_cast<std::size_t>(k)] == i) ++k;
          else m.push_back(i);
        }
        const VectorXd e = y(o) - s.mean(o);
        const MatrixXd eoo = e * e.transpose() + s.cov(o, o);
        const MatrixXd roo = p.R(o, o);
        const MatrixXd b = roo.ldlt().solve(p.R(o, m)).transpose();  // R_mo R_oo^{-1}
        MatrixXd full = MatrixXd::Zero(n, n);
        full(o, o) = eoo;
        full(m, o) = b * eoo;
        full(o, m) = full(m, o).transpose();
        full(m, m) = b * eoo * b.transpose() + p.R(m, m) - b * p.R(o, m);
        r_sum += full;
      }
      if (t == 0) first = s;
    });

    KalmanParams next;
    next.A = s00.ldlt().solve(s10.transpose()).transpose();
    next.Q = (s11 - next.A * s10.transpose()) / static_cast<double>(T - 1);
    next.R = r_sum / static_cast<double>(T);
    next.initial_mean = first.mean;
    next.initial_cov = first.cov;
    for (MatrixXd* m : {&next.Q, &next.R, &next.initial_cov}) out.repairs += floor_eigenvalues(*m) ? 1 : 0;
    if (!next.A.allFinite() || !next.Q.allFinite() || !next.R.allFinite())
      throw NumericalError("em_fit: M-step produced non-finite parameters");
    out.params = std::move(next);
    out.iterations = it + 1;
  }
  return out;
}

void save_kalman(const KalmanParams& p, const std::vector<double>& log_likelihood, const std::filesystem::path& dir) {
  p.validate();
  std::filesystem::create_directories(dir);
  nlohmann::json manifest{{"format", nn::kCheckpointFormat},
                          {"kind", "kalman"},
                          {"n_links", p.dim()},
                          {"params", p.to_json()},
                          {"log_likelihood", log_likelihood}};
  io::write_json(dir / "model.json", manifest);
}

KalmanParams load_kalman(const std::filesystem::path& dir) {
  const auto manifest = nn::read_manifest(dir, "kalman");
  return KalmanParams::from_json(manifest.at("params"));
}

}  // namespace busuq::kalman
