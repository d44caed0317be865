#pragma once

#include <filesystem>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "busuq/common.hpp"

namespace busuq::kalman {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kEigenFloor = 1e-8;

// Linear-Gaussian state-space model with identity observations:
//   x_{t+1} = A x_t + w,  w ~ N(0, Q)
//   y_t     = x_t + v,    v ~ N(0, R)
// (initial_mean, initial_cov) is the law of x_0 before y_0 is seen.
struct KalmanParams {
  MatrixXd A, Q, R;
  VectorXd initial_mean;
  MatrixXd initial_cov;

  Index dim() const { return A.rows(); }
  void validate() const;
  nlohmann::json to_json() const;
  static KalmanParams from_json(const nlohmann::json& j);

  // A = Q = R = P0 = I, m0 = 0.
  static KalmanParams identity(Index n);
};

// Symmetrizes `m` and raises every eigenvalue to at least `floor`. Returns
// true when an eigenvalue had to be raised.
bool floor_eigenvalues(MatrixXd& m, double floor = kEigenFloor);

struct GaussianState {
  VectorXd mean;
  MatrixXd cov;
};

// x_{t+1 | t} from x_{t | t}.
GaussianState predict_step(const GaussianState& filtered, const KalmanParams& p);

struct UpdateResult {
  GaussianState state;
  double log_likelihood = 0.0;  // log p(y_t observed entries | past)
  // Innovation whitened by the lower Cholesky factor of its covariance;
  // NaN in masked positions.
  VectorXd whitened_innovation;
  int observed = 0;
  bool repaired = false;  // covariance needed an eigenvalue floor
};

// Measurement update using only the entries with mask != 0.
UpdateResult update_step(const GaussianState& predicted, const VectorXd& y, const VectorXd& mask,
                         const KalmanParams& p);

struct FilterResult {
  std::vector<GaussianState> predicted;  // x_{t | t-1}
  std::vector<GaussianState> filtered;   // x_{t | t}
  double log_likelihood = 0.0;
  MatrixXd whitened_innovations;  // T x N, NaN where masked
  int repairs = 0;
};

// observations and mask are T x N (time-major). `keep_predicted = false`
// leaves `predicted` empty to halve the memory held for long series.
FilterResult kf_filter(const KalmanParams& p, const MatrixXd& observations, const MatrixXd& mask,
                       bool keep_predicted = true);

struct HorizonPrediction {
  std::vector<VectorXd> mean;  // [h-1] state mean h steps ahead
  std::vector<MatrixXd> cov;   // [h-1] state covariance h steps ahead
  // Observation-space covariance (state covariance + R).
  MatrixXd observation_cov(std::size_t h_index, const KalmanParams& p) const { return cov[h_index] + p.R; }
};

HorizonPrediction kf_predict_k(const GaussianState& filtered, const KalmanParams& p, int k);

struct SmootherResult {
  std::vector<GaussianState> smoothed;
  std::vector<MatrixXd> lag_one_cov;  // [t] = Cov(x_t, x_{t-1} | all), t >= 1; [0] unused
};

// Needs only `filter.filtered`; one-step predictions are recomputed.
SmootherResult rts_smooth(const KalmanParams& p, const FilterResult& filter);

struct EmResult {
  KalmanParams params;
  // log_likelihood[i] belongs to the parameters after i M-steps; the last
  // entry is for the returned parameters.
  std::vector<double> log_likelihood;
  int iterations = 0;
  bool converged = false;
  int repairs = 0;
};

// Fits A, Q, R and the initial state by EM with an RTS-smoothed E-step.
// Stops after n_iter M-steps or when the log-likelihood gain drops below tol.
EmResult em_fit(const MatrixXd& observations, const MatrixXd& mask, const KalmanParams& initial, int n_iter,
                double tol = 1e-4);

// Checkpoint directory with `model.json` of kind "kalman"; matrices are stored
// as flat column-major arrays.
void save_kalman(const KalmanParams& p, const std::vector<double>& log_likelihood, const std::filesystem::path& dir);
KalmanParams load_kalman(const std::filesystem::path& dir);

}  // namespace busuq::kalman
