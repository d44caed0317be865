#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "busuq/nn/tape.hpp"

namespace busuq::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;  // global gradient norm; <= 0 disables clipping
};

template <typename Scalar>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  long steps() const { return t_; }
  const std::vector<std::string>& incidents() const { return incidents_; }

  // Returns false (and records an incident) when the gradient is not finite;
  // parameters and moments are then left untouched.
  bool step(const std::vector<Parameter<Scalar>*>& params) {
    if (moments_.empty()) {
      for (auto* p : params) moments_.push_back({Matrix<Scalar>::Zero(p->value.rows(), p->value.cols()),
                                                 Matrix<Scalar>::Zero(p->value.rows(), p->value.cols())});
    }
    require(moments_.size() == params.size(), "Adam: parameter list changed between steps");

    double norm2 = 0.0;
    for (auto* p : params) {
      if (!p->trainable) continue;
      norm2 += p->grad.template cast<double>().squaredNorm();
    }
    if (!std::isfinite(norm2)) {
      incidents_.push_back("step " + std::to_string(t_ + 1) + ": non-finite gradient, update skipped");
      return false;
    }
    const double norm = std::sqrt(norm2);
    const double clip = (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;

    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const Scalar b1 = static_cast<Scalar>(config_.beta1), b2 = static_cast<Scalar>(config_.beta2);
    const Scalar step_size = static_cast<Scalar>(config_.learning_rate / bc1);
    const Scalar inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    const Scalar eps = static_cast<Scalar>(config_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      if (!p->trainable) continue;
      auto& [m, v] = moments_[i];
      const Matrix<Scalar> g = p->grad * static_cast<Scalar>(clip);
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
      p->value.array() -= step_size * m.array() / (v.array().sqrt() * inv_sqrt_bc2 + eps);
    }
    return true;
  }

 private:
  struct Moments {
    Matrix<Scalar> m, v;
  };
  AdamConfig config_;
  std::vector<Moments> moments_;
  long t_ = 0;
  std::vector<std::string> incidents_;
};

}  // namespace busuq::nn
