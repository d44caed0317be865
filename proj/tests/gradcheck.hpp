#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "busuq/nn/layers.hpp"

namespace testing {

using busuq::nn::Matrix;
using busuq::nn::ParameterStore;
using busuq::nn::Tape;
using busuq::nn::Var;

using LossBuilder = std::function<Var<double>(Tape<double>&)>;

// Largest elementwise relative error between backprop and central
// differences over every trainable parameter in `store`. Magnitudes below
// `floor` are compared absolutely. With `coordinates > 0` only that many
// randomly chosen entries (drawn from `seed`) are perturbed.
inline double max_gradient_error(ParameterStore<double>& store, const LossBuilder& build, double h = 1e-4,
                                 double floor = 1e-3, std::size_t coordinates = 0, std::uint64_t seed = 0) {
  store.zero_grad();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  std::vector<std::pair<busuq::nn::Parameter<double>*, Eigen::Index>> entries;
  for (auto* p : store.all()) {
    if (!p->trainable) continue;
    for (Eigen::Index i = 0; i < p->value.size(); ++i) entries.emplace_back(p, i);
  }
  if (coordinates > 0 && coordinates < entries.size()) {
    busuq::Rng rng(seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(coordinates);
  }
  double worst = 0.0;
  for (auto [p, i] : entries) {
    const double saved = p->value.data()[i];
    p->value.data()[i] = saved + h;
    Tape<double> up;
    const double f_up = build(up).scalar();
    p->value.data()[i] = saved - h;
    Tape<double> down;
    const double f_down = build(down).scalar();
    p->value.data()[i] = saved;
    const double numeric = (f_up - f_down) / (2.0 * h);
    const double analytic = p->grad.data()[i];
    const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
    worst = std::max(worst, std::abs(numeric - analytic) / denom);
  }
  return worst;
}

inline Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, busuq::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace testing
