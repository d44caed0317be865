#pragma once

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "busuq/nn/tape.hpp"

namespace busuq::nn {

// Owns parameters with stable addresses so tapes may point at them.
template <typename Scalar>
class ParameterStore {
 public:
  Parameter<Scalar>& add(const std::string& name, Matrix<Scalar> value, bool trainable = true) {
    for (const auto& p : params_)
      if (p->name == name) throw InputError("duplicate parameter '" + name + "'");
    params_.push_back(std::make_unique<Parameter<Scalar>>(name, std::move(value), trainable));
    return *params_.back();
  }

  Parameter<Scalar>& at(const std::string& name) {
    for (auto& p : params_)
      if (p->name == name) return *p;
    throw InputError("no parameter named '" + name + "'");
  }
  const Parameter<Scalar>& at(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->at(name);
  }

  std::vector<Parameter<Scalar>*> all() {
    std::vector<Parameter<Scalar>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }
  std::vector<const Parameter<Scalar>*> all() const {
    std::vector<const Parameter<Scalar>*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::size_t size() const { return params_.size(); }
  Index element_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::vector<Matrix<Scalar>> snapshot() const {
    std::vector<Matrix<Scalar>> out;
    for (const auto& p : params_) out.push_back(p->value);
    return out;
  }
  void restore(const std::vector<Matrix<Scalar>>& values) {
    require(values.size() == params_.size(), "snapshot does not match parameter store");
    for (std::size_t i = 0; i < values.size(); ++i) params_[i]->value = values[i];
  }

 private:
  std::vector<std::unique_ptr<Parameter<Scalar>>> params_;
};

template <typename Scalar>
Matrix<Scalar> glorot_uniform(Index rows, Index cols, Index fan_in, Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(u(rng));
  return m;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> affine(Var<Scalar> x, Var<Scalar> weight, Var<Scalar> bias, const std::string& layer = "affine") {
  return add_bias(matmul(x, weight, layer), bias, layer);
}

template <typename Scalar>
Var<Scalar> conv1d(Var<Scalar> x, Var<Scalar> kernel, Var<Scalar> bias, Index positions,
                   const std::string& layer = "conv1d") {
  return add_bias(conv1d_same(x, kernel, positions, layer), bias, layer);
}

template <typename Scalar>
struct LstmState {
  Var<Scalar> h, c;
};

// One set of LSTM weights bound to a tape. `kernel_width == 0` means dense
// input/state transforms; otherwise both are 1-D "same" convolutions over
// `positions` links.
template <typename Scalar>
struct LstmWeights {
  Var<Scalar> input_weights, state_weights, bias;
  Index hidden = 0;
  Index kernel_width = 0;
  Index positions = 1;
};

template <typename Scalar>
LstmState<Scalar> lstm_step(Var<Scalar> x, const LstmState<Scalar>& prev, const LstmWeights<Scalar>& w,
                            const std::string& layer = "lstm") {
  Var<Scalar> zx, zh;
  if (w.kernel_width > 0) {
    zx = conv1d_same(x, w.input_weights, w.positions, layer + ".input_conv");
    zh = conv1d_same(prev.h, w.state_weights, w.positions, layer + ".state_conv");
  } else {
    zx = matmul(x, w.input_weights, layer + ".input");
    zh = matmul(prev.h, w.state_weights, layer + ".state");
  }
  auto gates = add_bias(add(zx, zh, layer), w.bias, layer);
  auto hc = lstm_pointwise(gates, prev.c, layer);
  return {slice_cols(hc, 0, w.hidden, layer), slice_cols(hc, w.hidden, w.hidden, layer)};
}

// Shapes of one LSTM cell's parameters.
struct LstmShape {
  Index input_size = 1;
  Index hidden = 8;
  Index kernel_width = 0;  // 0: dense

  Index input_rows() const { return kernel_width > 0 ? kernel_width * input_size : input_size; }
  Index state_rows() const { return kernel_width > 0 ? kernel_width * hidden : hidden; }
};

template <typename Scalar>
struct LstmCellParams {
  LstmShape shape;
  Parameter<Scalar>* input_weights = nullptr;
  Parameter<Scalar>* state_weights = nullptr;
  Parameter<Scalar>* bias = nullptr;

  static LstmCellParams create(ParameterStore<Scalar>& store, const std::string& prefix, const LstmShape& shape,
                               Rng& rng) {
    LstmCellParams p;
    p.shape = shape;
    const Index g = 4 * shape.hidden;
    p.input_weights = &store.add(prefix + ".input_weights",
                                 glorot_uniform<Scalar>(shape.input_rows(), g, shape.input_rows(), g, rng));
    p.state_weights = &store.add(prefix + ".state_weights",
                                 glorot_uniform<Scalar>(shape.state_rows(), g, shape.state_rows(), g, rng));
    Matrix<Scalar> b = Matrix<Scalar>::Zero(1, g);
    b.middleCols(shape.hidden, shape.hidden).setOnes();  // forget gate
    p.bias = &store.add(prefix + ".bias", std::move(b));
    return p;
  }

  LstmWeights<Scalar> bind(Tape<Scalar>& tape, Index positions = 1) const {
    return {tape.parameter(*input_weights), tape.parameter(*state_weights), tape.parameter(*bias), shape.hidden,
            shape.kernel_width, positions};
  }
};

template <typename Scalar>
struct AffineParams {
  Parameter<Scalar>* weight = nullptr;
  Parameter<Scalar>* bias = nullptr;

  static AffineParams create(ParameterStore<Scalar>& store, const std::string& prefix, Index in, Index out,
                             Rng& rng) {
    AffineParams p;
    p.weight = &store.add(prefix + ".weight", glorot_uniform<Scalar>(in, out, in, out, rng));
    p.bias = &store.add(prefix + ".bias", Matrix<Scalar>::Zero(1, out));
    return p;
  }
};

template <typename Scalar>
struct Conv1dParams {
  Index width = 1;
  Parameter<Scalar>* kernel = nullptr;
  Parameter<Scalar>* bias = nullptr;

  static Conv1dParams create(ParameterStore<Scalar>& store, const std::string& prefix, Index width, Index in,
                             Index out, Rng& rng) {
    if (width % 2 != 1) throw InputError(prefix + ": kernel width must be odd");
    Conv1dParams p;
    p.width = width;
    p.kernel = &store.add(prefix + ".kernel", glorot_uniform<Scalar>(width * in, out, width * in, out, rng));
    p.bias = &store.add(prefix + ".bias", Matrix<Scalar>::Zero(1, out));
    return p;
  }
};

}  // namespace busuq::nn
