#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "busuq/nn/tensor.hpp"

namespace busuq::nn {

template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(Matrix<Scalar>::Zero(value.rows(), value.cols())),
        trainable(train) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

// Handle to a node recorded on a tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Matrix<Scalar>& value() const { return tape->value(id); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar scalar() const { return value()(0, 0); }
};

// Records layer applications in execution order; backward() walks them in
// reverse and accumulates into the bound parameters' gradient slots.
template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using BackwardFn = std::function<void(Tape&, int self)>;

  Var<Scalar> push(Mat value, BackwardFn backward = {}) {
    nodes_.push_back(Node{std::move(value), Mat{}, std::move(backward), nullptr});
    consumed_ = false;
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<Scalar> constant(Mat value) { return push(std::move(value)); }

  Var<Scalar> parameter(Parameter<Scalar>& p) {
    auto v = push(p.value);
    nodes_.back().parameter = &p;
    return v;
  }

  const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }

  // Gradient slot of node `id`, zero-initialised on first access.
  Mat& grad(int id) {
    auto& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad.size() != 0; }

  void backward(Var<Scalar> loss) {
    if (nodes_.empty() || consumed_) throw InputError("backward called before forward");
    if (loss.tape != this) throw InputError("backward: loss belongs to another tape");
    if (loss.rows() != 1 || loss.cols() != 1) throw InputError("backward: loss must be a scalar");
    grad(loss.id).setOnes();
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[static_cast<std::size_t>(i)];
      if (n.grad.size() == 0) continue;
      if (n.backward) n.backward(*this, i);
    }
    for (auto& n : nodes_) {
      if (n.parameter && n.parameter->trainable && n.grad.size() != 0) {
        if (n.parameter->grad.size() == 0) n.parameter->zero_grad();
        n.parameter->grad += n.grad;
      }
    }
    consumed_ = true;
  }

  void clear() {
    nodes_.clear();
    consumed_ = false;
  }
  std::size_t size() const { return nodes_.size(); }

  // Parameters bound to leaves of the current recording, in binding order.
  std::vector<const Parameter<Scalar>*> bound_parameters() const {
    std::vector<const Parameter<Scalar>*> out;
    for (const auto& n : nodes_)
      if (n.parameter) out.push_back(n.parameter);
    return out;
  }

 private:
  struct Node {
    Mat value;
    Mat grad;
    BackwardFn backward;
    Parameter<Scalar>* parameter;
  };
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {

inline void check(bool ok, const std::string& layer, const std::string& what) {
  if (!ok) throw InputError(layer + ": " + what);
}

inline std::string dims(Index r, Index c) { return std::to_string(r) + "x" + std::to_string(c); }

template <typename Scalar>
void check_same(const Var<Scalar>& a, const Var<Scalar>& b, const std::string& layer) {
  check(a.rows() == b.rows() && a.cols() == b.cols(), layer,
        "shape mismatch " + dims(a.rows(), a.cols()) + " vs " + dims(b.rows(), b.cols()));
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return x >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-x)) : std::exp(x) / (Scalar(1) + std::exp(x));
}

template <typename Scalar>
Scalar softplus(Scalar x) {
  return x > Scalar(20) ? x : std::log1p(std::exp(x));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear ops

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b, const std::string& layer = "matmul") {
  detail::check(a.cols() == b.rows(), layer,
                "inner dimensions differ " + detail::dims(a.rows(), a.cols()) + " * " +
                    detail::dims(b.rows(), b.cols()));
  Matrix<Scalar> out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const int ia = a.id, ib = b.id;
  return a.tape->push(std::move(out), [ia, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    t.grad(ia).noalias() += g * t.value(ib).transpose();
    t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b, const std::string& layer = "add") {
  detail::check_same(a, b, layer);
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() + b.value(), [ia, ib](Tape<Scalar>& t, int self) {
    t.grad(ia) += t.grad(self);
    t.grad(ib) += t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b, const std::string& layer = "sub") {
  detail::check_same(a, b, layer);
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value() - b.value(), [ia, ib](Tape<Scalar>& t, int self) {
    t.grad(ia) += t.grad(self);
    t.grad(ib) -= t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> hadamard(Var<Scalar> a, Var<Scalar> b, const std::string& layer = "hadamard") {
  detail::check_same(a, b, layer);
  const int ia = a.id, ib = b.id;
  return a.tape->push(a.value().cwiseProduct(b.value()), [ia, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    t.grad(ia) += g.cwiseProduct(t.value(ib));
    t.grad(ib) += g.cwiseProduct(t.value(ia));
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar s) {
  const int ia = a.id;
  return a.tape->push(a.value() * s, [ia, s](Tape<Scalar>& t, int self) { t.grad(ia) += t.grad(self) * s; });
}

// Adds a 1xC row to every row of `a`.
template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> a, Var<Scalar> bias, const std::string& layer = "bias") {
  detail::check(bias.rows() == 1 && bias.cols() == a.cols(), layer,
                "bias " + detail::dims(bias.rows(), bias.cols()) + " does not match " +
                    detail::dims(a.rows(), a.cols()));
  const int ia = a.id, ib = bias.id;
  Matrix<Scalar> out = a.value().rowwise() + bias.value().row(0);
  return a.tape->push(std::move(out), [ia, ib](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    t.grad(ia) += g;
    t.grad(ib) += g.colwise().sum();
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> a) {
  const int ia = a.id;
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return detail::sigmoid(x); });
  return a.tape->push(std::move(out), [ia](Tape<Scalar>& t, int self) {
    const auto& y = t.value(self);
    t.grad(ia) += t.grad(self).cwiseProduct(y.cwiseProduct((Scalar(1) - y.array()).matrix()));
  });
}

template <typename Scalar>
Var<Scalar> tanh(Var<Scalar> a) {
  const int ia = a.id;
  Matrix<Scalar> out = a.value().array().tanh().matrix();
  return a.tape->push(std::move(out), [ia](Tape<Scalar>& t, int self) {
    const auto& y = t.value(self);
    t.grad(ia) += t.grad(self).cwiseProduct((Scalar(1) - y.array().square()).matrix());
  });
}

template <typename Scalar>
Var<Scalar> softplus(Var<Scalar> a) {
  const int ia = a.id;
  Matrix<Scalar> out = a.value().unaryExpr([](Scalar x) { return detail::softplus(x); });
  return a.tape->push(std::move(out), [ia](Tape<Scalar>& t, int self) {
    const auto s = t.value(ia).unaryExpr([](Scalar x) { return detail::sigmoid(x); });
    t.grad(ia) += t.grad(self).cwiseProduct(s);
  });
}

template <typename Scalar>
Var<Scalar> square(Var<Scalar> a) {
  const int ia = a.id;
  return a.tape->push(a.value().array().square().matrix(), [ia](Tape<Scalar>& t, int self) {
    t.grad(ia) += Scalar(2) * t.grad(self).cwiseProduct(t.value(ia));
  });
}

// Sum of all entries (accumulated in double) as a 1x1 node.
template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  const int ia = a.id;
  Matrix<Scalar> out(1, 1);
  out(0, 0) = static_cast<Scalar>(a.value().template cast<double>().sum());
  return a.tape->push(std::move(out), [ia](Tape<Scalar>& t, int self) {
    t.grad(ia).array() += t.grad(self)(0, 0);
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index start, Index count, const std::string& layer = "slice") {
  detail::check(start >= 0 && count >= 0 && start + count <= a.cols(), layer, "column slice out of range");
  const int ia = a.id;
  Matrix<Scalar> out = a.value().middleCols(start, count);
  return a.tape->push(std::move(out), [ia, start, count](Tape<Scalar>& t, int self) {
    t.grad(ia).middleCols(start, count) += t.grad(self);
  });
}

template <typename Scalar>
Var<Scalar> concat_cols(const std::vector<Var<Scalar>>& parts, const std::string& layer = "concat") {
  detail::check(!parts.empty(), layer, "nothing to concatenate");
  Index cols = 0;
  for (const auto& p : parts) {
    detail::check(p.rows() == parts[0].rows(), layer, "row counts differ");
    cols += p.cols();
  }
  Matrix<Scalar> out(parts[0].rows(), cols);
  std::vector<std::pair<int, Index>> spans;
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id, at);
    at += p.cols();
  }
  return parts[0].tape->push(std::move(out), [spans](Tape<Scalar>& t, int self) {
    for (const auto& [id, offset] : spans) {
      const Index c = t.value(id).cols();
      t.grad(id) += t.grad(self).middleCols(offset, c);
    }
  });
}

// Inverted dropout; keep-mask drawn from `rng`. p == 0 is the identity.
template <typename Scalar>
Var<Scalar> dropout(Var<Scalar> a, double p, Rng& rng, const std::string& layer = "dropout") {
  detail::check(p >= 0.0 && p < 1.0, layer, "dropout probability must lie in [0,1)");
  if (p == 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  const Scalar scale_kept = static_cast<Scalar>(1.0 / (1.0 - p));
  Matrix<Scalar> mask(a.rows(), a.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale_kept : Scalar(0);
  const int ia = a.id;
  Matrix<Scalar> out = a.value().cwiseProduct(mask);
  return a.tape->push(std::move(out), [ia, mask = std::move(mask)](Tape<Scalar>& t, int self) {
    t.grad(ia) += t.grad(self).cwiseProduct(mask);
  });
}

// ---------------------------------------------------------------------------
// 1-D convolution over the spatial (link) axis with "same" zero padding.
//
// `x` stacks samples: row r = sample * positions + position, columns are
// input channels. `kernel` is (width * in_channels) x out_channels with the
// row block [j*C, (j+1)*C) applied to position p + j - width/2.

namespace detail {

template <typename Scalar>
Matrix<Scalar> im2col(const Matrix<Scalar>& x, Index positions, Index width) {
  const Index channels = x.cols();
  const Index samples = x.rows() / positions;
  const Index half = width / 2;
  Matrix<Scalar> cols = Matrix<Scalar>::Zero(x.rows(), width * channels);
  for (Index s = 0; s < samples; ++s) {
    for (Index j = 0; j < width; ++j) {
      const Index shift = j - half;
      const Index lo = std::max<Index>(0, -shift);
      const Index hi = std::min<Index>(positions, positions - shift);
      if (hi <= lo) continue;
      cols.block(s * positions + lo, j * channels, hi - lo, channels) =
          x.block(s * positions + lo + shift, 0, hi - lo, channels);
    }
  }
  return cols;
}

template <typename Scalar>
void col2im_add(const Matrix<Scalar>& dcols, Index positions, Index width, Matrix<Scalar>& dx) {
  const Index channels = dx.cols();
  const Index samples = dx.rows() / positions;
  const Index half = width / 2;
  for (Index s = 0; s < samples; ++s) {
    for (Index j = 0; j < width; ++j) {
      const Index shift = j - half;
      const Index lo = std::max<Index>(0, -shift);
      const Index hi = std::min<Index>(positions, positions - shift);
      if (hi <= lo) continue;
      dx.block(s * positions + lo + shift, 0, hi - lo, channels) +=
          dcols.block(s * positions + lo, j * channels, hi - lo, channels);
    }
  }
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> conv1d_same(Var<Scalar> x, Var<Scalar> kernel, Index positions, const std::string& layer = "conv1d") {
  const Index channels = x.cols();
  detail::check(positions > 0 && x.rows() % positions == 0, layer,
                "input rows " + std::to_string(x.rows()) + " are not a multiple of " + std::to_string(positions) +
                    " positions");
  detail::check(channels > 0 && kernel.rows() % channels == 0, layer,
                "kernel rows " + std::to_string(kernel.rows()) + " do not match " + std::to_string(channels) +
                    " input channels");
  const Index width = kernel.rows() / channels;
  detail::check(width % 2 == 1, layer, "kernel width must be odd for symmetric same padding");
  Matrix<Scalar> out(x.rows(), kernel.cols());
  {
    const Matrix<Scalar> cols = detail::im2col(x.value(), positions, width);
    out.noalias() = cols * kernel.value();
  }
  const int ix = x.id, ik = kernel.id;
  // im2col is recomputed in backward to keep the tape small.
  return x.tape->push(std::move(out), [ix, ik, positions, width](Tape<Scalar>& t, int self) {
    const auto& g = t.grad(self);
    const Matrix<Scalar> cols = detail::im2col(t.value(ix), positions, width);
    t.grad(ik).noalias() += cols.transpose() * g;
    Matrix<Scalar> dcols(g.rows(), cols.cols());
    dcols.noalias() = g * t.value(ik).transpose();
    detail::col2im_add(dcols, positions, width, t.grad(ix));
  });
}

// ---------------------------------------------------------------------------
// LSTM cell non-linearity. `gates` holds pre-activations [i | f | g | o]
// (R x 4H); returns [h | c] (R x 2H).

template <typename Scalar>
Var<Scalar> lstm_pointwise(Var<Scalar> gates, Var<Scalar> c_prev, const std::string& layer = "lstm") {
  const Index H = c_prev.cols();
  detail::check(gates.cols() == 4 * H && gates.rows() == c_prev.rows(), layer,
                "gate block " + detail::dims(gates.rows(), gates.cols()) + " does not match state " +
                    detail::dims(c_prev.rows(), c_prev.cols()));
  const auto& z = gates.value();
  const Index R = z.rows();
  Matrix<Scalar> act(R, 4 * H);
  act.leftCols(H) = z.leftCols(H).unaryExpr([](Scalar v) { return detail::sigmoid(v); });
  act.middleCols(H, H) = z.middleCols(H, H).unaryExpr([](Scalar v) { return detail::sigmoid(v); });
  act.middleCols(2 * H, H) = z.middleCols(2 * H, H).array().tanh().matrix();
  act.rightCols(H) = z.rightCols(H).unaryExpr([](Scalar v) { return detail::sigmoid(v); });
  Matrix<Scalar> out(R, 2 * H);
  auto c = out.rightCols(H);
  c = act.middleCols(H, H).cwiseProduct(c_prev.value()) + act.leftCols(H).cwiseProduct(act.middleCols(2 * H, H));
  Matrix<Scalar> tanh_c = c.array().tanh().matrix();
  out.leftCols(H) = act.rightCols(H).cwiseProduct(tanh_c);
  const int ig = gates.id, ic = c_prev.id;
  return gates.tape->push(
      std::move(out), [ig, ic, H, act = std::move(act), tanh_c = std::move(tanh_c)](Tape<Scalar>& t, int self) {
        const auto& g = t.grad(self);
        const auto dh = g.leftCols(H);
        const auto i = act.leftCols(H).array();
        const auto f = act.middleCols(H, H).array();
        const auto gg = act.middleCols(2 * H, H).array();
        const auto o = act.rightCols(H).array();
        const auto tc = tanh_c.array();
        const Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic> dc =
            g.rightCols(H).array() + dh.array() * o * (Scalar(1) - tc.square());
        auto& dz = t.grad(ig);
        dz.leftCols(H).array() += dc * gg * i * (Scalar(1) - i);
        dz.middleCols(H, H).array() += dc * t.value(ic).array() * f * (Scalar(1) - f);
        dz.middleCols(2 * H, H).array() += dc * i * (Scalar(1) - gg.square());
        dz.rightCols(H).array() += dh.array() * tc * o * (Scalar(1) - o);
        t.grad(ic).array() += dc * f;
      });
}

}  // namespace busuq::nn
