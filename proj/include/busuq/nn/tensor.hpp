#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "busuq/common.hpp"

namespace busuq::nn {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Dense row-major N-d array. Storage is contiguous so slices along the first
// axis can be viewed as Eigen maps.
template <typename Scalar>
struct Tensor {
  std::vector<Index> shape;
  Vector<Scalar> data;
  std::optional<Vector<Scalar>> grad;

  Tensor() = default;
  explicit Tensor(std::vector<Index> dims, Scalar fill = Scalar(0))
      : shape(std::move(dims)), data(Vector<Scalar>::Constant(element_count(shape), fill)) {}

  static Index element_count(const std::vector<Index>& dims) {
    return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>{});
  }

  Index size() const { return data.size(); }
  Index dim(std::size_t axis) const { return shape.at(axis); }
  std::size_t rank() const { return shape.size(); }

  Scalar& operator()(Index i, Index j, Index k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  Scalar operator()(Index i, Index j, Index k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  Scalar& operator()(Index i, Index j) { return data[i * shape[1] + j]; }
  Scalar operator()(Index i, Index j) const { return data[i * shape[1] + j]; }

  // Sample `i` of a rank-3 tensor as a (dim1 x dim2) row-major matrix view.
  Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> slab(
      Index i) const {
    const Index stride = shape[1] * shape[2];
    return {data.data() + i * stride, shape[1], shape[2]};
  }

  bool all_finite() const { return data.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out;
    out.shape = shape;
    out.data = data.template cast<Other>();
    return out;
  }
};

inline std::string shape_string(const std::vector<Index>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace busuq::nn
