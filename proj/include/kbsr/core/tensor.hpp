#pragma once

#include <Eigen/Dense>

#include <cassert>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace kbsr {

using Shape = std::vector<Eigen::Index>;

inline Eigen::Index shape_count(const Shape& dims) {
  Eigen::Index n = 1;
  for (Eigen::Index d : dims) {
    if (d < 0) throw std::invalid_argument("tensor dimension must be nonnegative");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& dims) {
  std::string s = "(";
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + ")";
}

/// Dense value-semantic tensor: flat storage plus an explicit shape.
/// Rank-3 tensors are channel-major rasters: index(c,y,x) = (c*h + y)*w + x.
template <class Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape dims) : dims_(std::move(dims)), data_(Array::Zero(shape_count(dims_))) {}
  Tensor(Shape dims, Array values) : dims_(std::move(dims)), data_(std::move(values)) {
    if (data_.size() != shape_count(dims_))
      throw std::invalid_argument("tensor data size does not match shape " + shape_str(dims_));
  }

  static Tensor zeros(Shape dims) { return Tensor(std::move(dims)); }
  static Tensor constant(Shape dims, Scalar v) {
    Tensor t(std::move(dims));
    t.data_.setConstant(v);
    return t;
  }

  const Shape& shape() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  Eigen::Index dim(int i) const { return dims_.at(static_cast<size_t>(i)); }
  Eigen::Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  Scalar& operator[](Eigen::Index i) { return data_[i]; }
  Scalar operator[](Eigen::Index i) const { return data_[i]; }

  /// Rank-3 accessor (channel, row, col).
  Scalar& operator()(Eigen::Index c, Eigen::Index y, Eigen::Index x) {
    assert(rank() == 3);
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }
  Scalar operator()(Eigen::Index c, Eigen::Index y, Eigen::Index x) const {
    assert(rank() == 3);
    return data_[(c * dims_[1] + y) * dims_[2] + x];
  }

  /// Rank-2 accessor (row, col).
  Scalar& operator()(Eigen::Index y, Eigen::Index x) {
    assert(rank() == 2);
    return data_[y * dims_[1] + x];
  }
  Scalar operator()(Eigen::Index y, Eigen::Index x) const {
    assert(rank() == 2);
    return data_[y * dims_[1] + x];
  }

  /// Reinterpret the flat data under a new shape with the same element count.
  Tensor reshaped(Shape dims) const {
    if (shape_count(dims) != data_.size())
      throw std::invalid_argument("reshape " + shape_str(dims_) + " -> " + shape_str(dims) +
                                  " changes element count");
    return Tensor(std::move(dims), data_);
  }

  template <class Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(dims_, data_.template cast<Other>().eval());
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape dims_;
  Array data_;
};

template <class Scalar>
void require_shape(const Tensor<Scalar>& t, const Shape& dims, const char* what) {
  if (t.shape() != dims)
    throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(dims) +
                                ", got " + shape_str(t.shape()));
}

/// Map a rank-3 tensor as an (h*w) x c column-major matrix; column c is plane c.
template <class Scalar>
Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> as_plane_matrix(Tensor<Scalar>& t) {
  return {t.data(), t.dim(1) * t.dim(2), t.dim(0)};
}

template <class Scalar>
Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> as_plane_matrix(
    const Tensor<Scalar>& t) {
  return {t.data(), t.dim(1) * t.dim(2), t.dim(0)};
}

}  // namespace kbsr
