// Copyright 2026 The GMRL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GMRL_TENSOR_HPP_
#define GMRL_TENSOR_HPP_

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace gmrl {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered list of extents. Rank 0 denotes a scalar with one element.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 5;

  Shape() = default;
  Shape(std::initializer_list<Index> dims) : Shape(std::vector<Index>(dims)) {}
  explicit Shape(std::vector<Index> dims) : dims_(std::move(dims)) {
    if (dims_.size() > kMaxRank) {
      throw ShapeError("shape " + str() + " exceeds maximum rank " + std::to_string(kMaxRank));
    }
    for (Index d : dims_) {
      if (d < 1) throw ShapeError("shape " + str() + " has a non-positive extent");
    }
  }

  std::size_t rank() const { return dims_.size(); }
  Index operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<Index>& dims() const { return dims_; }

  Index numel() const {
    Index n = 1;
    for (Index d : dims_) n *= d;
    return n;
  }

  /// Row-major strides.
  std::vector<Index> strides() const {
    std::vector<Index> s(dims_.size(), 1);
    for (std::size_t i = dims_.size(); i-- > 1;) s[i - 1] = s[i] * dims_[i];
    return s;
  }

  std::string str() const {
    std::string out = "(";
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(dims_[i]);
    }
    return out + ")";
  }

  friend bool operator==(const Shape& a, const Shape& b) { return a.dims_ == b.dims_; }

 private:
  std::vector<Index> dims_;
};

/// Dense row-major tensor over a flat Eigen array.
template <typename Scalar>
class TensorT {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  TensorT() : data_(Storage::Zero(1)) {}
  explicit TensorT(Shape shape) : shape_(std::move(shape)), data_(Storage::Zero(shape_.numel())) {}
  TensorT(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }
  TensorT(Shape shape, std::initializer_list<Scalar> values) : TensorT(std::move(shape)) {
    if (static_cast<Index>(values.size()) != data_.size()) {
      throw ShapeError("initializer has " + std::to_string(values.size()) +
                       " values for shape " + shape_.str());
    }
    Index i = 0;
    for (Scalar v : values) data_[i++] = v;
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT constant(Shape shape, Scalar value) {
    TensorT t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }
  static TensorT scalar(Scalar value) {
    TensorT t;
    t.data_[0] = value;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index size() const { return data_.size(); }
  Index dim(std::size_t axis) const { return shape_[axis]; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  std::span<Scalar> span() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> span() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  Index offset(std::initializer_list<Index> index) const {
    if (index.size() != shape_.rank()) {
      throw ShapeError("index of rank " + std::to_string(index.size()) + " into shape " +
                       shape_.str());
    }
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : index) {
      if (i < 0 || i >= shape_[axis]) throw ShapeError("index out of range for " + shape_.str());
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }
  Scalar& at(std::initializer_list<Index> index) { return data_[offset(index)]; }
  Scalar at(std::initializer_list<Index> index) const { return data_[offset(index)]; }

  Scalar item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_.str());
    return data_[0];
  }

  TensorT reshaped(Shape shape) const {
    if (shape.numel() != shape_.numel()) {
      throw ShapeError("cannot reshape " + shape_.str() + " to " + shape.str());
    }
    return TensorT(std::move(shape), data_);
  }

  /// View as a row-major matrix; rows * cols must equal size().
  Eigen::Map<RowMatrix<Scalar>> matrix(Index rows, Index cols) {
    if (rows * cols != size()) throw ShapeError("matrix view does not cover " + shape_.str());
    return {data_.data(), rows, cols};
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix(Index rows, Index cols) const {
    if (rows * cols != size()) throw ShapeError("matrix view does not cover " + shape_.str());
    return {data_.data(), rows, cols};
  }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape shape_;
  Storage data_;
};

using Tensor = TensorT<double>;

}  // namespace gmrl

#endif  // GMRL_TENSOR_HPP_
