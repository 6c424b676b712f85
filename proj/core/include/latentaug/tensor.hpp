#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace latentaug {

// Dense row-major tensor of doubles. Rank 0 (empty shape) is a scalar with
// one element. All numeric state that flows through graphs, optimizers and
// checkpoints uses this type; image datasets store float32 and convert on
// the way in.
using Shape = std::vector<int>;

int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor full(Shape shape, double value);

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Element access for the common ranks; no bounds checks beyond debug
  // asserts, callers index within the declared shape.
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * shape_[1] + j]; }
  double& at(int n, int c, int y, int x) {
    return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at(int n, int c, int y, int x) const {
    return data_[((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double value);

  // Scalar convenience: requires numel() == 1.
  double item() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Same data under a new shape; element counts must match.
Tensor reshaped(const Tensor& t, Shape shape);

}  // namespace latentaug
