#include "latentaug/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "latentaug/error.hpp"

namespace latentaug {

int64_t numel_of(const Shape& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) fail("tensor shape has non-positive dimension ", d, " in ", shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(numel_of(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check(static_cast<int64_t>(data_.size()) == numel_of(shape_), "tensor data size ", data_.size(),
        " does not match shape ", shape_str(shape_));
}

Tensor Tensor::scalar(double value) {
  Tensor t{Shape{}};
  t.data_[0] = value;
  return t;
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t{std::move(shape)};
  t.fill(value);
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::fill(double value) { data_.assign(data_.size(), value); }

double Tensor::item() const {
  check(numel() == 1, "item() requires a single-element tensor, got shape ", shape_str(shape_));
  return data_[0];
}

}  // namespace latentaug

namespace latentaug {

Tensor reshaped(const Tensor& t, Shape shape) {
  check(numel_of(shape) == t.numel(), "reshaped: cannot view ", shape_str(t.shape()), " as ",
        shape_str(shape));
  Tensor out(std::move(shape));
  std::copy(t.data(), t.data() + t.numel(), out.data());
  return out;
}

}  // namespace latentaug
