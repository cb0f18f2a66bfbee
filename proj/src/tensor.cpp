#include "eeglrp/tensor.hpp"

#include <cmath>
#include <sstream>

namespace eeglrp {

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeError("value count " + std::to_string(data_.size()) +
                     " does not match shape " + shape_to_string(shape_));
}

Tensor Tensor::full(std::vector<int> shape, double v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
  if (shape_numel(shape) != numel())
    throw ShapeError("cannot reshape " + shape_str() + " to " + shape_to_string(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

void add_into(Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    throw ShapeError("add_into shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  double* pa = a.data();
  const double* pb = b.data();
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) pa[i] += pb[i];
}

}  // namespace eeglrp
