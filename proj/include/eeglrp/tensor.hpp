#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace eeglrp {

/// Error raised on shape/dimension mismatches.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Error raised on invalid caller-supplied values (bad bands, empty inputs, ...).
struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Error raised on invalid configuration.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Error raised when an operation is called in the wrong order.
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Error raised on file I/O and container-format problems.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense n-dimensional array of 64-bit floats, row-major.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<double> values);

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  double& at(int i) { return data_[static_cast<size_t>(i)]; }
  double& at(int i, int j) { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  double& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double at(int i) const { return data_[static_cast<size_t>(i)]; }
  double at(int i, int j) const { return data_[static_cast<size_t>(i) * dim(1) + j]; }
  double at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  /// Same data, new shape; element count must match.
  Tensor reshaped(std::vector<int> shape) const;

  bool all_finite() const;

  std::string shape_str() const;

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

/// a += b (shapes must match).
void add_into(Tensor& a, const Tensor& b);

std::string shape_to_string(const std::vector<int>& shape);
int64_t shape_numel(const std::vector<int>& shape);

}  // namespace eeglrp
