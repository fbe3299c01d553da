#ifndef SEMFLOW_TENSOR_HPP
#define SEMFLOW_TENSOR_HPP

#include <cstddef>
#include <vector>

#include "semflow/errors.hpp"

namespace semflow {

/// Dense row-major array of doubles with an explicit shape. The last
/// dimension varies fastest. No broadcasting: operations on two tensors
/// require identical shapes unless documented otherwise.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  static Tensor scalar(double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at2(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  double at2(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  double& at3(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double at3(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  double& at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  double at4(std::size_t i, std::size_t j, std::size_t k, std::size_t l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool is_scalar() const { return data_.size() == 1; }

  void fill(double v);
  bool all_finite() const;

  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Throws ShapeError mentioning `what` unless the two shapes match.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace semflow

#endif  // SEMFLOW_TENSOR_HPP
