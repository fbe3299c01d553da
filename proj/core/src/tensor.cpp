#include "semflow/tensor.hpp"

#include <cmath>
#include <string>

namespace semflow {

Tensor::Tensor(std::vector<std::size_t> shape, double fill) : shape_(std::move(shape)) {
  std::size_t n = 1;
  for (std::size_t d : shape_) n *= d;
  data_.assign(n, fill);
}

Tensor Tensor::scalar(double v) {
  Tensor t(std::vector<std::size_t>{});
  t.data_.assign(1, v);
  return t;
}

void Tensor::fill(double v) { data_.assign(data_.size(), v); }

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) {
    std::string msg(what);
    msg += ": shape mismatch (";
    for (std::size_t d : a.shape()) msg += std::to_string(d) + " ";
    msg += "vs ";
    for (std::size_t d : b.shape()) msg += std::to_string(d) + " ";
    msg += ")";
    throw ShapeError(msg);
  }
}

}  // namespace semflow
