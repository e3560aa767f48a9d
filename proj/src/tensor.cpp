#include "igrad/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace igrad {

std::size_t shape_size(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(std::span<const std::size_t> shape) {
  if (shape.empty()) return "[]";
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_size(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_size(shape_))
    throw std::invalid_argument("tensor: data size " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  if (rank() == 1) return 1;
  throw std::logic_error("tensor: rows() on shape " + shape_str(shape_));
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  throw std::logic_error("tensor: cols() on shape " + shape_str(shape_));
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

bool Tensor::binary() const {
  for (double v : data_)
    if (v != 0.0 && v != 1.0) return false;
  return true;
}

bool Tensor::all_zero() const {
  for (double v : data_)
    if (v != 0.0) return false;
  return true;
}

double Tensor::item() const {
  if (data_.size() != 1)
    throw std::logic_error("tensor: item() on shape " + shape_str(shape_));
  return data_[0];
}

}  // namespace igrad
