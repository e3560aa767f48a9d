#pragma once

// Dense row-major tensor of 64-bit floats. Rank 0 (empty shape) holds one
// scalar; rank 1 and 2 cover everything the library needs.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace igrad {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Rank-2 accessors; rows()/cols() also accept rank 1 as a single row.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  bool all_finite() const;
  bool binary() const;  // every entry exactly 0.0 or 1.0
  bool all_zero() const;

  // Value of a single-element tensor.
  double item() const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

std::size_t shape_size(std::span<const std::size_t> shape);
std::string shape_str(std::span<const std::size_t> shape);

}  // namespace igrad
