#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace metadiffub {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles. Most arithmetic treats rank-2 arrays as
/// matrices; rank 0 and rank 1 arrays are viewed as a single row.
class NDArray {
 public:
  NDArray() = default;
  explicit NDArray(Shape shape, double fill = 0.0);
  NDArray(Shape shape, std::vector<double> data);

  static NDArray matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  static NDArray matrix(std::initializer_list<std::initializer_list<double>> rows);
  static NDArray scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const;
  std::size_t cols() const;

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  std::span<double> row(std::size_t r);
  std::span<const double> row(std::size_t r) const;

  double item() const;
  bool all_finite() const;
  bool same_shape(const NDArray& other) const { return shape_ == other.shape_; }

  bool operator==(const NDArray& other) const = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

NDArray matmul(const NDArray& a, const NDArray& b);

/// Numerically stable softmax along `axis` (max-subtracted).
NDArray softmax(const NDArray& v, int axis);

}  // namespace metadiffub
