#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace dydiff {

// Non-owning row-major views. Kernels and models take these so callers can
// pass either owned matrices or slices of flat parameter buffers.
struct ConstMatrixRef {
  const double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::span<const double> row(std::size_t r) const { return {data + r * cols, cols}; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> flat() const { return {data, rows * cols}; }
};

struct MatrixRef {
  double* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::span<double> row(std::size_t r) const { return {data + r * cols, cols}; }
  double& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<double> flat() const { return {data, rows * cols}; }
  operator ConstMatrixRef() const { return {data, rows, cols}; }
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);
  explicit Matrix(ConstMatrixRef ref);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  const std::vector<double>& storage() const { return data_; }

  MatrixRef view() { return {data_.data(), rows_, cols_}; }
  ConstMatrixRef view() const { return {data_.data(), rows_, cols_}; }
  operator ConstMatrixRef() const { return view(); }

  void fill(double v);
  // Appends a row; cols must match (or matrix must be empty).
  void push_row(std::span<const double> values);

  bool operator==(const Matrix& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Column-wise concatenation [a | b]; row counts must match.
Matrix hconcat(ConstMatrixRef a, ConstMatrixRef b);

// Rows [begin, begin+count) copied out.
Matrix take_rows(ConstMatrixRef m, std::span<const std::size_t> indices);

bool all_finite(std::span<const double> values);

}  // namespace dydiff
