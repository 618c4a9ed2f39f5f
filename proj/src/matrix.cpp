#include "dydiff/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "dydiff/error.hpp"

namespace dydiff {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix::Matrix(ConstMatrixRef ref)
    : rows_(ref.rows), cols_(ref.cols), data_(ref.data, ref.data + ref.rows * ref.cols) {}

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::push_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) throw DimensionError("Matrix::push_row: width mismatch");
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

Matrix hconcat(ConstMatrixRef a, ConstMatrixRef b) {
  if (a.rows != b.rows) throw DimensionError("hconcat: row count mismatch");
  Matrix out(a.rows, a.cols + b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    auto dst = out.row(r);
    std::copy_n(a.row(r).begin(), a.cols, dst.begin());
    std::copy_n(b.row(r).begin(), b.cols, dst.begin() + a.cols);
  }
  return out;
}

Matrix take_rows(ConstMatrixRef m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto src = m.row(indices[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

}  // namespace dydiff
