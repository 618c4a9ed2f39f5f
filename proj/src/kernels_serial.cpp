#include "dydiff/kernels.hpp"

namespace dydiff::kernels::serial {

void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> b, MatrixRef y) {
  for (std::size_t r = 0; r < x.rows; ++r) {
    for (std::size_t o = 0; o < w.rows; ++o) {
      double acc = b[o];
      for (std::size_t i = 0; i < w.cols; ++i) acc += x(r, i) * w(o, i);
      y(r, o) = acc;
    }
  }
}

void affine_backward_input(ConstMatrixRef dy, ConstMatrixRef w, MatrixRef dx) {
  for (std::size_t r = 0; r < dy.rows; ++r) {
    for (std::size_t i = 0; i < w.cols; ++i) {
      double acc = 0.0;
      for (std::size_t o = 0; o < w.rows; ++o) acc += dy(r, o) * w(o, i);
      dx(r, i) = acc;
    }
  }
}

void affine_backward_params(ConstMatrixRef dy, ConstMatrixRef x, MatrixRef dw, std::span<double> db) {
  for (std::size_t o = 0; o < dw.rows; ++o) {
    for (std::size_t i = 0; i < dw.cols; ++i) {
      double acc = dw(o, i);
      for (std::size_t r = 0; r < dy.rows; ++r) acc += dy(r, o) * x(r, i);
      dw(o, i) = acc;
    }
    double acc = db[o];
    for (std::size_t r = 0; r < dy.rows; ++r) acc += dy(r, o);
    db[o] = acc;
  }
}

}  // namespace dydiff::kernels::serial
