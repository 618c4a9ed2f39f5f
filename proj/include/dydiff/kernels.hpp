#pragma once

#include <span>

#include "dydiff/matrix.hpp"

// Dense affine-layer kernels.
//
// Two implementations of each kernel are kept:
//   serial::   textbook loops, the reference the tests check against;
//   parallel:: OpenMP row-parallel, cache-blocked versions used at runtime.
//
// Both accumulate every output element over the same index in the same
// ascending order, so their results are bit-identical and independent of the
// thread count. Shapes: x (B x in), w (out x in), b (out), y (B x out).
namespace dydiff::kernels {

namespace serial {
// y = x w^T + b
void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> b, MatrixRef y);
// dx = dy w
void affine_backward_input(ConstMatrixRef dy, ConstMatrixRef w, MatrixRef dx);
// dw += dy^T x, db += column sums of dy
void affine_backward_params(ConstMatrixRef dy, ConstMatrixRef x, MatrixRef dw, std::span<double> db);
}  // namespace serial

namespace parallel {
void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> b, MatrixRef y);
void affine_backward_input(ConstMatrixRef dy, ConstMatrixRef w, MatrixRef dx);
void affine_backward_params(ConstMatrixRef dy, ConstMatrixRef x, MatrixRef dw, std::span<double> db);
}  // namespace parallel

// Runtime dispatch: parallel when built with OpenMP, serial otherwise.
void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> b, MatrixRef y);
void affine_backward_input(ConstMatrixRef dy, ConstMatrixRef w, MatrixRef dx);
void affine_backward_params(ConstMatrixRef dy, ConstMatrixRef x, MatrixRef dw, std::span<double> db);

int max_threads();
bool openmp_enabled();

}  // namespace dydiff::kernels
