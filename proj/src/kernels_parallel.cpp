#include <algorithm>
#include <vector>

#include "dydiff/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dydiff::kernels {

namespace {

// Parallelising tiny problems costs more than it saves.
constexpr std::size_t kMinParallelWork = 1 << 15;

bool worth_parallel(std::size_t work) { return work >= kMinParallelWork; }

constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 16;

// C (R x N) += A (R x K) * B (K x N), with every C element accumulated over k
// in ascending order starting from its existing value. That order is what
// makes the result identical to the serial reference loops.
//
// B is consumed one packed kTileCols-wide column panel at a time, reused across
// all rows in [r0, r1); each kTileRows x kTileCols tile of C stays in
// registers across the k loop.
//
// With BTransposed, `b` holds B^T (N x K) row-major, which is how affine
// weights are stored.
template <bool BTransposed>
void gemm_accumulate_rows(const double* a, const double* b, double* c, std::size_t r0,
                          std::size_t r1, std::size_t k_dim, std::size_t n_dim) {
  auto b_at = [&](std::size_t k, std::size_t n) {
    return BTransposed ? b[n * k_dim + k] : b[k * n_dim + n];
  };
  std::vector<double> panel(k_dim * kTileCols);
  std::size_t n = 0;
  for (; n + kTileCols <= n_dim; n += kTileCols) {
    if constexpr (BTransposed) {
      for (std::size_t j = 0; j < kTileCols; ++j) {
        const double* src = b + (n + j) * k_dim;
        for (std::size_t k = 0; k < k_dim; ++k) panel[k * kTileCols + j] = src[k];
      }
    } else {
      for (std::size_t k = 0; k < k_dim; ++k)
        std::copy_n(b + k * n_dim + n, kTileCols, panel.data() + k * kTileCols);
    }
    std::size_t r = r0;
    for (; r + kTileRows <= r1; r += kTileRows) {
      double acc[kTileRows][kTileCols];
      for (std::size_t i = 0; i < kTileRows; ++i)
        for (std::size_t j = 0; j < kTileCols; ++j) acc[i][j] = c[(r + i) * n_dim + n + j];
      for (std::size_t k = 0; k < k_dim; ++k) {
        const double* brow = panel.data() + k * kTileCols;
        for (std::size_t i = 0; i < kTileRows; ++i) {
          const double av = a[(r + i) * k_dim + k];
#pragma omp simd
          for (std::size_t j = 0; j < kTileCols; ++j) acc[i][j] += av * brow[j];
        }
      }
      for (std::size_t i = 0; i < kTileRows; ++i)
        for (std::size_t j = 0; j < kTileCols; ++j) c[(r + i) * n_dim + n + j] = acc[i][j];
    }
    for (; r < r1; ++r) {
      double acc[kTileCols];
      for (std::size_t j = 0; j < kTileCols; ++j) acc[j] = c[r * n_dim + n + j];
      for (std::size_t k = 0; k < k_dim; ++k) {
        const double av = a[r * k_dim + k];
        const double* brow = panel.data() + k * kTileCols;
#pragma omp simd
        for (std::size_t j = 0; j < kTileCols; ++j) acc[j] += av * brow[j];
      }
      for (std::size_t j = 0; j < kTileCols; ++j) c[r * n_dim + n + j] = acc[j];
    }
  }
  // Remaining columns.
  for (; n < n_dim; ++n) {
    for (std::size_t r = r0; r < r1; ++r) {
      double acc = c[r * n_dim + n];
      for (std::size_t k = 0; k < k_dim; ++k) acc += a[r * k_dim + k] * b_at(k, n);
      c[r * n_dim + n] = acc;
    }
  }
}

template <bool BTransposed>
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t rows,
                     std::size_t k_dim, std::size_t n_dim) {
  const int threads = worth_parallel(rows * k_dim * n_dim) ? max_threads() : 1;
  const std::size_t tiles = (rows + kTileRows - 1) / kTileRows;
  const std::size_t chunks = std::min<std::size_t>(static_cast<std::size_t>(threads), tiles);
  if (chunks <= 1) {
    gemm_accumulate_rows<BTransposed>(a, b, c, 0, rows, k_dim, n_dim);
    return;
  }
  // Contiguous row ranges per thread; the split never changes any element's
  // accumulation order.
#pragma omp parallel for schedule(static)
  for (std::size_t ch = 0; ch < chunks; ++ch) {
    const std::size_t t0 = tiles * ch / chunks;
    const std::size_t t1 = tiles * (ch + 1) / chunks;
    gemm_accumulate_rows<BTransposed>(a, b, c, t0 * kTileRows, std::min(rows, t1 * kTileRows), k_dim, n_dim);
  }
}

std::vector<double> transpose(ConstMatrixRef m) {
  std::vector<double> t(m.rows * m.cols);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) t[c * m.rows + r] = m(r, c);
  return t;
}

}  // namespace

namespace parallel {

void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> b, MatrixRef y) {
  for (std::size_t r = 0; r < x.rows; ++r) std::copy(b.begin(), b.end(), y.row(r).begin());
  gemm_accumulate<true>(x.data, w.data, y.data, x.rows, w.cols, w.rows);
}

void affine_backward_input(ConstMatrixRef dy, ConstMatrixRef w, MatrixRef dx) {
  std::fill_n(dx.data, dx.rows * dx.cols, 0.0);
  gemm_accumulate<false>(dy.data, w.data, dx.data, dy.rows, w.rows, w.cols);
}

void affine_backward_params(ConstMatrixRef dy, ConstMatrixRef x, MatrixRef dw, std::span<double> db) {
  const std::vector<double> dyt = transpose(dy);
  gemm_accumulate<false>(dyt.data(), x.data, dw.data, dw.rows, dy.rows, dw.cols);
  for (std::size_t o = 0; o < dw.rows; ++o) {
    double acc = db[o];
    for (std::size_t r = 0; r < dy.rows; ++r) acc += dyt[o * dy.rows + r];
    db[o] = acc;
  }
}

}  // namespace parallel

void affine_forward(ConstMatrixRef x, ConstMatrixRef w, std::span<const double> b, MatrixRef y) {
#ifdef _OPENMP
  parallel::affine_forward(x, w, b, y);
#else
  serial::affine_forward(x, w, b, y);
#endif
}

void affine_backward_input(ConstMatrixRef dy, ConstMatrixRef w, MatrixRef dx) {
#ifdef _OPENMP
  parallel::affine_backward_input(dy, w, dx);
#else
  serial::affine_backward_input(dy, w, dx);
#endif
}

void affine_backward_params(ConstMatrixRef dy, ConstMatrixRef x, MatrixRef dw, std::span<double> db) {
#ifdef _OPENMP
  parallel::affine_backward_params(dy, x, dw, db);
#else
  serial::affine_backward_params(dy, x, dw, db);
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

}  // namespace dydiff::kernels
