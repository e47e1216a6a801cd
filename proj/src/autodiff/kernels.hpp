#pragma once

#include <cmath>
#include <cstddef>
#include <cstring>

// Dense kernels behind matmul/bmm. Every output element is the same left-to-right
// multiply-add chain over k starting from zero, whatever its row position, so a row's
// result never depends on which other rows share the call.
namespace sta::ad::kernels {

namespace detail {

typedef double v8d __attribute__((vector_size(64)));

inline v8d load(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

inline void store(double* p, v8d v) { std::memcpy(p, &v, sizeof(v)); }

// MR rows x (8*NV) columns held in registers across the whole k loop.
// A element (r, k) sits at a[r * lda + k * ka]; ka = 1 for row-major A, and lda = 1 with
// ka = row length when A is read transposed.
template <int MR, int NV>
inline void block(std::size_t K, const double* a, std::size_t lda, std::size_t ka, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  v8d acc[MR][NV] = {};
  for (std::size_t k = 0; k < K; ++k) {
    v8d bv[NV];
    for (int v = 0; v < NV; ++v) bv[v] = load(b + k * ldb + 8 * v);
    for (int r = 0; r < MR; ++r) {
      const double av = a[static_cast<std::size_t>(r) * lda + k * ka];
      for (int v = 0; v < NV; ++v) acc[r][v] = av * bv[v] + acc[r][v];
    }
  }
  for (int r = 0; r < MR; ++r) {
    double* crow = c + static_cast<std::size_t>(r) * ldc;
    for (int v = 0; v < NV; ++v) {
      if (accumulate) {
        store(crow + 8 * v, load(crow + 8 * v) + acc[r][v]);
      } else {
        store(crow + 8 * v, acc[r][v]);
      }
    }
  }
}

template <int MR>
inline void column(std::size_t K, const double* a, std::size_t lda, std::size_t ka, const double* b,
                   std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  double acc[MR] = {};
  for (std::size_t k = 0; k < K; ++k) {
    const double bv = b[k * ldb];
    // explicit fma: left to contraction, MR = 1 and MR = 4 did not round alike
    for (int r = 0; r < MR; ++r) acc[r] = std::fma(a[static_cast<std::size_t>(r) * lda + k * ka], bv, acc[r]);
  }
  for (int r = 0; r < MR; ++r) {
    double& dst = c[static_cast<std::size_t>(r) * ldc];
    dst = accumulate ? dst + acc[r] : acc[r];
  }
}

template <int MR>
inline void row_block(std::size_t N, std::size_t K, const double* a, std::size_t lda,
                      std::size_t ka, const double* b, double* c, bool accumulate) {
  std::size_t j = 0;
  for (; j + 32 <= N; j += 32) block<MR, 4>(K, a, lda, ka, b + j, N, c + j, N, accumulate);
  for (; j + 16 <= N; j += 16) block<MR, 2>(K, a, lda, ka, b + j, N, c + j, N, accumulate);
  for (; j + 8 <= N; j += 8) block<MR, 1>(K, a, lda, ka, b + j, N, c + j, N, accumulate);
  for (; j < N; ++j) column<MR>(K, a, lda, ka, b + j, N, c + j, N, accumulate);
}

}  // namespace detail

/// C (M x N) = A (M x K) * B (K x N), or C += A * B when accumulate is set.
inline void gemm(std::size_t M, std::size_t N, std::size_t K, const double* a, const double* b,
                 double* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) detail::row_block<4>(N, K, a + i * K, K, 1, b, c + i * N, accumulate);
  for (; i < M; ++i) detail::row_block<1>(N, K, a + i * K, K, 1, b, c + i * N, accumulate);
}

/// C (M x N) = A^T * B with A stored K x M, B stored K x N; C += when accumulate is set.
inline void gemm_tn(std::size_t M, std::size_t N, std::size_t K, const double* a, const double* b,
                    double* c, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= M; i += 4) detail::row_block<4>(N, K, a + i, 1, M, b, c + i * N, accumulate);
  for (; i < M; ++i) detail::row_block<1>(N, K, a + i, 1, M, b, c + i * N, accumulate);
}

/// out (cols x rows) = in (rows x cols) transposed.
inline void transpose(std::size_t rows, std::size_t cols, const double* in, double* out) {
  constexpr std::size_t T = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += T)
    for (std::size_t c0 = 0; c0 < cols; c0 += T) {
      const std::size_t r1 = r0 + T < rows ? r0 + T : rows, c1 = c0 + T < cols ? c0 + T : cols;
      for (std::size_t r = r0; r < r1; ++r)
        for (std::size_t c = c0; c < c1; ++c) out[c * rows + r] = in[r * cols + c];
    }
}

}  // namespace sta::ad::kernels
