#pragma once

#include <cstdint>

namespace strata {

// Deterministic reductions with a fixed 8-lane stripe order. The result
// depends only on the element values, never on buffer alignment or SIMD
// dispatch, so sums are bit-stable across heap layouts and process runs.
// The fixed-count inner loops vectorize to per-lane SIMD adds, which are
// bit-identical to the scalar stripes.

template <class T>
inline T det_sum(const T* x, int64_t n) {
  T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) lane[l] += x[i + l];
  for (int l = 0; i < n; ++i, ++l) lane[l] += x[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
         ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

template <class T>
inline T det_dot(const T* x, const T* y, int64_t n) {
  T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) lane[l] += x[i + l] * y[i + l];
  for (int l = 0; i < n; ++i, ++l) lane[l] += x[i] * y[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
         ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

// Deterministic row-major GEMM: C[m,n] = det_dot(A row m, B column n). Each
// output element's bits depend only on the row/column contents and K — never
// on M, N, batching, buffer addresses, or SIMD dispatch — so results for
// shared rows are identical across different sequence lengths and batch
// packings. `bt` is caller-provided scratch of size N*K holding B transposed
// (pack once per distinct B).
template <class T>
inline void det_gemm_packb(const T* b, int64_t K, int64_t N, T* bt) {
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < K; ++k) bt[n * K + k] = b[k * N + n];
}

template <class T>
inline void det_gemm(const T* a, const T* bt, T* c, int64_t M, int64_t K, int64_t N) {
  for (int64_t m = 0; m < M; ++m) {
    const T* ar = a + m * K;
    T* cr = c + m * N;
    for (int64_t n = 0; n < N; ++n) cr[n] = det_dot(ar, bt + n * K, K);
  }
}

// Sum of squared deviations from a given center (two-pass variance helper).
template <class T>
inline T det_sumsq(const T* x, int64_t n, T mu) {
  T lane[8] = {T(0), T(0), T(0), T(0), T(0), T(0), T(0), T(0)};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) {
      T d = x[i + l] - mu;
      lane[l] += d * d;
    }
  for (int l = 0; i < n; ++i, ++l) {
    T d = x[i] - mu;
    lane[l] += d * d;
  }
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) +
         ((lane[4] + lane[5]) + (lane[6] + lane[7]));
}

}  // namespace strata
