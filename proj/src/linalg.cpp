#include "fedsim/linalg.hpp"

#include <cstring>

namespace fedsim::linalg {

// Kernels are blocked by four rows/columns so each loaded row of the
// second operand feeds four accumulator streams. Accumulation order is
// fixed, so results are bit-reproducible run to run.

void gemm(const double* a, const double* b, double* c, int m, int k, int n) {
  std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  gemm_acc(a, b, c, m, k, n);
}

void gemm_acc(const double* a, const double* b, double* c, int m, int k,
              int n) {
  int i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + static_cast<size_t>(i) * k;
    const double* a1 = a0 + k;
    const double* a2 = a1 + k;
    const double* a3 = a2 + k;
    double* c0 = c + static_cast<size_t>(i) * n;
    double* c1 = c0 + n;
    double* c2 = c1 + n;
    double* c3 = c2 + n;
    for (int p = 0; p < k; ++p) {
      const double* brow = b + static_cast<size_t>(p) * n;
      const double v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
      for (int j = 0; j < n; ++j) {
        const double bv = brow[j];
        c0[j] += v0 * bv;
        c1[j] += v1 * bv;
        c2[j] += v2 * bv;
        c3[j] += v3 * bv;
      }
    }
  }
  for (; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_at_b(const double* a, const double* b, double* c, int m, int k,
               int n) {
  std::memset(c, 0, sizeof(double) * static_cast<size_t>(m) * n);
  int p = 0;
  for (; p + 4 <= k; p += 4) {
    const double* a0 = a + static_cast<size_t>(p) * m;
    const double* a1 = a0 + m;
    const double* a2 = a1 + m;
    const double* a3 = a2 + m;
    const double* b0 = b + static_cast<size_t>(p) * n;
    const double* b1 = b0 + n;
    const double* b2 = b1 + n;
    const double* b3 = b2 + n;
    for (int i = 0; i < m; ++i) {
      const double v0 = a0[i], v1 = a1[i], v2 = a2[i], v3 = a3[i];
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        crow[j] += v0 * b0[j] + v1 * b1[j] + v2 * b2[j] + v3 * b3[j];
      }
    }
  }
  for (; p < k; ++p) {
    const double* arow = a + static_cast<size_t>(p) * m;
    const double* brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      double* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_a_bt_acc(const double* a, const double* b, double* c, int m, int k,
                   int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<size_t>(i) * k;
    double* crow = c + static_cast<size_t>(i) * n;
    int j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + static_cast<size_t>(j) * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
      for (int p = 0; p < k; ++p) {
        const double av = arow[p];
        s0 += av * b0[p];
        s1 += av * b1[p];
        s2 += av * b2[p];
        s3 += av * b3[p];
      }
      crow[j] += s0;
      crow[j + 1] += s1;
      crow[j + 2] += s2;
      crow[j + 3] += s3;
    }
    for (; j < n; ++j) {
      const double* brow = b + static_cast<size_t>(j) * k;
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

}  // namespace fedsim::linalg
