#pragma once

namespace fedsim::linalg {

// Row-major f64 matrix kernels with a fixed accumulation order, so results
// are bit-reproducible run to run. Shapes in comments are [rows, cols].

// C[m,n]  = A[m,k] * B[k,n]
void gemm(const double* a, const double* b, double* c, int m, int k, int n);

// C[m,n] += A[m,k] * B[k,n]
void gemm_acc(const double* a, const double* b, double* c, int m, int k,
              int n);

// C[m,n]  = A[k,m]^T * B[k,n]
void gemm_at_b(const double* a, const double* b, double* c, int m, int k,
               int n);

// C[m,n] += A[m,k] * B[n,k]^T
void gemm_a_bt_acc(const double* a, const double* b, double* c, int m, int k,
                   int n);

}  // namespace fedsim::linalg
