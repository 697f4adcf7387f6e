#pragma once

#include <cstddef>

namespace rta::kernels {

// Dense row-major matmul kernels. Each has an OpenMP variant (rows are
// partitioned across threads, no floating-point reductions cross thread
// boundaries, so results are bitwise identical to the serial variant for
// any thread count) and a serial reference kept for testing and benchmarks.

// c[m,n] = a[m,k] * b[k,n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_serial(const double* a, const double* b, double* c, int m, int k,
                   int n);

// c[m,n] = a[m,k] * b[n,k]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n);
void matmul_nt_serial(const double* a, const double* b, double* c, int m,
                      int k, int n);

// c[k,n] = a[m,k]^T * b[m,n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n);
void matmul_tn_serial(const double* a, const double* b, double* c, int m,
                      int k, int n);

// y[n] = A[m,n]^T row gather helpers are not needed; vector ops below.
void add_inplace(double* a, const double* b, std::size_t n);
void scale_inplace(double* a, double s, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);

// Minimum row count before the OpenMP variants bother spawning a team;
// tiny matrices run the serial path inside the parallel wrappers.
inline constexpr int kParallelRowThreshold = 64;

}  // namespace rta::kernels
