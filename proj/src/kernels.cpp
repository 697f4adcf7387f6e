#include "rta/kernels.hpp"

#include <omp.h>

namespace rta::kernels {

namespace {

// Row range [r0, r1) of c = a * b.
inline void matmul_rows(const double* a, const double* b, double* c, int r0,
                        int r1, int k, int n) {
  for (int i = r0; i < r1; ++i) {
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) ci[j] = 0.0;
    const double* ai = a + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

inline void matmul_nt_rows(const double* a, const double* b, double* c, int r0,
                           int r1, int k, int n) {
  for (int i = r0; i < r1; ++i) {
    const double* ai = a + static_cast<std::size_t>(i) * k;
    double* ci = c + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* bj = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
}

}  // namespace

void matmul_serial(const double* a, const double* b, double* c, int m, int k,
                   int n) {
  matmul_rows(a, b, c, 0, m, k, n);
}

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (m < kParallelRowThreshold || omp_in_parallel()) {
    matmul_rows(a, b, c, 0, m, k, n);
    return;
  }
#pragma omp parallel
  {
    const int nt = omp_get_num_threads();
    const int t = omp_get_thread_num();
    const int r0 = static_cast<int>(static_cast<long>(m) * t / nt);
    const int r1 = static_cast<int>(static_cast<long>(m) * (t + 1) / nt);
    matmul_rows(a, b, c, r0, r1, k, n);
  }
}

void matmul_nt_serial(const double* a, const double* b, double* c, int m,
                      int k, int n) {
  matmul_nt_rows(a, b, c, 0, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n) {
  if (m < kParallelRowThreshold || omp_in_parallel()) {
    matmul_nt_rows(a, b, c, 0, m, k, n);
    return;
  }
#pragma omp parallel
  {
    const int nt = omp_get_num_threads();
    const int t = omp_get_thread_num();
    const int r0 = static_cast<int>(static_cast<long>(m) * t / nt);
    const int r1 = static_cast<int>(static_cast<long>(m) * (t + 1) / nt);
    matmul_nt_rows(a, b, c, r0, r1, k, n);
  }
}

namespace {

inline void tn_rows(const double* a, const double* b, double* c, int r0,
                    int r1, int m, int k, int n) {
  for (int p = r0; p < r1; ++p) {
    double* cp = c + static_cast<std::size_t>(p) * n;
    for (int j = 0; j < n; ++j) cp[j] = 0.0;
    for (int i = 0; i < m; ++i) {
      const double aip = a[static_cast<std::size_t>(i) * k + p];
      const double* bi = b + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
}

}  // namespace

void matmul_tn_serial(const double* a, const double* b, double* c, int m,
                      int k, int n) {
  tn_rows(a, b, c, 0, k, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n) {
  if (k < kParallelRowThreshold || omp_in_parallel()) {
    tn_rows(a, b, c, 0, k, m, k, n);
    return;
  }
#pragma omp parallel
  {
    const int nt = omp_get_num_threads();
    const int t = omp_get_thread_num();
    const int r0 = static_cast<int>(static_cast<long>(k) * t / nt);
    const int r1 = static_cast<int>(static_cast<long>(k) * (t + 1) / nt);
    tn_rows(a, b, c, r0, r1, m, k, n);
  }
}

void add_inplace(double* a, const double* b, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) a[i] += b[i];
}

void scale_inplace(double* a, double s, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) a[i] *= s;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

}  // namespace rta::kernels
