#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include <omp.h>

#include "rta/kernels.hpp"
#include "rta/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_one(void (*fn)(const double*, const double*, double*, int, int,
                           int),
                const double* a, const double* b, double* c, int m, int k,
                int n, int reps) {
  fn(a, b, c, m, k, n);  // warm-up
  const auto t0 = Clock::now();
  for (int r = 0; r < reps; ++r) fn(a, b, c, m, k, n);
  const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  return secs / reps;
}

struct Kernel {
  const char* name;
  void (*parallel)(const double*, const double*, double*, int, int, int);
  void (*serial)(const double*, const double*, double*, int, int, int);
};

}  // namespace

int main() {
  const Kernel kernels[] = {
      {"matmul", rta::kernels::matmul, rta::kernels::matmul_serial},
      {"matmul_nt", rta::kernels::matmul_nt, rta::kernels::matmul_nt_serial},
      {"matmul_tn", rta::kernels::matmul_tn, rta::kernels::matmul_tn_serial},
  };
  const int sizes[] = {64, 128, 256, 512};

  std::printf("threads=%d\n", omp_get_max_threads());
  std::printf("%-10s %6s %12s %12s %8s %9s\n", "kernel", "size", "serial_ms",
              "parallel_ms", "speedup", "bitwise");
  rta::Rng rng(0);
  for (const Kernel& kn : kernels) {
    for (int s : sizes) {
      const std::size_t elems = static_cast<std::size_t>(s) * s;
      std::vector<double> a(elems), b(elems), c1(elems), c2(elems);
      for (double& v : a) v = rng.gaussian();
      for (double& v : b) v = rng.gaussian();
      const int reps = s <= 128 ? 20 : 5;
      const double ts = time_one(kn.serial, a.data(), b.data(), c1.data(), s,
                                 s, s, reps);
      const double tp = time_one(kn.parallel, a.data(), b.data(), c2.data(),
                                 s, s, s, reps);
      const bool same =
          std::memcmp(c1.data(), c2.data(), elems * sizeof(double)) == 0;
      std::printf("%-10s %6d %12.3f %12.3f %8.2fx %9s\n", kn.name, s,
                  ts * 1e3, tp * 1e3, ts / tp, same ? "yes" : "NO");
    }
  }
  return 0;
}
