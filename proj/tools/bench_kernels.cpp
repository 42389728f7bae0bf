// Compares the serial reference matmul with the OpenMP kernel and checks the
// results stay bit-identical.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "gatelab/kernels.hpp"
#include "gatelab/rng.hpp"

using namespace gatelab;

namespace {

using Fn = void (*)(const double*, const double*, double*, int, int, int);

double time_once(const double* a, const double* b, double* c, int n, Fn f) {
  auto t0 = std::chrono::steady_clock::now();
  f(a, b, c, n, n, n);
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main() {
  Rng rng(42);
  std::printf("size      ref_ms    omp_ms    speedup   bitwise\n");
  for (int n : {64, 128, 256, 512}) {
    std::vector<double> a(static_cast<std::size_t>(n) * n), b(a.size());
    for (double& x : a) x = rng.normal(0.0, 1.0);
    for (double& x : b) x = rng.normal(0.0, 1.0);
    std::vector<double> c_ref(a.size()), c_omp(a.size());
    double ref = 1e18, omp_t = 1e18;
    for (int rep = 0; rep < 3; ++rep) {
      ref = std::min(ref, time_once(a.data(), b.data(), c_ref.data(), n, kernels::matmul_ref));
      omp_t = std::min(omp_t, time_once(a.data(), b.data(), c_omp.data(), n, kernels::matmul_omp));
    }
    bool same = std::memcmp(c_ref.data(), c_omp.data(), c_ref.size() * sizeof(double)) == 0;
    std::printf("%-8d  %-8.2f  %-8.2f  %-8.2f  %s\n", n, ref * 1e3, omp_t * 1e3, ref / omp_t,
                same ? "yes" : "NO");
    if (!same) return 1;
  }
  return 0;
}
