#include "gatelab/kernels.hpp"

#include <cstring>

namespace gatelab::kernels {

void matmul_ref(const double* a, const double* b, double* c, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < m; ++j) {
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += a[(std::size_t)i * k + p] * b[(std::size_t)p * m + j];
      c[(std::size_t)i * m + j] = s;
    }
  }
}

void matmul_omp(const double* a, const double* b, double* c, int n, int k, int m) {
#pragma omp parallel for schedule(static) if (n > 8 && (std::size_t)n * k * m > 32768)
  for (int i = 0; i < n; ++i) {
    double* ci = c + (std::size_t)i * m;
    for (int j = 0; j < m; ++j) ci[j] = 0.0;
    const double* ai = a + (std::size_t)i * k;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + (std::size_t)p * m;
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

void matmul_acc_omp(const double* a, const double* b, double* c, int n, int k, int m) {
#pragma omp parallel for schedule(static) if (n > 8 && (std::size_t)n * k * m > 32768)
  for (int i = 0; i < n; ++i) {
    double* ci = c + (std::size_t)i * m;
    const double* ai = a + (std::size_t)i * k;
    for (int p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + (std::size_t)p * m;
      for (int j = 0; j < m; ++j) ci[j] += av * bp[j];
    }
  }
}

}  // namespace gatelab::kernels
