#pragma once

#include <cstddef>

namespace gatelab::kernels {

// c[n x m] = a[n x k] * b[k x m], c overwritten.
// Serial reference, textbook loop order. Kept as the oracle for the OpenMP
// kernel and for the benchmark target.
void matmul_ref(const double* a, const double* b, double* c, int n, int k, int m);

// Same contract, ikj loop order with OpenMP over rows. Each output element
// accumulates over p in the same ascending order as matmul_ref and each row
// is owned by exactly one thread, so results are bit-identical to the
// reference regardless of thread count.
void matmul_omp(const double* a, const double* b, double* c, int n, int k, int m);

// c += a * b, ikj order, OpenMP over rows.
void matmul_acc_omp(const double* a, const double* b, double* c, int n, int k, int m);

}  // namespace gatelab::kernels
