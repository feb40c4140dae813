#pragma once

#include <cstddef>

// Numeric kernels underneath the tensor ops. Every kernel has a serial
// reference implementation and an OpenMP one; the OpenMP versions parallelize
// only over independent output elements, so both paths produce bitwise
// identical results regardless of thread count. Selection is per-thread.

namespace rsmoe::kernels {

enum class Mode { serial, parallel };

Mode mode();
void set_mode(Mode m);

// C[m,n] += A[m,k] * B[k,n]
void mm_nn(const double* a, const double* b, double* c, int m, int k, int n);
// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n);
// C[m,n] += A[k,m]^T * B[k,n]
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n);

// groups independent softmax lanes: lane g starts at x + g*group_stride and
// has `size` elements spaced `elem_stride` apart. Stabilized by max
// subtraction; output lanes sum to 1.
void softmax_lanes(const double* x, double* y, int groups, int size,
                   int group_stride, int elem_stride);
// dx += y * (dy - sum(y*dy)) per lane
void softmax_backward_lanes(const double* y, const double* dy, double* dx, int groups,
                            int size, int group_stride, int elem_stride);

// per-row normalization over the last dimension; saves mean and rstd per row
void layer_norm_rows(const double* x, const double* gamma, const double* beta, double* y,
                     double* mean, double* rstd, int rows, int cols, double eps);
void layer_norm_backward_rows(const double* x, const double* gamma, const double* dy,
                              const double* mean, const double* rstd, double* dx,
                              double* dgamma, double* dbeta, int rows, int cols);

void add(const double* a, const double* b, double* y, int n);
void mul(const double* a, const double* b, double* y, int n);
void axpy(double alpha, const double* x, double* y, int n);  // y += alpha*x
void scale(const double* x, double alpha, double* y, int n);

double gelu_value(double x);
double gelu_slope(double x);
void gelu(const double* x, double* y, int n);
void gelu_backward(const double* x, const double* dy, double* dx, int n);

}  // namespace rsmoe::kernels
