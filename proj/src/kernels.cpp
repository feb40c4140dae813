#include "rsmoe/kernels.hpp"

#include <cmath>

namespace rsmoe::kernels {

namespace {
thread_local Mode g_mode = Mode::parallel;
}

Mode mode() { return g_mode; }
void set_mode(Mode m) { g_mode = m; }

namespace serial {

void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + (size_t)i * n;
        const double* ai = a + (size_t)i * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + (size_t)p * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + (size_t)i * k;
        double* ci = c + (size_t)i * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + (size_t)j * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        double* ci = c + (size_t)i * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[(size_t)p * m + i];
            const double* bp = b + (size_t)p * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

inline void softmax_one(const double* x, double* y, int size, int stride) {
    double mx = x[0];
    for (int i = 1; i < size; ++i) mx = std::max(mx, x[(size_t)i * stride]);
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double e = std::exp(x[(size_t)i * stride] - mx);
        y[(size_t)i * stride] = e;
        sum += e;
    }
    const double inv = 1.0 / sum;
    for (int i = 0; i < size; ++i) y[(size_t)i * stride] *= inv;
}

void softmax_lanes(const double* x, double* y, int groups, int size, int gs, int es) {
    for (int g = 0; g < groups; ++g)
        softmax_one(x + (size_t)g * gs, y + (size_t)g * gs, size, es);
}

inline void softmax_bwd_one(const double* y, const double* dy, double* dx, int size, int stride) {
    double dot = 0.0;
    for (int i = 0; i < size; ++i) dot += y[(size_t)i * stride] * dy[(size_t)i * stride];
    for (int i = 0; i < size; ++i) {
        const size_t o = (size_t)i * stride;
        dx[o] += y[o] * (dy[o] - dot);
    }
}

void softmax_backward_lanes(const double* y, const double* dy, double* dx, int groups, int size,
                            int gs, int es) {
    for (int g = 0; g < groups; ++g)
        softmax_bwd_one(y + (size_t)g * gs, dy + (size_t)g * gs, dx + (size_t)g * gs, size, es);
}

inline void ln_row(const double* x, const double* gamma, const double* beta, double* y,
                   double* mean, double* rstd, int cols, double eps) {
    double mu = 0.0;
    for (int j = 0; j < cols; ++j) mu += x[j];
    mu /= cols;
    double var = 0.0;
    for (int j = 0; j < cols; ++j) {
        const double d = x[j] - mu;
        var += d * d;
    }
    var /= cols;
    const double rs = 1.0 / std::sqrt(var + eps);
    *mean = mu;
    *rstd = rs;
    for (int j = 0; j < cols; ++j) y[j] = gamma[j] * ((x[j] - mu) * rs) + beta[j];
}

void layer_norm_rows(const double* x, const double* gamma, const double* beta, double* y,
                     double* mean, double* rstd, int rows, int cols, double eps) {
    for (int i = 0; i < rows; ++i)
        ln_row(x + (size_t)i * cols, gamma, beta, y + (size_t)i * cols, mean + i, rstd + i, cols,
               eps);
}

inline void ln_bwd_row(const double* x, const double* gamma, const double* dy, double mu,
                       double rs, double* dx, int cols) {
    // dx = rs * (g*dy - mean(g*dy) - xhat * mean(g*dy*xhat))
    double m1 = 0.0, m2 = 0.0;
    for (int j = 0; j < cols; ++j) {
        const double xh = (x[j] - mu) * rs;
        const double gd = gamma[j] * dy[j];
        m1 += gd;
        m2 += gd * xh;
    }
    m1 /= cols;
    m2 /= cols;
    for (int j = 0; j < cols; ++j) {
        const double xh = (x[j] - mu) * rs;
        dx[j] += rs * (gamma[j] * dy[j] - m1 - xh * m2);
    }
}

void layer_norm_backward_rows(const double* x, const double* gamma, const double* dy,
                              const double* mean, const double* rstd, double* dx, double* dgamma,
                              double* dbeta, int rows, int cols) {
    if (dx)
        for (int i = 0; i < rows; ++i)
            ln_bwd_row(x + (size_t)i * cols, gamma, dy + (size_t)i * cols, mean[i], rstd[i],
                       dx + (size_t)i * cols, cols);
    // dgamma/dbeta are column reductions over rows; loop over columns so the
    // summation order per output element is fixed.
    if (dgamma)
        for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < rows; ++i) {
                const size_t o = (size_t)i * cols + j;
                acc += dy[o] * ((x[o] - mean[i]) * rstd[i]);
            }
            dgamma[j] += acc;
        }
    if (dbeta)
        for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < rows; ++i) acc += dy[(size_t)i * cols + j];
            dbeta[j] += acc;
        }
}

void add(const double* a, const double* b, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
void mul(const double* a, const double* b, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy(double alpha, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void scale(const double* x, double alpha, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = x[i] * alpha;
}

void gelu(const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] = gelu_value(x[i]);
}
void gelu_backward(const double* x, const double* dy, double* dx, int n) {
    for (int i = 0; i < n; ++i) dx[i] += dy[i] * gelu_slope(x[i]);
}

}  // namespace serial

namespace omp {

void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* ci = c + (size_t)i * n;
        const double* ai = a + (size_t)i * k;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + (size_t)p * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        const double* ai = a + (size_t)i * k;
        double* ci = c + (size_t)i * n;
        for (int j = 0; j < n; ++j) {
            const double* bj = b + (size_t)j * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += ai[p] * bj[p];
            ci[j] += acc;
        }
    }
}

void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < m; ++i) {
        double* ci = c + (size_t)i * n;
        for (int p = 0; p < k; ++p) {
            const double av = a[(size_t)p * m + i];
            const double* bp = b + (size_t)p * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void softmax_lanes(const double* x, double* y, int groups, int size, int gs, int es) {
#pragma omp parallel for schedule(static)
    for (int g = 0; g < groups; ++g)
        serial::softmax_one(x + (size_t)g * gs, y + (size_t)g * gs, size, es);
}

void softmax_backward_lanes(const double* y, const double* dy, double* dx, int groups, int size,
                            int gs, int es) {
#pragma omp parallel for schedule(static)
    for (int g = 0; g < groups; ++g)
        serial::softmax_bwd_one(y + (size_t)g * gs, dy + (size_t)g * gs, dx + (size_t)g * gs,
                                size, es);
}

void layer_norm_rows(const double* x, const double* gamma, const double* beta, double* y,
                     double* mean, double* rstd, int rows, int cols, double eps) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i)
        serial::ln_row(x + (size_t)i * cols, gamma, beta, y + (size_t)i * cols, mean + i,
                       rstd + i, cols, eps);
}

void layer_norm_backward_rows(const double* x, const double* gamma, const double* dy,
                              const double* mean, const double* rstd, double* dx, double* dgamma,
                              double* dbeta, int rows, int cols) {
    if (dx) {
#pragma omp parallel for schedule(static)
        for (int i = 0; i < rows; ++i)
            serial::ln_bwd_row(x + (size_t)i * cols, gamma, dy + (size_t)i * cols, mean[i],
                               rstd[i], dx + (size_t)i * cols, cols);
    }
    if (dgamma) {
#pragma omp parallel for schedule(static)
        for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < rows; ++i) {
                const size_t o = (size_t)i * cols + j;
                acc += dy[o] * ((x[o] - mean[i]) * rstd[i]);
            }
            dgamma[j] += acc;
        }
    }
    if (dbeta) {
#pragma omp parallel for schedule(static)
        for (int j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int i = 0; i < rows; ++i) acc += dy[(size_t)i * cols + j];
            dbeta[j] += acc;
        }
    }
}

void add(const double* a, const double* b, double* y, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) y[i] = a[i] + b[i];
}
void mul(const double* a, const double* b, double* y, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) y[i] = a[i] * b[i];
}
void axpy(double alpha, const double* x, double* y, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}
void scale(const double* x, double alpha, double* y, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) y[i] = x[i] * alpha;
}
void gelu(const double* x, double* y, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) y[i] = gelu_value(x[i]);
}
void gelu_backward(const double* x, const double* dy, double* dx, int n) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) dx[i] += dy[i] * gelu_slope(x[i]);
}

}  // namespace omp

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

double gelu_slope(double x) {
    const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
    return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

#define RSMOE_DISPATCH(fn, ...) \
    if (g_mode == Mode::parallel) \
        omp::fn(__VA_ARGS__);    \
    else                         \
        serial::fn(__VA_ARGS__)

void mm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    RSMOE_DISPATCH(mm_nn, a, b, c, m, k, n);
}
void mm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    RSMOE_DISPATCH(mm_nt, a, b, c, m, k, n);
}
void mm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    RSMOE_DISPATCH(mm_tn, a, b, c, m, k, n);
}
void softmax_lanes(const double* x, double* y, int groups, int size, int gs, int es) {
    RSMOE_DISPATCH(softmax_lanes, x, y, groups, size, gs, es);
}
void softmax_backward_lanes(const double* y, const double* dy, double* dx, int groups, int size,
                            int gs, int es) {
    RSMOE_DISPATCH(softmax_backward_lanes, y, dy, dx, groups, size, gs, es);
}
void layer_norm_rows(const double* x, const double* gamma, const double* beta, double* y,
                     double* mean, double* rstd, int rows, int cols, double eps) {
    RSMOE_DISPATCH(layer_norm_rows, x, gamma, beta, y, mean, rstd, rows, cols, eps);
}
void layer_norm_backward_rows(const double* x, const double* gamma, const double* dy,
                              const double* mean, const double* rstd, double* dx, double* dgamma,
                              double* dbeta, int rows, int cols) {
    RSMOE_DISPATCH(layer_norm_backward_rows, x, gamma, dy, mean, rstd, dx, dgamma, dbeta, rows,
                   cols);
}
void add(const double* a, const double* b, double* y, int n) { RSMOE_DISPATCH(add, a, b, y, n); }
void mul(const double* a, const double* b, double* y, int n) { RSMOE_DISPATCH(mul, a, b, y, n); }
void axpy(double alpha, const double* x, double* y, int n) { RSMOE_DISPATCH(axpy, alpha, x, y, n); }
void scale(const double* x, double alpha, double* y, int n) { RSMOE_DISPATCH(scale, x, alpha, y, n); }
void gelu(const double* x, double* y, int n) { RSMOE_DISPATCH(gelu, x, y, n); }
void gelu_backward(const double* x, const double* dy, double* dx, int n) {
    RSMOE_DISPATCH(gelu_backward, x, dy, dx, n);
}

#undef RSMOE_DISPATCH

}  // namespace rsmoe::kernels
