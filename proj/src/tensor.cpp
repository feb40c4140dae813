#include "rsmoe/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "rsmoe/kernels.hpp"

namespace rsmoe {

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) {
        if (d < 0) throw ShapeError("negative dimension in " + shape_str(s));
        n *= (size_t)d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

std::shared_ptr<TensorImpl> make_impl(Shape s, std::vector<double> vals) {
    if (shape_numel(s) != vals.size())
        throw ShapeError("data length " + std::to_string(vals.size()) + " does not match shape " +
                         shape_str(s));
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(s);
    impl->data = std::move(vals);
    return impl;
}

thread_local Graph* g_current_graph = nullptr;
thread_local bool g_grad_enabled = true;

}  // namespace

Tensor Tensor::zeros(Shape s) {
    size_t n = shape_numel(s);
    return from(std::move(s), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(Shape s, double v) {
    size_t n = shape_numel(s);
    return from(std::move(s), std::vector<double>(n, v));
}

Tensor Tensor::from(Shape s, std::vector<double> vals) {
    Tensor t;
    t.impl_ = make_impl(std::move(s), std::move(vals));
    return t;
}

Tensor Tensor::uniform(Shape s, Rng& g, double lo, double hi) {
    size_t n = shape_numel(s);
    std::vector<double> v(n);
    for (auto& x : v) x = rsmoe::uniform(g, lo, hi);
    return from(std::move(s), std::move(v));
}

Tensor Tensor::normal(Shape s, Rng& g, double mean, double stddev) {
    size_t n = shape_numel(s);
    std::vector<double> v(n);
    for (auto& x : v) x = rsmoe::normal(g, mean, stddev);
    return from(std::move(s), std::move(v));
}

const Shape& Tensor::shape() const { return impl_->shape; }
int Tensor::dim(int i) const { return impl_->shape.at(i); }
int Tensor::rows() const { return impl_->shape.at(0); }
int Tensor::cols() const { return impl_->shape.at(1); }
size_t Tensor::numel() const { return impl_->data.size(); }
double* Tensor::data() { return impl_->data.data(); }
const double* Tensor::data() const { return impl_->data.data(); }
std::vector<double>& Tensor::vec() { return impl_->data; }
const std::vector<double>& Tensor::vec() const { return impl_->data; }

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::at(int i) const { return impl_->data.at(i); }

double Tensor::at(int i, int j) const {
    if (impl_->shape.size() != 2) throw ShapeError("at(i,j) on " + shape_str(shape()));
    return impl_->data.at((size_t)i * cols() + j);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
}

bool Tensor::grad_present() const { return impl_ && !impl_->grad.empty(); }

std::vector<double>& Tensor::grad() {
    impl_->ensure_grad();
    return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach_copy() const {
    Tensor t = Tensor::from(impl_->shape, impl_->data);
    return t;
}

Graph::Graph() {
    prev_ = g_current_graph;
    g_current_graph = this;
}

Graph::~Graph() { g_current_graph = prev_; }

Graph* Graph::current() { return g_current_graph; }

void Graph::record(std::shared_ptr<TensorImpl> out, std::function<void()> fn) {
    nodes_.push_back({std::move(out), std::move(fn)});
}

void Graph::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ShapeError("backward expects a scalar loss");
    if (!std::isfinite(loss.item())) throw NumericError("backward on non-finite loss");
    loss.impl()->ensure_grad();
    loss.impl()->grad[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
        if (!it->out->grad.empty()) it->fn();
}

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool grad_enabled() { return g_grad_enabled; }

namespace {

using ImplPtr = std::shared_ptr<TensorImpl>;

// Marks the output grad-requiring and records the closure when a tape is
// active and some input needs gradients.
void finish(Tensor& out, std::initializer_list<const Tensor*> ins, std::function<void()> fn) {
    if (!g_grad_enabled || g_current_graph == nullptr) return;
    bool need = false;
    for (const Tensor* t : ins)
        if (t->defined() && t->requires_grad()) need = true;
    if (!need) return;
    out.set_requires_grad(true);
    g_current_graph->record(out.impl(), std::move(fn));
}

void check_2d(const Tensor& t, const char* who) {
    if (t.shape().size() != 2)
        throw ShapeError(std::string(who) + " expects 2-d input, got " + shape_str(t.shape()));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.cols() != b.rows())
        throw ShapeError("matmul: inner dimensions differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    kernels::mm_nn(a.data(), b.data(), out.data(), m, k, n);
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    finish(out, {&a, &b}, [ai, bi, oi, m, k, n] {
        const double* g = oi->grad.data();
        if (ai->requires_grad) {
            ai->ensure_grad();
            kernels::mm_nt(g, bi->data.data(), ai->grad.data(), m, n, k);  // dA += G * B^T
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            kernels::mm_tn(ai->data.data(), g, bi->grad.data(), k, m, n);  // dB += A^T * G
        }
    });
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("add: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    kernels::add(a.data(), b.data(), out.data(), (int)a.numel());
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    finish(out, {&a, &b}, [ai, bi, oi] {
        const int n = (int)oi->grad.size();
        if (ai->requires_grad) {
            ai->ensure_grad();
            kernels::axpy(1.0, oi->grad.data(), ai->grad.data(), n);
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            kernels::axpy(1.0, oi->grad.data(), bi->grad.data(), n);
        }
    });
    return out;
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
    check_2d(x, "add_rowvec");
    const int r = x.rows(), c = x.cols();
    if ((int)v.numel() != c)
        throw ShapeError("add_rowvec: vector length " + std::to_string(v.numel()) +
                         " vs cols " + std::to_string(c));
    Tensor out = Tensor::zeros(x.shape());
    const double* xd = x.data();
    const double* vd = v.data();
    double* od = out.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) od[(size_t)i * c + j] = xd[(size_t)i * c + j] + vd[j];
    ImplPtr xi = x.impl(), vi = v.impl(), oi = out.impl();
    finish(out, {&x, &v}, [xi, vi, oi, r, c] {
        const double* g = oi->grad.data();
        if (xi->requires_grad) {
            xi->ensure_grad();
            kernels::axpy(1.0, g, xi->grad.data(), r * c);
        }
        if (vi->requires_grad) {
            vi->ensure_grad();
            double* vg = vi->grad.data();
            for (int j = 0; j < c; ++j) {
                double acc = 0.0;
                for (int i = 0; i < r; ++i) acc += g[(size_t)i * c + j];
                vg[j] += acc;
            }
        }
    });
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("mul: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    Tensor out = Tensor::zeros(a.shape());
    kernels::mul(a.data(), b.data(), out.data(), (int)a.numel());
    ImplPtr ai = a.impl(), bi = b.impl(), oi = out.impl();
    finish(out, {&a, &b}, [ai, bi, oi] {
        const int n = (int)oi->grad.size();
        const double* g = oi->grad.data();
        if (ai->requires_grad) {
            ai->ensure_grad();
            for (int i = 0; i < n; ++i) ai->grad[i] += g[i] * bi->data[i];
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            for (int i = 0; i < n; ++i) bi->grad[i] += g[i] * ai->data[i];
        }
    });
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    kernels::scale(x.data(), c, out.data(), (int)x.numel());
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi, c] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        kernels::axpy(c, oi->grad.data(), xi->grad.data(), (int)oi->grad.size());
    });
    return out;
}

Tensor transpose(const Tensor& x) {
    check_2d(x, "transpose");
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({c, r});
    const double* xd = x.data();
    double* od = out.data();
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) od[(size_t)j * r + i] = xd[(size_t)i * c + j];
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi, r, c] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const double* g = oi->grad.data();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) xi->grad[(size_t)i * c + j] += g[(size_t)j * r + i];
    });
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    kernels::gelu(x.data(), out.data(), (int)x.numel());
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        kernels::gelu_backward(xi->data.data(), oi->grad.data(), xi->grad.data(),
                               (int)oi->grad.size());
    });
    return out;
}

namespace {

struct Lanes {
    int groups, size, group_stride, elem_stride;
};

Lanes lanes_for(const Tensor& x, int axis) {
    const auto& s = x.shape();
    if (s.size() == 1) {
        if (axis != 0 && axis != -1) throw ShapeError("softmax: bad axis for 1-d input");
        return {1, s[0], 0, 1};
    }
    if (s.size() != 2) throw ShapeError("softmax: expects 1-d or 2-d input");
    if (axis == -1) axis = 1;
    if (axis == 1) return {s[0], s[1], s[1], 1};
    if (axis == 0) return {s[1], s[0], 1, s[1]};
    throw ShapeError("softmax: axis out of range");
}

}  // namespace

Tensor softmax(const Tensor& x, int axis) {
    Lanes ln = lanes_for(x, axis);
    if (ln.size == 0) throw ShapeError("softmax over empty axis");
    Tensor out = Tensor::zeros(x.shape());
    kernels::softmax_lanes(x.data(), out.data(), ln.groups, ln.size, ln.group_stride,
                           ln.elem_stride);
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi, ln] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        kernels::softmax_backward_lanes(oi->data.data(), oi->grad.data(), xi->grad.data(),
                                        ln.groups, ln.size, ln.group_stride, ln.elem_stride);
    });
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (eps <= 0.0) throw ConfigError("layer_norm: eps must be positive");
    const auto& s = x.shape();
    int rows = 1, cols = 0;
    if (s.size() == 1)
        cols = s[0];
    else if (s.size() == 2) {
        rows = s[0];
        cols = s[1];
    } else
        throw ShapeError("layer_norm: expects 1-d or 2-d input");
    if ((int)gamma.numel() != cols || (int)beta.numel() != cols)
        throw ShapeError("layer_norm: gamma/beta length mismatch with cols " +
                         std::to_string(cols));
    Tensor out = Tensor::zeros(x.shape());
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto rstd = std::make_shared<std::vector<double>>(rows);
    kernels::layer_norm_rows(x.data(), gamma.data(), beta.data(), out.data(), mean->data(),
                             rstd->data(), rows, cols, eps);
    ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
    finish(out, {&x, &gamma, &beta}, [xi, gi, bi, oi, mean, rstd, rows, cols] {
        double* dx = nullptr;
        double* dg = nullptr;
        double* db = nullptr;
        if (xi->requires_grad) {
            xi->ensure_grad();
            dx = xi->grad.data();
        }
        if (gi->requires_grad) {
            gi->ensure_grad();
            dg = gi->grad.data();
        }
        if (bi->requires_grad) {
            bi->ensure_grad();
            db = bi->grad.data();
        }
        kernels::layer_norm_backward_rows(xi->data.data(), gi->data.data(), oi->grad.data(),
                                          mean->data(), rstd->data(), dx, dg, db, rows, cols);
    });
    return out;
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id) {
    check_2d(logits, "cross_entropy");
    const int rows = logits.rows(), vsize = logits.cols();
    if ((int)targets.size() != rows)
        throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(rows) + " logit rows");
    int kept = 0;
    for (int t : targets) {
        if (t == pad_id) continue;
        if (t < 0 || t >= vsize)
            throw InputError("cross_entropy: target id " + std::to_string(t) +
                             " outside vocab of " + std::to_string(vsize));
        ++kept;
    }
    if (kept == 0) throw DataError("cross_entropy: every target position is padding");

    // log-softmax per kept row; probs cached for backward
    auto probs = std::make_shared<std::vector<double>>((size_t)rows * vsize, 0.0);
    const double* ld = logits.data();
    double total = 0.0;
    for (int i = 0; i < rows; ++i) {
        if (targets[i] == pad_id) continue;
        const double* row = ld + (size_t)i * vsize;
        double mx = row[0];
        for (int j = 1; j < vsize; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (int j = 0; j < vsize; ++j) sum += std::exp(row[j] - mx);
        const double lse = mx + std::log(sum);
        for (int j = 0; j < vsize; ++j)
            (*probs)[(size_t)i * vsize + j] = std::exp(row[j] - lse);
        total += lse - row[targets[i]];
    }
    Tensor out = Tensor::from({1}, {total / kept});
    ImplPtr li = logits.impl(), oi = out.impl();
    auto tgts = std::make_shared<std::vector<int>>(targets);
    finish(out, {&logits}, [li, oi, probs, tgts, rows, vsize, pad_id, kept] {
        if (!li->requires_grad) return;
        li->ensure_grad();
        const double g = oi->grad[0] / kept;
        for (int i = 0; i < rows; ++i) {
            const int t = (*tgts)[i];
            if (t == pad_id) continue;
            double* gr = li->grad.data() + (size_t)i * vsize;
            const double* pr = probs->data() + (size_t)i * vsize;
            for (int j = 0; j < vsize; ++j) gr[j] += g * pr[j];
            gr[t] -= g;
        }
    });
    return out;
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
    check_2d(table, "embedding");
    const int v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || id >= v)
            throw InputError("embedding: id " + std::to_string(id) + " outside table of " +
                             std::to_string(v));
    Tensor out = Tensor::zeros({(int)ids.size(), d});
    const double* td = table.data();
    double* od = out.data();
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(od + i * d, td + (size_t)ids[i] * d, sizeof(double) * d);
    if (ids.empty()) return out;
    ImplPtr ti = table.impl(), oi = out.impl();
    auto idc = std::make_shared<std::vector<int>>(ids);
    finish(out, {&table}, [ti, oi, idc, d] {
        if (!ti->requires_grad) return;
        ti->ensure_grad();
        const double* g = oi->grad.data();
        for (size_t i = 0; i < idc->size(); ++i) {
            double* dst = ti->grad.data() + (size_t)(*idc)[i] * d;
            for (int j = 0; j < d; ++j) dst[j] += g[i * d + j];
        }
    });
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat_rows: no inputs");
    int cols = -1, rows = 0;
    for (const auto& x : xs) {
        check_2d(x, "concat_rows");
        if (cols < 0) cols = x.cols();
        if (x.cols() != cols) throw ShapeError("concat_rows: column mismatch");
        rows += x.rows();
    }
    Tensor out = Tensor::zeros({rows, cols});
    double* od = out.data();
    int off = 0;
    for (const auto& x : xs) {
        std::memcpy(od + (size_t)off * cols, x.data(), sizeof(double) * x.numel());
        off += x.rows();
    }
    std::vector<ImplPtr> impls;
    bool need = false;
    for (const auto& x : xs) {
        impls.push_back(x.impl());
        if (x.requires_grad()) need = true;
    }
    if (!need || !grad_enabled() || Graph::current() == nullptr) return out;
    out.set_requires_grad(true);
    ImplPtr oi = out.impl();
    Graph::current()->record(oi, [impls, oi, cols] {
        const double* g = oi->grad.data();
        size_t off = 0;
        for (const auto& im : impls) {
            const size_t n = im->data.size();
            if (im->requires_grad) {
                im->ensure_grad();
                for (size_t i = 0; i < n; ++i) im->grad[i] += g[off + i];
            }
            off += n;
        }
    });
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
    if (xs.empty()) throw ShapeError("concat_cols: no inputs");
    int rows = -1, cols = 0;
    for (const auto& x : xs) {
        check_2d(x, "concat_cols");
        if (rows < 0) rows = x.rows();
        if (x.rows() != rows) throw ShapeError("concat_cols: row mismatch");
        cols += x.cols();
    }
    Tensor out = Tensor::zeros({rows, cols});
    double* od = out.data();
    int off = 0;
    for (const auto& x : xs) {
        const int c = x.cols();
        const double* xd = x.data();
        for (int i = 0; i < rows; ++i)
            std::memcpy(od + (size_t)i * cols + off, xd + (size_t)i * c, sizeof(double) * c);
        off += c;
    }
    std::vector<ImplPtr> impls;
    std::vector<int> widths;
    bool need = false;
    for (const auto& x : xs) {
        impls.push_back(x.impl());
        widths.push_back(x.cols());
        if (x.requires_grad()) need = true;
    }
    if (!need || !grad_enabled() || Graph::current() == nullptr) return out;
    out.set_requires_grad(true);
    ImplPtr oi = out.impl();
    Graph::current()->record(oi, [impls, widths, oi, rows, cols] {
        const double* g = oi->grad.data();
        int off = 0;
        for (size_t k = 0; k < impls.size(); ++k) {
            const int c = widths[k];
            if (impls[k]->requires_grad) {
                impls[k]->ensure_grad();
                for (int i = 0; i < rows; ++i)
                    for (int j = 0; j < c; ++j)
                        impls[k]->grad[(size_t)i * c + j] += g[(size_t)i * cols + off + j];
            }
            off += c;
        }
    });
    return out;
}

Tensor slice_rows(const Tensor& x, int start, int len) {
    check_2d(x, "slice_rows");
    if (start < 0 || len < 0 || start + len > x.rows())
        throw ShapeError("slice_rows: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside " + shape_str(x.shape()));
    const int c = x.cols();
    Tensor out = Tensor::zeros({len, c});
    std::memcpy(out.data(), x.data() + (size_t)start * c, sizeof(double) * (size_t)len * c);
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi, start, len, c] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const double* g = oi->grad.data();
        double* dst = xi->grad.data() + (size_t)start * c;
        for (size_t i = 0; i < (size_t)len * c; ++i) dst[i] += g[i];
    });
    return out;
}

Tensor slice_cols(const Tensor& x, int start, int len) {
    check_2d(x, "slice_cols");
    if (start < 0 || len < 0 || start + len > x.cols())
        throw ShapeError("slice_cols: [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") outside " + shape_str(x.shape()));
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({r, len});
    const double* xd = x.data();
    double* od = out.data();
    for (int i = 0; i < r; ++i)
        std::memcpy(od + (size_t)i * len, xd + (size_t)i * c + start, sizeof(double) * len);
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi, start, len, r, c] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const double* g = oi->grad.data();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < len; ++j)
                xi->grad[(size_t)i * c + start + j] += g[(size_t)i * len + j];
    });
    return out;
}

Tensor mean_rows(const Tensor& x) {
    check_2d(x, "mean_rows");
    const int r = x.rows(), c = x.cols();
    Tensor out = Tensor::zeros({1, c});
    if (r == 0) return out;  // empty-input convention: zero vector, no gradient
    const double* xd = x.data();
    double* od = out.data();
    for (int j = 0; j < c; ++j) {
        double acc = 0.0;
        for (int i = 0; i < r; ++i) acc += xd[(size_t)i * c + j];
        od[j] = acc / r;
    }
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi, r, c] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const double* g = oi->grad.data();
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) xi->grad[(size_t)i * c + j] += g[j] / r;
    });
    return out;
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.vec()) acc += v;
    Tensor out = Tensor::from({1}, {acc});
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        const double g = oi->grad[0];
        for (auto& v : xi->grad) v += g;
    });
    return out;
}

Tensor reshape(const Tensor& x, Shape s) {
    if (shape_numel(s) != x.numel())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(s));
    Tensor out = Tensor::from(std::move(s), x.vec());
    ImplPtr xi = x.impl(), oi = out.impl();
    finish(out, {&x}, [xi, oi] {
        if (!xi->requires_grad) return;
        xi->ensure_grad();
        for (size_t i = 0; i < oi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
    return out;
}

double grad_check_multi(const std::function<Tensor()>& loss_fn, Tensor param,
                        const std::vector<double>& hs) {
    if (!param.requires_grad()) throw ConfigError("grad_check: parameter does not require grad");
    if (hs.empty()) throw ConfigError("grad_check: empty step ladder");
    param.zero_grad();
    std::vector<double> analytic;
    {
        Graph g;
        Tensor loss = loss_fn();
        g.backward(loss);
        analytic = param.grad_present() ? param.impl()->grad
                                        : std::vector<double>(param.numel(), 0.0);
    }
    param.zero_grad();
    NoGradGuard ng;
    auto& x = param.vec();
    double worst = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (const double h : hs) {
            const double keep = x[i];
            x[i] = keep + h;
            const double fp = loss_fn().item();
            x[i] = keep - h;
            const double fm = loss_fn().item();
            x[i] = keep;
            const double numeric = (fp - fm) / (2.0 * h);
            const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
            best = std::min(best, std::fabs(analytic[i] - numeric) / denom);
        }
        worst = std::max(worst, best);
    }
    return worst;
}

double grad_check(const std::function<Tensor()>& loss_fn, Tensor param, double h) {
    return grad_check_multi(loss_fn, param, {h});
}

uint64_t hash_bytes(const void* p, size_t n, uint64_t h) {
    const unsigned char* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t hash_tensor(const Tensor& t) {
    return hash_bytes(t.data(), t.numel() * sizeof(double));
}

}  // namespace rsmoe
