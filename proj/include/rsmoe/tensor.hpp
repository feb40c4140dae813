#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "rsmoe/error.hpp"
#include "rsmoe/rng.hpp"

namespace rsmoe {

using Shape = std::vector<int>;

size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty = no gradient accumulated yet
    bool requires_grad = false;

    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

// Shared-buffer handle: copies alias the same storage, detach_copy() clones it.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor from(Shape s, std::vector<double> vals);
    static Tensor uniform(Shape s, Rng& g, double lo, double hi);
    static Tensor normal(Shape s, Rng& g, double mean, double stddev);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int dim(int i) const;
    int rows() const;  // dim 0
    int cols() const;  // dim 1
    size_t numel() const;

    double* data();
    const double* data() const;
    std::vector<double>& vec();
    const std::vector<double>& vec() const;
    double item() const;  // scalar tensors only
    double at(int i) const;
    double at(int i, int j) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    bool grad_present() const;
    std::vector<double>& grad();  // allocates zeros on first use
    void zero_grad();             // drops the buffer
    Tensor detach_copy() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

  private:
    explicit Tensor(std::shared_ptr<TensorImpl> i) : impl_(std::move(i)) {}
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Constructing a Graph makes it the calling thread's
// current tape; ops with a grad-requiring input record one backward closure
// each. backward() seeds d(loss)=1 and calls the closures in reverse
// recording order exactly once. A Graph and the tensors it touches belong to
// one thread; independent Graphs on different threads do not interact.
class Graph {
  public:
    Graph();
    ~Graph();
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    void backward(const Tensor& loss);
    size_t node_count() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    static Graph* current();
    void record(std::shared_ptr<TensorImpl> out, std::function<void()> fn);

  private:
    struct Node {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
    Graph* prev_ = nullptr;
};

struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    bool prev_;
};

bool grad_enabled();

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor add_rowvec(const Tensor& x, const Tensor& v);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double c);
Tensor transpose(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, int pad_id);
Tensor embedding(const Tensor& table, const std::vector<int>& ids);
Tensor concat_rows(const std::vector<Tensor>& xs);
Tensor concat_cols(const std::vector<Tensor>& xs);
Tensor slice_rows(const Tensor& x, int start, int len);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor mean_rows(const Tensor& x);  // [R,C] -> [1,C]; R=0 gives zeros
Tensor sum_all(const Tensor& x);
Tensor reshape(const Tensor& x, Shape s);

// Central-difference check of d(loss)/d(param). loss_fn must be a pure
// function of the current parameter values and must not open its own Graph.
// Returns max over elements of |analytic - numeric| / max(|analytic|,
// |numeric|, 1e-8).
//
// Deep composite losses have no single usable step: near-zero gradients
// drown in rounding noise at small h while stiff coordinates (for example
// tied embedding rows) diverge at large h. grad_check_multi scores each
// element by its best step from the ladder; a wrong analytic gradient
// matches none of them.
double grad_check(const std::function<Tensor()>& loss_fn, Tensor param, double h = 1e-5);
double grad_check_multi(const std::function<Tensor()>& loss_fn, Tensor param,
                        const std::vector<double>& hs);

uint64_t hash_bytes(const void* p, size_t n, uint64_t h = 1469598103934665603ull);
uint64_t hash_tensor(const Tensor& t);

}  // namespace rsmoe
