#include "rsmoe/layers.hpp"

#include <cmath>

#include "rsmoe/kernels.hpp"

namespace rsmoe {

Linear::Linear(int in, int out, Rng& rng, bool bias) {
    if (in <= 0 || out <= 0) throw ConfigError("linear: dims must be positive");
    w = Tensor::normal({in, out}, rng, 0.0, 0.02);
    w.set_requires_grad(true);
    if (bias) {
        b = Tensor::zeros({out});
        b.set_requires_grad(true);
    }
}

Tensor Linear::forward(const Tensor& x) const {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add_rowvec(y, b);
    return y;
}

void Linear::params(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".w", w);
    if (b.defined()) add_param(out, prefix + ".b", b);
}

AdaptedLinear::AdaptedLinear(int in, int out, Rng& rng, bool bias) : base(in, out, rng, bias) {}

Tensor AdaptedLinear::forward(const Tensor& x) const {
    Tensor y = base.forward(x);
    if (adapter) y = add(y, adapter->delta(x));
    return y;
}

void AdaptedLinear::attach(int rank, double alpha, Rng& rng) {
    if (adapter) throw ConfigError("lora attach: adapter already attached");
    adapter = std::make_shared<LoraAdapter>(base.in_dim(), base.out_dim(), rank, alpha, rng);
}

void AdaptedLinear::merge() {
    if (!adapter) throw ConfigError("lora merge: no adapter attached");
    const int in = base.in_dim();
    const int out = base.out_dim();
    std::vector<double> delta((size_t)in * out, 0.0);
    kernels::mm_nn(adapter->a.data(), adapter->b.data(), delta.data(), in, adapter->rank, out);
    kernels::axpy(adapter->scaling(), delta.data(), base.w.data(), delta.size());
    adapter.reset();
}

void AdaptedLinear::params(const std::string& prefix, ParamList& out) const {
    base.params(prefix, out);
    if (adapter) {
        add_param(out, prefix + ".lora_a", adapter->a);
        add_param(out, prefix + ".lora_b", adapter->b);
    }
}

Embedding::Embedding(int count, int dim, Rng& rng) {
    if (count <= 0 || dim <= 0) throw ConfigError("embedding: dims must be positive");
    table = Tensor::normal({count, dim}, rng, 0.0, 0.02);
    table.set_requires_grad(true);
}

void Embedding::params(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".table", table);
}

LayerNorm::LayerNorm(int dim) {
    if (dim <= 0) throw ConfigError("layer_norm: dim must be positive");
    gamma = Tensor::full({dim}, 1.0);
    beta = Tensor::zeros({dim});
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
}

void LayerNorm::params(const std::string& prefix, ParamList& out) const {
    add_param(out, prefix + ".gamma", gamma);
    add_param(out, prefix + ".beta", beta);
}

Mha::Mha(int d_model, int n_heads, Rng& rng)
    : heads(n_heads),
      q(d_model, d_model, rng),
      k(d_model, d_model, rng),
      v(d_model, d_model, rng),
      o(d_model, d_model, rng) {
    if (n_heads <= 0) throw ConfigError("mha: heads must be positive");
    if (d_model % n_heads != 0) throw ConfigError("mha: d_model must be divisible by heads");
}

Tensor Mha::forward(const Tensor& xq, const Tensor& xkv, const Tensor* mask,
                    std::vector<Tensor>* probs_out) const {
    const int d = q.base.in_dim();
    if (xq.cols() != d || xkv.cols() != d) throw ShapeError("mha: input width mismatch");
    if (mask && (mask->rows() != xq.rows() || mask->cols() != xkv.rows()))
        throw ShapeError("mha: mask shape mismatch");

    Tensor Q = q.forward(xq);
    Tensor K = k.forward(xkv);
    Tensor V = v.forward(xkv);

    const int dh = d / heads;
    const double inv = 1.0 / std::sqrt((double)dh);
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Tensor qh = slice_cols(Q, h * dh, dh);
        Tensor kh = slice_cols(K, h * dh, dh);
        Tensor vh = slice_cols(V, h * dh, dh);
        Tensor scores = scale(matmul(qh, transpose(kh)), inv);
        if (mask) scores = add(scores, *mask);
        Tensor probs = softmax(scores, -1);
        if (probs_out) probs_out->push_back(probs);
        outs.push_back(matmul(probs, vh));
    }
    return o.forward(concat_cols(outs));
}

void Mha::params(const std::string& prefix, ParamList& out) const {
    q.params(prefix + ".q", out);
    k.params(prefix + ".k", out);
    v.params(prefix + ".v", out);
    o.params(prefix + ".o", out);
}

Ffn::Ffn(int dim, int hidden, Rng& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

void Ffn::params(const std::string& prefix, ParamList& out) const {
    fc1.params(prefix + ".fc1", out);
    fc2.params(prefix + ".fc2", out);
}

Block::Block(int dim, int heads, int ffn_hidden, Rng& rng)
    : attn(dim, heads, rng), ffn(dim, ffn_hidden, rng), ln1(dim), ln2(dim) {}

Tensor Block::forward(const Tensor& x, const Tensor* mask,
                      std::vector<Tensor>* probs_out) const {
    Tensor h = ln1.forward(add(x, attn.forward(x, x, mask, probs_out)));
    return ln2.forward(add(h, ffn.forward(h)));
}

void Block::params(const std::string& prefix, ParamList& out) const {
    attn.params(prefix + ".attn", out);
    ffn.params(prefix + ".ffn", out);
    ln1.params(prefix + ".ln1", out);
    ln2.params(prefix + ".ln2", out);
}

Tensor prefix_causal_mask(int n, int prefix_len) {
    if (n < 0 || prefix_len < 0 || prefix_len > n)
        throw ConfigError("prefix_causal_mask: bad lengths");
    Tensor m = Tensor::zeros({n, n});
    double* d = m.data();
    for (int r = 0; r < n; ++r)
        for (int c = prefix_len; c < n; ++c)
            if (c > r) d[(size_t)r * n + c] = kMaskOff;
    return m;
}

}  // namespace rsmoe
