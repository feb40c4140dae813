#pragma once

#include <memory>
#include <string>
#include <vector>

#include "rsmoe/lora.hpp"
#include "rsmoe/rng.hpp"
#include "rsmoe/tensor.hpp"

namespace rsmoe {

// Named handle into a module's parameter storage. Modules append their
// parameters in a fixed order, so the flattened list is stable across runs
// and is what the optimizer and the checkpoint writer iterate.
struct Param {
    std::string name;
    Tensor t;
};

using ParamList = std::vector<Param>;

inline void add_param(ParamList& out, const std::string& name, const Tensor& t) {
    out.push_back({name, t});
}

constexpr double kMaskOff = -1e30;  // additive attention mask value for blocked pairs

struct Linear {
    Tensor w;  // [in, out]
    Tensor b;  // [out]; undefined when constructed without bias

    Linear() = default;
    Linear(int in, int out, Rng& rng, bool bias = true);

    Tensor forward(const Tensor& x) const;
    int in_dim() const { return w.shape()[0]; }
    int out_dim() const { return w.shape()[1]; }
    void params(const std::string& prefix, ParamList& out) const;
};

// Linear with an optional low-rank adapter. merge() folds the adapter into
// the base weight and detaches it, after which a new adapter may be attached.
struct AdaptedLinear {
    Linear base;
    std::shared_ptr<LoraAdapter> adapter;

    AdaptedLinear() = default;
    AdaptedLinear(int in, int out, Rng& rng, bool bias = true);

    Tensor forward(const Tensor& x) const;
    void attach(int rank, double alpha, Rng& rng);
    void merge();
    bool adapted() const { return adapter != nullptr; }
    void params(const std::string& prefix, ParamList& out) const;
};

struct Embedding {
    Tensor table;  // [count, dim]

    Embedding() = default;
    Embedding(int count, int dim, Rng& rng);

    Tensor forward(const std::vector<int>& ids) const { return embedding(table, ids); }
    void params(const std::string& prefix, ParamList& out) const;
};

struct LayerNorm {
    Tensor gamma, beta;
    double eps = 1e-5;

    LayerNorm() = default;
    explicit LayerNorm(int dim);

    Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }
    void params(const std::string& prefix, ParamList& out) const;
};

// Multi-head attention over packed rows. Heads are column slices of the
// projected activations; mask (if given) is [nq, nk] and added to the scores
// of every head before softmax.
struct Mha {
    int heads = 1;
    AdaptedLinear q, k, v, o;

    Mha() = default;
    Mha(int d_model, int n_heads, Rng& rng);

    Tensor forward(const Tensor& xq, const Tensor& xkv, const Tensor* mask = nullptr,
                   std::vector<Tensor>* probs_out = nullptr) const;
    void params(const std::string& prefix, ParamList& out) const;
};

struct Ffn {
    AdaptedLinear fc1, fc2;

    Ffn() = default;
    Ffn(int dim, int hidden, Rng& rng);

    Tensor forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }
    void params(const std::string& prefix, ParamList& out) const;
};

// Post-norm transformer block: x -> ln1(x + attn) -> ln2(h + ffn).
struct Block {
    Mha attn;
    Ffn ffn;
    LayerNorm ln1, ln2;

    Block() = default;
    Block(int dim, int heads, int ffn_hidden, Rng& rng);

    Tensor forward(const Tensor& x, const Tensor* mask = nullptr,
                   std::vector<Tensor>* probs_out = nullptr) const;
    void params(const std::string& prefix, ParamList& out) const;
};

// Causal-with-prefix mask: rows are queries, the first prefix_len keys are
// visible to everyone, later keys only to queries at the same or a later row.
Tensor prefix_causal_mask(int n, int prefix_len);

}  // namespace rsmoe
