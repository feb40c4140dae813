#include "rsmoe/decoder.hpp"

namespace rsmoe {

DecoderModel::DecoderModel(const ModelConfig& cfg, int vocab_size, Rng& rng)
    : vocab(vocab_size), max_len(cfg.max_len) {
    cfg.validate();
    if (vocab_size <= 0) throw ConfigError("decoder: vocab must be positive");
    tok = Embedding(vocab_size, cfg.d_model, rng);
    pos = Tensor::normal({cfg.max_len, cfg.d_model}, rng, 0.0, 0.02);
    pos.set_requires_grad(false);
    for (int i = 0; i < cfg.llm_blocks; ++i)
        blocks.emplace_back(cfg.d_model, cfg.heads, cfg.ffn_hidden, rng);
    ln_f = LayerNorm(cfg.d_model);
}

Tensor DecoderModel::hidden(const Tensor& prefix, const std::vector<int>& ids) const {
    if (prefix.shape().size() != 2 || prefix.cols() != tok.table.cols())
        throw ShapeError("decoder: prefix width mismatch");
    if (ids.empty()) throw InputError("decoder: empty token ids");
    if ((int)ids.size() > max_len)
        throw InputError("decoder: sequence of " + std::to_string(ids.size()) +
                         " tokens exceeds max_len " + std::to_string(max_len));
    const int p = prefix.rows();
    Tensor xt = add(tok.forward(ids), slice_rows(pos, 0, (int)ids.size()));
    Tensor x = concat_rows({prefix, xt});
    Tensor mask = prefix_causal_mask(p + (int)ids.size(), p);
    for (const auto& b : blocks) x = b.forward(x, &mask);
    return ln_f.forward(x);
}

Tensor DecoderModel::loss(const Tensor& prefix, const std::vector<int>& target_ids) const {
    if (target_ids.empty()) throw InputError("decoder: empty target");
    for (int id : target_ids)
        if (id < 0 || id >= vocab) throw InputError("decoder: target id out of range");
    std::vector<int> in_ids;
    in_ids.reserve(target_ids.size() + 1);
    in_ids.push_back(1);  // bos
    in_ids.insert(in_ids.end(), target_ids.begin(), target_ids.end());
    std::vector<int> out_ids(target_ids);
    out_ids.push_back(2);  // eos
    Tensor h = hidden(prefix, in_ids);
    Tensor rows = slice_rows(h, prefix.rows(), (int)in_ids.size());
    Tensor logits = matmul(rows, transpose(tok.table));
    return cross_entropy(logits, out_ids, /*pad_id=*/-1);
}

std::vector<int> DecoderModel::generate(const Tensor& prefix, int max_new, int bos_id,
                                        int eos_id) const {
    if (max_new < 0) throw ConfigError("decoder: negative max_new");
    NoGradGuard ng;
    std::vector<int> ids = {bos_id};
    std::vector<int> out;
    while ((int)out.size() < max_new && (int)ids.size() < max_len) {
        Tensor h = hidden(prefix, ids);
        Tensor last = slice_rows(h, prefix.rows() + (int)ids.size() - 1, 1);
        Tensor logits = matmul(last, transpose(tok.table));
        const double* d = logits.data();
        // pad and bos are never valid continuations; eos stays eligible so
        // decoding can stop
        int best = -1;
        for (int i = 0; i < vocab; ++i) {
            if (i == 0 || i == bos_id) continue;
            if (best < 0 || d[i] > d[best]) best = i;
        }
        if (best == eos_id) break;
        out.push_back(best);
        ids.push_back(best);
    }
    return out;
}

DecoderModel DecoderModel::clone() const {
    DecoderModel copy;
    copy.vocab = vocab;
    copy.max_len = max_len;
    ParamList src;
    params("m", src);
    for (const auto& p : src)
        if (p.name.find(".lora_") != std::string::npos)
            throw ConfigError("decoder clone: merge adapters first");

    auto copy_tensor = [](const Tensor& t) {
        Tensor c = Tensor::from(t.shape(), std::vector<double>(t.data(), t.data() + t.numel()));
        c.set_requires_grad(t.requires_grad());
        return c;
    };
    copy.tok.table = copy_tensor(tok.table);
    copy.pos = copy_tensor(pos);
    copy.blocks.resize(blocks.size());
    for (size_t i = 0; i < blocks.size(); ++i) {
        const Block& b = blocks[i];
        Block& c = copy.blocks[i];
        c.attn.heads = b.attn.heads;
        c.attn.q.base.w = copy_tensor(b.attn.q.base.w);
        c.attn.q.base.b = copy_tensor(b.attn.q.base.b);
        c.attn.k.base.w = copy_tensor(b.attn.k.base.w);
        c.attn.k.base.b = copy_tensor(b.attn.k.base.b);
        c.attn.v.base.w = copy_tensor(b.attn.v.base.w);
        c.attn.v.base.b = copy_tensor(b.attn.v.base.b);
        c.attn.o.base.w = copy_tensor(b.attn.o.base.w);
        c.attn.o.base.b = copy_tensor(b.attn.o.base.b);
        c.ffn.fc1.base.w = copy_tensor(b.ffn.fc1.base.w);
        c.ffn.fc1.base.b = copy_tensor(b.ffn.fc1.base.b);
        c.ffn.fc2.base.w = copy_tensor(b.ffn.fc2.base.w);
        c.ffn.fc2.base.b = copy_tensor(b.ffn.fc2.base.b);
        c.ln1.gamma = copy_tensor(b.ln1.gamma);
        c.ln1.beta = copy_tensor(b.ln1.beta);
        c.ln1.eps = b.ln1.eps;
        c.ln2.gamma = copy_tensor(b.ln2.gamma);
        c.ln2.beta = copy_tensor(b.ln2.beta);
        c.ln2.eps = b.ln2.eps;
    }
    copy.ln_f.gamma = copy_tensor(ln_f.gamma);
    copy.ln_f.beta = copy_tensor(ln_f.beta);
    copy.ln_f.eps = ln_f.eps;
    return copy;
}

void DecoderModel::params(const std::string& prefix, ParamList& out) const {
    tok.params(prefix + ".tok", out);
    add_param(out, prefix + ".pos", pos);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].params(prefix + ".block" + std::to_string(i), out);
    ln_f.params(prefix + ".ln_f", out);
}

}  // namespace rsmoe
