#include "rsmoe/vision.hpp"

namespace rsmoe {

void set_trainable(const ParamList& ps, bool trainable) {
    for (const auto& p : ps) {
        Tensor t = p.t;
        t.set_requires_grad(trainable);
    }
}

ImageEncoder::ImageEncoder(const ModelConfig& cfg, Rng& rng) : image(cfg.image), patch(cfg.patch) {
    cfg.validate();
    patch_proj = Linear(patch * patch * 3, cfg.d_model, rng);
    pos = Tensor::normal({cfg.n_patches(), cfg.d_model}, rng, 0.0, 0.02);
    for (int i = 0; i < cfg.vit_blocks; ++i)
        blocks.emplace_back(cfg.d_model, cfg.heads, cfg.ffn_hidden, rng);
    ParamList ps;
    params("img", ps);
    set_trainable(ps, false);
}

Tensor ImageEncoder::forward(const Tensor& img) const {
    if (img.shape().size() != 3 || img.shape()[0] != image || img.shape()[1] != image ||
        img.shape()[2] != 3)
        throw ShapeError("image encoder: expected [" + std::to_string(image) + "," +
                         std::to_string(image) + ",3] input");
    const int side = image / patch;
    const int n = side * side;
    const int pd = patch * patch * 3;
    std::vector<double> rows((size_t)n * pd);
    const double* px = img.data();
    for (int pr = 0; pr < side; ++pr)
        for (int pc = 0; pc < side; ++pc) {
            double* dst = rows.data() + (size_t)(pr * side + pc) * pd;
            for (int y = 0; y < patch; ++y)
                for (int x = 0; x < patch; ++x)
                    for (int c = 0; c < 3; ++c)
                        *dst++ = px[(((size_t)(pr * patch + y)) * image + pc * patch + x) * 3 + c];
        }
    Tensor x = add(patch_proj.forward(Tensor::from({n, pd}, std::move(rows))), pos);
    for (const auto& b : blocks) x = b.forward(x);
    return x;
}

void ImageEncoder::params(const std::string& prefix, ParamList& out) const {
    patch_proj.params(prefix + ".patch_proj", out);
    add_param(out, prefix + ".pos", pos);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].params(prefix + ".block" + std::to_string(i), out);
}

VlmBlock::VlmBlock(int dim, int heads, int hidden, Rng& rng)
    : self_attn(dim, heads, rng),
      cross_attn(dim, heads, rng),
      ffn(dim, hidden, rng),
      ln1(dim),
      ln2(dim),
      ln3(dim) {}

Tensor VlmBlock::forward(const Tensor& x, const Tensor& f_img) const {
    Tensor h = ln1.forward(add(x, self_attn.forward(x, x)));
    h = ln2.forward(add(h, cross_attn.forward(h, f_img)));
    return ln3.forward(add(h, ffn.forward(h)));
}

void VlmBlock::params(const std::string& prefix, ParamList& out) const {
    self_attn.params(prefix + ".self", out);
    cross_attn.params(prefix + ".cross", out);
    ffn.params(prefix + ".ffn", out);
    ln1.params(prefix + ".ln1", out);
    ln2.params(prefix + ".ln2", out);
    ln3.params(prefix + ".ln3", out);
}

VlmEncoder::VlmEncoder(const ModelConfig& cfg, int vocab, Rng& rng) {
    cfg.validate();
    if (vocab <= 0) throw ConfigError("vlm encoder: vocab must be positive");
    tok = Embedding(vocab, cfg.d_model, rng);
    ipos = Tensor::normal({kMaxInstr, cfg.d_model}, rng, 0.0, 0.02);
    queries = Tensor::normal({cfg.n_queries, cfg.d_model}, rng, 0.0, 0.02);
    queries.set_requires_grad(true);
    for (int i = 0; i < cfg.vlm_blocks; ++i)
        blocks.emplace_back(cfg.d_model, cfg.heads, cfg.ffn_hidden, rng);
    final_ffn = Ffn(cfg.d_model, cfg.ffn_hidden, rng);
    ln_f = LayerNorm(cfg.d_model);
    proj = Linear(cfg.d_model, cfg.d_model, rng);
    // instruction token and position tables stay at their random init
    tok.table.set_requires_grad(false);
    ipos.set_requires_grad(false);
}

Tensor VlmEncoder::forward(const Tensor& f_img, const std::vector<int>& instr_ids) const {
    if (instr_ids.empty()) throw InputError("vlm encoder: empty instruction");
    if ((int)instr_ids.size() > kMaxInstr)
        throw InputError("vlm encoder: instruction longer than " + std::to_string(kMaxInstr));
    Tensor xi = add(tok.forward(instr_ids), slice_rows(ipos, 0, (int)instr_ids.size()));
    Tensor x = concat_rows({xi, queries});
    for (const auto& b : blocks) x = b.forward(x, f_img);
    Tensor q = slice_rows(x, (int)instr_ids.size(), queries.shape()[0]);
    return proj.forward(ln_f.forward(add(q, final_ffn.forward(q))));
}

void VlmEncoder::params(const std::string& prefix, ParamList& out) const {
    tok.params(prefix + ".tok", out);
    add_param(out, prefix + ".ipos", ipos);
    add_param(out, prefix + ".queries", queries);
    for (size_t i = 0; i < blocks.size(); ++i)
        blocks[i].params(prefix + ".block" + std::to_string(i), out);
    final_ffn.params(prefix + ".final_ffn", out);
    ln_f.params(prefix + ".ln_f", out);
    proj.params(prefix + ".proj", out);
}

}  // namespace rsmoe
