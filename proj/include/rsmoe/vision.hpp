#pragma once

#include <vector>

#include "rsmoe/config.hpp"
#include "rsmoe/layers.hpp"

namespace rsmoe {

// Sets requires_grad on every listed tensor; the optimizer and the backward
// pass both key off that flag.
void set_trainable(const ParamList& ps, bool trainable);

// Patch transformer over the rendered image. Frozen at construction: it is a
// fixed feature extractor, so none of its parameters ever take gradients.
struct ImageEncoder {
    int image = 0;
    int patch = 0;
    Linear patch_proj;
    Tensor pos;  // [n_patches, d]
    std::vector<Block> blocks;

    ImageEncoder() = default;
    ImageEncoder(const ModelConfig& cfg, Rng& rng);

    // [image, image, 3] -> [n_patches, d]
    Tensor forward(const Tensor& img) const;
    void params(const std::string& prefix, ParamList& out) const;
};

// Joint self-attention over [instruction; queries], cross-attention into the
// image features, then a feed-forward, all post-norm.
struct VlmBlock {
    Mha self_attn, cross_attn;
    Ffn ffn;
    LayerNorm ln1, ln2, ln3;

    VlmBlock() = default;
    VlmBlock(int dim, int heads, int hidden, Rng& rng);

    Tensor forward(const Tensor& x, const Tensor& f_img) const;
    void params(const std::string& prefix, ParamList& out) const;
};

// Instruction-aware encoder: learned query rows attend jointly with the
// embedded instruction, read the image through cross-attention, and leave
// through a feed-forward plus projection as the decoder prefix.
struct VlmEncoder {
    static constexpr int kMaxInstr = 16;

    Embedding tok;   // frozen
    Tensor ipos;     // [kMaxInstr, d], frozen
    Tensor queries;  // [n_queries, d]
    std::vector<VlmBlock> blocks;
    Ffn final_ffn;
    LayerNorm ln_f;
    Linear proj;

    VlmEncoder() = default;
    VlmEncoder(const ModelConfig& cfg, int vocab, Rng& rng);

    // f_img [n_patches, d] -> [n_queries, d]
    Tensor forward(const Tensor& f_img, const std::vector<int>& instr_ids) const;
    void params(const std::string& prefix, ParamList& out) const;
};

}  // namespace rsmoe
