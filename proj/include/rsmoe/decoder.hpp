#pragma once

#include <vector>

#include "rsmoe/config.hpp"
#include "rsmoe/layers.hpp"

namespace rsmoe {

// Prefix-conditioned decoder. Encoder rows form a bidirectional prefix; token
// rows run causally behind it. The output head is tied to the token
// embedding, so logits are h E^T and there is no separate head matrix.
struct DecoderModel {
    int vocab = 0;
    int max_len = 0;
    Embedding tok;
    Tensor pos;  // [max_len, d], frozen
    std::vector<Block> blocks;
    LayerNorm ln_f;

    DecoderModel() = default;
    DecoderModel(const ModelConfig& cfg, int vocab, Rng& rng);

    // prefix [P, d]; ids start with bos. Returns [P + ids, d].
    Tensor hidden(const Tensor& prefix, const std::vector<int>& ids) const;

    // Mean token-level cross entropy of target_ids (+ eos) given the prefix.
    Tensor loss(const Tensor& prefix, const std::vector<int>& target_ids) const;

    // Greedy decode until eos or max_new tokens; ties pick the lowest id.
    // Returns generated ids without bos/eos.
    std::vector<int> generate(const Tensor& prefix, int max_new, int bos_id = 1,
                              int eos_id = 2) const;

    // Deep copy; adapters must be merged first so the param layouts align.
    DecoderModel clone() const;

    void params(const std::string& prefix, ParamList& out) const;
};

}  // namespace rsmoe
