#pragma once

#include <cstdint>
#include <string>

#include "rsmoe/error.hpp"

namespace rsmoe {

// Model dimensions shared by the image encoder, the instruction-aware
// encoder, and the decoder. Serialized into checkpoints; loading rejects a
// mismatch between stored and compiled-in field names.
struct ModelConfig {
    int d_model = 64;
    int heads = 4;
    int vit_blocks = 2;
    int vlm_blocks = 2;
    int llm_blocks = 2;
    int ffn_hidden = 128;
    int n_queries = 8;
    int image = 32;
    int patch = 8;
    int max_len = 96;
    int lora_rank = 4;
    double lora_alpha = 8.0;

    int n_patches() const { return (image / patch) * (image / patch); }
    void validate() const;
    std::string serialize() const;
    static ModelConfig parse(const std::string& text);
};

}  // namespace rsmoe
