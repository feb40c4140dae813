#pragma once

#include <string>
#include <vector>

#include "rsmoe/decoder.hpp"
#include "rsmoe/scene.hpp"
#include "rsmoe/vision.hpp"
#include "rsmoe/vocab.hpp"

namespace rsmoe {

// First-stage assembly: frozen image encoder, instruction-aware encoder, one
// decoder. The encoder output is the decoder prefix.
struct CaptionModel {
    ModelConfig cfg;
    ImageEncoder image_enc;
    VlmEncoder vlm;
    DecoderModel llm;

    CaptionModel() = default;
    CaptionModel(const ModelConfig& cfg, int vocab, uint64_t seed);

    Tensor encode(const Tensor& image, const std::vector<int>& instr_ids) const;
    ParamList params() const;
};

// Adapter sites. The encoder takes them on self-attention {q,v}, cross
// attention {q,k,v,o} and every feed-forward linear including the final one;
// the decoder on attention {q,v} and its feed-forward linears. Both return
// how many sites they touched.
int attach_stage1_adapters(CaptionModel& m, Rng& rng);
int merge_stage1_adapters(CaptionModel& m);
int attach_vlm_adapters(VlmEncoder& e, int rank, double alpha, Rng& rng);
int merge_vlm_adapters(VlmEncoder& e);
int attach_expert_adapters(DecoderModel& d, int rank, double alpha, Rng& rng);
int merge_expert_adapters(DecoderModel& d);

// Scores an instruction per expert. Instructions are embedded with a frozen
// copy of the decoder token table taken at construction, mean-pooled, and
// pushed through a shared trunk; each expert owns an independent scoring
// head, so training one head never moves another.
struct Router {
    Tensor emb;
    Linear trunk;
    std::vector<Linear> heads;

    Router() = default;
    Router(const Tensor& tok_table, int n_experts, uint64_t seed);

    Tensor features(const std::vector<int>& instr_ids) const;  // [1, d]
    Tensor head_score(int head, const Tensor& feat) const;     // [1, 1]
    std::vector<double> probs(const std::vector<int>& instr_ids) const;
    int route(const std::vector<int>& instr_ids) const;  // argmax, lowest index on ties
    void params(const std::string& prefix, ParamList& out) const;
};

// Decoder-per-role assembly behind a shared encoder.
struct MoeModel {
    ModelConfig cfg;
    std::vector<std::string> roles;
    bool use_router = true;
    ImageEncoder image_enc;
    VlmEncoder vlm;
    std::vector<DecoderModel> experts;
    Router router;

    ParamList params() const;
};

// Role splits per expert count: 1 keeps the full caption; 2 splits theme from
// the rest; 3 gives theme, objects, relations; 4 adds positions.
std::vector<std::string> roles_for(int n_experts);
std::string instruction_for(const std::string& role);
std::string target_for(const std::string& role, const scene::CaptionBundle& c);

// Expands a merged first-stage model into experts by cloning its decoder.
MoeModel build_moe(const CaptionModel& m, int n_experts, bool use_router, uint64_t seed);
// Fresh assembly for the single-stage baseline.
MoeModel build_moe_fresh(const ModelConfig& cfg, int vocab, int n_experts, bool use_router,
                         uint64_t seed);

struct MoeCaption {
    std::vector<std::string> segments;  // one per role, fixed role order
    std::vector<int> expert_of;         // decoder index that produced each segment
    std::string text;                   // non-empty segments joined with " . "
};

MoeCaption moe_generate(const MoeModel& m, const Tensor& image, const Vocab& v);

}  // namespace rsmoe
