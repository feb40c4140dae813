#pragma once

#include <string>
#include <vector>

#include "rsmoe/metrics.hpp"
#include "rsmoe/moe.hpp"
#include "rsmoe/optim.hpp"

namespace rsmoe {

// Knobs for one training run. The stage loops read the epoch count matching
// their stage; everything else is shared.
struct RunConfig {
    uint64_t seed = 1;
    int epochs_stage1 = 5;
    int epochs_stage2 = 5;
    int epochs_onestage = 10;
    int batch = 8;
    double lr = 1e-4;
    double lr_stage2 = 0.0;  // second-stage peak; <= 0 falls back to lr
    double min_lr = 1e-6;
    double weight_decay = 0.05;
    bool clip = true;
    double clip_norm = 1.0;
    int n_experts = 3;
    bool use_router = true;
    bool router_joint = false;  // one shared softmax loss instead of per-head losses
    int only_expert = -1;       // restrict second-stage updates to one expert
    std::string log_path;       // TSV step log; empty disables logging
    ModelConfig model;

    void validate() const;
};

struct ParamStats {
    size_t total = 0;
    size_t trainable = 0;
    double ratio() const { return total ? (double)trainable / (double)total : 0.0; }
};

ParamStats param_stats(const ParamList& ps);

// Freeze plans. Stage one trains adapters, layer norms, the query rows, the
// encoder output projection and the decoder token table (tied to the output
// head); the image encoder and all base linears stay frozen. Stage two trains
// expert adapters and the router only. The single-stage plan is stage one's
// plan applied to the encoder and to every expert, plus the router.
void apply_stage1_freeze(CaptionModel& m);
void apply_stage2_freeze(MoeModel& m);
void apply_onestage_freeze(MoeModel& m);

// Trains on full captions and returns the model with adapters merged.
CaptionModel run_stage1(const scene::Dataset& train, const RunConfig& rc);

// Expands a merged stage-one model into experts, specializes them on their
// role captions, trains the router, and merges the expert adapters.
MoeModel run_stage2(const CaptionModel& stage1, const scene::Dataset& train,
                    const RunConfig& rc);

// Joint baseline: everything trains at once on the summed per-role losses.
MoeModel run_onestage(const scene::Dataset& train, const RunConfig& rc);

struct EvalOutput {
    metrics::MetricReport report;
    metrics::SemanticScore semantic;
    std::vector<std::string> captions;
};

EvalOutput evaluate_moe(const MoeModel& m, const scene::Dataset& eval_set, const Vocab& v);
EvalOutput evaluate_caption(const CaptionModel& m, const scene::Dataset& eval_set,
                            const Vocab& v);

struct AblationCell {
    std::string pipeline;  // "two-stage" or "one-stage"
    bool use_router = true;
    int n_experts = 3;

    std::string label() const;
};

struct AblationResult {
    AblationCell cell;
    uint64_t seed = 0;
    metrics::MetricReport report;
    metrics::SemanticScore semantic;
    double seconds = 0.0;
};

// Runs every cell for every seed. Per seed the two-stage cells share one
// stage-one model so the grid isolates the second-stage factors. Worker
// threads switch the kernels to serial mode; results do not depend on the
// thread count.
std::vector<AblationResult> run_ablation(const std::vector<AblationCell>& cells,
                                         const std::vector<uint64_t>& seeds, int train_n,
                                         int eval_n, const RunConfig& base, int threads);

std::string ablation_table(const std::vector<AblationResult>& results);

}  // namespace rsmoe
