#pragma once

#include <vector>

#include "rsmoe/layers.hpp"

namespace rsmoe {

// Decoupled weight decay: each step first shrinks the weight by lr*wd, then
// applies the bias-corrected moment update. A parameter whose gradient never
// materialized in the step is treated as having a zero gradient, so decay
// still applies and the shrink factor is exactly (1 - lr*wd).
struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

class AdamW {
  public:
    // Keeps only parameters that require grad; the rest are never touched.
    AdamW(const ParamList& params, AdamWConfig cfg = {});

    void step(double lr);
    void zero_grad();
    const ParamList& params() const { return params_; }
    int steps_taken() const { return t_; }

  private:
    ParamList params_;
    AdamWConfig cfg_;
    std::vector<std::vector<double>> m_, v_;
    int t_ = 0;
};

// Scales all present gradients so their global l2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_grad_norm(const ParamList& params, double max_norm);

// Linear warmup from zero to base over the first `warmup` steps, then cosine
// to min_lr, pinned so step warmup is exactly base and the last step is
// exactly min_lr.
struct LrSchedule {
    double base = 1e-4;
    double min_lr = 1e-6;
    int warmup = 0;
    int total = 1;

    double at(int step) const;
};

}  // namespace rsmoe
