#include "rsmoe/optim.hpp"

#include <cmath>

namespace rsmoe {

AdamW::AdamW(const ParamList& params, AdamWConfig cfg) : cfg_(cfg) {
    if (cfg.beta1 < 0 || cfg.beta1 >= 1 || cfg.beta2 < 0 || cfg.beta2 >= 1)
        throw ConfigError("adamw: betas must lie in [0,1)");
    if (cfg.eps <= 0) throw ConfigError("adamw: eps must be positive");
    if (cfg.weight_decay < 0) throw ConfigError("adamw: negative weight decay");
    for (const auto& p : params)
        if (p.t.requires_grad()) params_.push_back(p);
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].t.numel(), 0.0);
        v_[i].assign(params_[i].t.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    if (lr < 0 || !std::isfinite(lr)) throw ConfigError("adamw: bad learning rate");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor t = params_[i].t;
        double* w = t.data();
        const size_t n = t.numel();
        const double* g = t.grad_present() ? t.grad().data() : nullptr;
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (size_t k = 0; k < n; ++k) {
            const double gk = g ? g[k] : 0.0;
            if (!std::isfinite(gk))
                throw NumericError("adamw: non-finite gradient in " + params_[i].name);
            w[k] *= 1.0 - lr * cfg_.weight_decay;
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
            w[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
            if (!std::isfinite(w[k]))
                throw NumericError("adamw: non-finite weight in " + params_[i].name);
        }
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) {
        Tensor t = p.t;
        t.zero_grad();
    }
}

double clip_grad_norm(const ParamList& params, double max_norm) {
    if (max_norm <= 0) throw ConfigError("clip_grad_norm: max_norm must be positive");
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.t.grad_present()) continue;
        Tensor t = p.t;
        for (double g : t.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericError("clip_grad_norm: non-finite gradient norm");
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& p : params) {
            if (!p.t.grad_present()) continue;
            Tensor t = p.t;
            for (double& g : t.grad()) g *= s;
        }
    }
    return norm;
}

double LrSchedule::at(int step) const {
    if (step < 0 || step >= total) throw ConfigError("lr schedule: step out of range");
    if (step < warmup) return base * (double)step / (double)warmup;
    if (step == warmup) return base;  // exact; the cosine below also lands here at p=0
    const int denom = total - 1 - warmup;
    if (denom <= 0) return min_lr;
    const double p = (double)(step - warmup) / (double)denom;
    if (step == total - 1) return min_lr;
    return min_lr + 0.5 * (base - min_lr) * (1.0 + std::cos(p * 3.14159265358979323846));
}

}  // namespace rsmoe
