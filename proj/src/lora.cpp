#include "rsmoe/lora.hpp"

#include <cmath>

namespace rsmoe {

LoraAdapter::LoraAdapter(int in, int out, int r, double al, Rng& rng) : rank(r), alpha(al) {
    if (in <= 0 || out <= 0) throw ConfigError("lora: dims must be positive");
    if (r <= 0) throw ConfigError("lora: rank must be positive");
    if (al <= 0.0) throw ConfigError("lora: alpha must be positive");
    const double bound = 1.0 / std::sqrt((double)in);
    a = Tensor::uniform({in, r}, rng, -bound, bound);
    b = Tensor::zeros({r, out});
    a.set_requires_grad(true);
    b.set_requires_grad(true);
}

Tensor LoraAdapter::delta(const Tensor& x) const {
    return scale(matmul(matmul(x, a), b), scaling());
}

}  // namespace rsmoe
