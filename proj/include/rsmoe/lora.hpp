#pragma once

#include "rsmoe/rng.hpp"
#include "rsmoe/tensor.hpp"

namespace rsmoe {

// Low-rank additive update for a linear weight. The output-side factor starts
// at zero, so a freshly attached adapter is exactly the identity.
struct LoraAdapter {
    Tensor a;  // [in, rank]
    Tensor b;  // [rank, out]
    int rank = 0;
    double alpha = 0.0;

    LoraAdapter(int in, int out, int rank, double alpha, Rng& rng);

    // (alpha / rank) * x a b, for x [n, in]
    Tensor delta(const Tensor& x) const;
    double scaling() const { return alpha / rank; }
};

}  // namespace rsmoe
