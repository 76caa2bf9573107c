#pragma once

#include <cstdint>

#include "hairseg/params.hpp"

namespace hairseg {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    bool decay_exempt_norm_bias = true;
};

// First/second moments, index-parallel to the parameter store.
template <class T>
struct AdamWStateT {
    std::uint64_t step = 0;
    std::vector<TensorT<T>> m;
    std::vector<TensorT<T>> v;

    bool initialized() const noexcept { return !m.empty(); }
};

using AdamWState = AdamWStateT<float>;

// One decoupled-decay Adam step:
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr*mhat/(sqrt(vhat)+eps) - lr*wd*theta
// with both terms computed from the pre-update theta. A non-finite gradient
// refuses the whole step (no parameter is touched) and names the tensor.
template <class T>
void adamw_step(ParamStoreT<T>& params, AdamWStateT<T>& state, const AdamWConfig& cfg);

// Mean pixel-wise negative log-likelihood over [B,C,H,W] logits against
// [B,H,W] class-id targets, stable via log-sum-exp.
template <class T>
VarT<T> cross_entropy_loss(const VarT<T>& logits, const TensorT<std::uint8_t>& targets);

} // namespace hairseg
