#include "hairseg/optim.hpp"

#include <cmath>

namespace hairseg {

template <class T>
void adamw_step(ParamStoreT<T>& params, AdamWStateT<T>& state, const AdamWConfig& cfg) {
    if (!state.initialized()) {
        state.m.reserve(params.count());
        state.v.reserve(params.count());
        for (const auto& e : params) {
            state.m.emplace_back(e.var.shape());
            state.v.emplace_back(e.var.shape());
        }
    }
    HS_CHECK_CONTRACT(state.m.size() == params.count(),
                      "optimizer state holds " << state.m.size() << " tensors, params "
                                               << params.count());

    // Refuse the step before touching anything if any gradient is non-finite.
    std::vector<TensorT<T>> grads;
    grads.reserve(params.count());
    for (auto& e : params) {
        TensorT<T> g = e.var.grad();
        HS_CHECK_DATA(all_finite(g), "adamw_step refused: non-finite gradient in " << e.name);
        grads.push_back(std::move(g));
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    const T beta1 = static_cast<T>(cfg.beta1);
    const T beta2 = static_cast<T>(cfg.beta2);
    const T one_minus_b1 = static_cast<T>(1.0 - cfg.beta1);
    const T one_minus_b2 = static_cast<T>(1.0 - cfg.beta2);
    const T lr = static_cast<T>(cfg.lr);
    const T eps = static_cast<T>(cfg.eps);
    const T inv_bc1 = static_cast<T>(1.0 / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);

    for (std::size_t i = 0; i < params.count(); ++i) {
        auto& entry = params[i];
        const T wd = (cfg.decay_exempt_norm_bias && decay_exempt(entry.name))
                         ? T{}
                         : static_cast<T>(cfg.weight_decay);
        T* theta = entry.var.leaf_value().data();
        T* m = state.m[i].data();
        T* v = state.v[i].data();
        const T* g = grads[i].data();
        const std::size_t n = grads[i].size();
        for (std::size_t j = 0; j < n; ++j) {
            m[j] = beta1 * m[j] + one_minus_b1 * g[j];
            v[j] = beta2 * v[j] + one_minus_b2 * g[j] * g[j];
            const T mhat = m[j] * inv_bc1;
            const T vhat = v[j] * inv_bc2;
            theta[j] = theta[j] - lr * mhat / (std::sqrt(vhat) + eps) - lr * wd * theta[j];
        }
    }
}

template <class T>
VarT<T> cross_entropy_loss(const VarT<T>& logits, const TensorT<std::uint8_t>& targets) {
    const auto& ls = logits.shape();
    HS_CHECK_SHAPE(ls.size() == 4, "cross_entropy_loss: logits must be [B,C,H,W], got "
                                       << shape_str(ls));
    const std::size_t b = ls[0], c = ls[1], h = ls[2], w = ls[3];
    HS_CHECK_SHAPE(targets.shape() == Shape({b, h, w}),
                   "cross_entropy_loss: targets " << shape_str(targets.shape())
                                                  << " vs logits " << shape_str(ls));
    HS_CHECK_PARAM(c >= 2, "cross_entropy_loss: need at least 2 classes");

    const std::size_t plane = h * w;
    const std::size_t pixels = b * plane;
    const T* z = logits.value().data();
    // softmax probabilities are saved for the backward pass
    TensorT<T> probs(ls);
    T* pr = probs.data();
    double acc = 0.0;
    for (std::size_t n = 0; n < b; ++n) {
        for (std::size_t px = 0; px < plane; ++px) {
            const std::uint8_t t = targets[n * plane + px];
            HS_CHECK_DATA(t < c, "cross_entropy_loss: class id " << int(t) << " out of range at ("
                                     << n << ", " << px / w << ", " << px % w << ")");
            const std::size_t base = (n * c) * plane + px;
            T mx = z[base];
            for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, z[base + k * plane]);
            T denom{};
            for (std::size_t k = 0; k < c; ++k) {
                const T e = std::exp(z[base + k * plane] - mx);
                pr[base + k * plane] = e;
                denom += e;
            }
            const T inv = T{1} / denom;
            for (std::size_t k = 0; k < c; ++k) pr[base + k * plane] *= inv;
            // -log softmax[target] = log(denom) + mx - z_t
            acc += std::log(static_cast<double>(denom)) +
                   static_cast<double>(mx) - static_cast<double>(z[base + t * plane]);
        }
    }
    const T loss = static_cast<T>(acc / static_cast<double>(pixels));

    return detail::make_op<T>(
        TensorT<T>::scalar(loss), {logits},
        [targets, probs = std::move(probs), b, c, plane, pixels](detail::VarNode<T>& nd) {
            const T g = (*nd.grad)[0] / static_cast<T>(pixels);
            TensorT<T> gx(nd.parents[0].shape());
            for (std::size_t n = 0; n < b; ++n) {
                for (std::size_t px = 0; px < plane; ++px) {
                    const std::uint8_t t = targets[n * plane + px];
                    const std::size_t base = (n * c) * plane + px;
                    for (std::size_t k = 0; k < c; ++k) {
                        const T onehot = (k == t) ? T{1} : T{};
                        gx[base + k * plane] = g * (probs[base + k * plane] - onehot);
                    }
                }
            }
            nd.parents[0].node()->accumulate(gx);
        });
}

template void adamw_step<float>(ParamStoreT<float>&, AdamWStateT<float>&, const AdamWConfig&);
template void adamw_step<double>(ParamStoreT<double>&, AdamWStateT<double>&, const AdamWConfig&);
template VarT<float> cross_entropy_loss<float>(const VarT<float>&,
                                               const TensorT<std::uint8_t>&);
template VarT<double> cross_entropy_loss<double>(const VarT<double>&,
                                                 const TensorT<std::uint8_t>&);

} // namespace hairseg
