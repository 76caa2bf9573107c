#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "hairseg/rng.hpp"
#include "hairseg/tensor.hpp"

namespace hairseg {

enum class Mode { Train, Eval };

template <class T>
class VarT;

namespace detail {

// One record in the compute graph. Children hold shared ownership of their
// parents, so the graph is acyclic by construction and freed with the root.
template <class T>
struct VarNode {
    TensorT<T> value;
    std::optional<TensorT<T>> grad;
    bool requires_grad = false;
    std::vector<VarT<T>> parents;
    std::function<void(VarNode<T>&)> backward_fn;

    void accumulate(const TensorT<T>& g);
};

template <class T>
VarT<T> make_op(TensorT<T> value, std::vector<VarT<T>> parents,
                std::function<void(VarNode<T>&)> backward_fn);

} // namespace detail

// Differentiable tensor handle. Copies share the underlying node, matching
// the immutability contract: values are written once at construction and
// only gradients mutate afterwards, inside a single backward pass.
template <class T>
class VarT {
public:
    VarT() = default;
    explicit VarT(TensorT<T> value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const TensorT<T>& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    // Gradient of the last backward pass; zeros when the node was never
    // reached (a leaf disconnected from the loss has an all-zero gradient).
    TensorT<T> grad() const;
    bool grad_populated() const { return node_ && node_->grad.has_value(); }
    void zero_grad() { if (node_) node_->grad.reset(); }

    // In-place update hook for the optimizer; valid on leaves only.
    TensorT<T>& leaf_value();

    detail::VarNode<T>* node() const noexcept { return node_.get(); }

private:
    explicit VarT(std::shared_ptr<detail::VarNode<T>> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::VarNode<T>> node_;

    template <class U>
    friend VarT<U> detail::make_op(TensorT<U>, std::vector<VarT<U>>,
                                   std::function<void(detail::VarNode<U>&)>);
};

using Var = VarT<float>;
using Var64 = VarT<double>;

// Reverse-mode accumulation from a scalar root. Visits each reachable node
// exactly once in reverse topological order; gradients sum over fan-out.
template <class T>
void backward(const VarT<T>& loss);

// Graph recording can be suspended for pure evaluation passes.
bool grad_enabled() noexcept;
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// ---- differentiable primitives ----

struct Conv2dSpec {
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t groups = 1;
};

template <class T> VarT<T> add(const VarT<T>& a, const VarT<T>& b);
template <class T> VarT<T> sub(const VarT<T>& a, const VarT<T>& b);
template <class T> VarT<T> mul(const VarT<T>& a, const VarT<T>& b);
template <class T> VarT<T> mul_scalar(const VarT<T>& a, T s);

// Matrix product over the trailing two axes; leading axes are batch and
// must match exactly. Backward: dA = dC.B^T, dB = A^T.dC per batch slice.
template <class T> VarT<T> matmul(const VarT<T>& a, const VarT<T>& b);

template <class T> VarT<T> reshape(const VarT<T>& x, Shape shape);
template <class T> VarT<T> permute(const VarT<T>& x, const std::vector<std::size_t>& axes);
template <class T> VarT<T> concat(const std::vector<VarT<T>>& xs, std::size_t axis);

template <class T> VarT<T> softmax(const VarT<T>& x, std::size_t axis);
template <class T> VarT<T> layer_norm(const VarT<T>& x, const VarT<T>& gamma,
                                      const VarT<T>& beta, T eps);
template <class T> VarT<T> gelu(const VarT<T>& x);
template <class T> VarT<T> relu(const VarT<T>& x);

// Cross-correlation (no kernel flip). x is [C,H,W] or [B,C,H,W], w is
// [C_out, C_in/groups, kh, kw], bias [C_out] or undefined.
template <class T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias, Conv2dSpec spec);

// Half-pixel-center source mapping with edge clamp; exact on constants.
template <class T>
VarT<T> bilinear_upsample(const VarT<T>& x, std::size_t out_h, std::size_t out_w);

// Train mode zeroes each element with probability p and scales survivors by
// 1/(1-p); eval mode is the identity (same handle, no copy).
template <class T>
VarT<T> dropout(const VarT<T>& x, double p, Mode mode, RngState& rng);

template <class T> VarT<T> sum(const VarT<T>& x);
template <class T> VarT<T> mean(const VarT<T>& x);

} // namespace hairseg
