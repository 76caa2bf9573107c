#include "hairseg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

namespace hairseg {

namespace {

thread_local bool g_grad_enabled = true;

// Splits a shape at `axis` into [outer, n, inner] extents for strided
// reductions along one axis.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    HS_CHECK_SHAPE(axis < shape.size(), "axis " << axis << " out of range for " << shape_str(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

} // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

namespace detail {

template <class T>
void VarNode<T>::accumulate(const TensorT<T>& g) {
    HS_CHECK_SHAPE(g.shape() == value.shape(),
                   "gradient shape " << shape_str(g.shape()) << " vs value "
                                     << shape_str(value.shape()));
    if (!grad) {
        grad = g;
        return;
    }
    T* dst = grad->data();
    const T* src = g.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <class T>
VarT<T> make_op(TensorT<T> value, std::vector<VarT<T>> parents,
                std::function<void(VarNode<T>&)> backward_fn) {
    auto node = std::make_shared<VarNode<T>>();
    node->value = std::move(value);
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p.requires_grad()) { needs = true; break; }
    node->requires_grad = needs;
    if (needs) {
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return VarT<T>(std::move(node));
}

template struct VarNode<float>;
template struct VarNode<double>;
template VarT<float> make_op<float>(TensorT<float>, std::vector<VarT<float>>,
                                    std::function<void(VarNode<float>&)>);
template VarT<double> make_op<double>(TensorT<double>, std::vector<VarT<double>>,
                                      std::function<void(VarNode<double>&)>);

} // namespace detail

template <class T>
VarT<T>::VarT(TensorT<T> value, bool requires_grad)
    : node_(std::make_shared<detail::VarNode<T>>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

template <class T>
TensorT<T> VarT<T>::grad() const {
    HS_CHECK_CONTRACT(node_ != nullptr, "grad() on an undefined variable");
    if (node_->grad) return *node_->grad;
    return zeros_like(node_->value);
}

template <class T>
TensorT<T>& VarT<T>::leaf_value() {
    HS_CHECK_CONTRACT(node_ && !node_->backward_fn,
                      "in-place value access is restricted to leaf variables");
    return node_->value;
}

template <class T>
void backward(const VarT<T>& loss) {
    HS_CHECK_CONTRACT(loss.defined(), "backward() on an undefined variable");
    HS_CHECK_CONTRACT(loss.size() == 1,
                      "backward() requires a scalar root, got " << shape_str(loss.shape()));
    HS_CHECK_CONTRACT(loss.requires_grad(),
                      "backward() root is not connected to any differentiable leaf");

    // Iterative post-order DFS; each node appears once in `order`.
    std::vector<detail::VarNode<T>*> order;
    std::unordered_set<const detail::VarNode<T>*> visited;
    struct Frame {
        detail::VarNode<T>* node;
        std::size_t next_parent;
    };
    std::vector<Frame> stack{{loss.node(), 0}};
    visited.insert(loss.node());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            detail::VarNode<T>* p = f.node->parents[f.next_parent++].node();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    loss.node()->accumulate(TensorT<T>::ones(loss.shape()));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::VarNode<T>* n = *it;
        if (n->backward_fn && n->grad) n->backward_fn(*n);
    }
}

// ---- elementwise ----

template <class T>
VarT<T> add(const VarT<T>& a, const VarT<T>& b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    const bool same = av.shape() == bv.shape();
    // Otherwise b broadcasts over leading axes (bias add): b's shape must be
    // a suffix of a's shape.
    if (!same) {
        const auto& as = av.shape();
        const auto& bs = bv.shape();
        HS_CHECK_SHAPE(bs.size() <= as.size() &&
                           std::equal(bs.rbegin(), bs.rend(), as.rbegin()),
                       "add: cannot broadcast " << shape_str(bs) << " onto " << shape_str(as));
    }
    TensorT<T> out(av.shape());
    const std::size_t bn = bv.size();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i % bn];
    return detail::make_op<T>(std::move(out), {a, b}, [same](detail::VarNode<T>& n) {
        const TensorT<T>& g = *n.grad;
        if (n.parents[0].requires_grad()) n.parents[0].node()->accumulate(g);
        if (n.parents[1].requires_grad()) {
            if (same) {
                n.parents[1].node()->accumulate(g);
            } else {
                TensorT<T> gb(n.parents[1].shape());
                const std::size_t bn2 = gb.size();
                for (std::size_t i = 0; i < g.size(); ++i) gb[i % bn2] += g[i];
                n.parents[1].node()->accumulate(gb);
            }
        }
    });
}

template <class T>
VarT<T> sub(const VarT<T>& a, const VarT<T>& b) {
    HS_CHECK_SHAPE(a.shape() == b.shape(), "sub: shape mismatch " << shape_str(a.shape())
                                                                  << " vs " << shape_str(b.shape()));
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](detail::VarNode<T>& n) {
        const TensorT<T>& g = *n.grad;
        if (n.parents[0].requires_grad()) n.parents[0].node()->accumulate(g);
        if (n.parents[1].requires_grad()) {
            TensorT<T> gb(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] = -g[i];
            n.parents[1].node()->accumulate(gb);
        }
    });
}

template <class T>
VarT<T> mul(const VarT<T>& a, const VarT<T>& b) {
    HS_CHECK_SHAPE(a.shape() == b.shape(), "mul: shape mismatch " << shape_str(a.shape())
                                                                  << " vs " << shape_str(b.shape()));
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    return detail::make_op<T>(std::move(out), {a, b}, [](detail::VarNode<T>& n) {
        const TensorT<T>& g = *n.grad;
        const TensorT<T>& av = n.parents[0].value();
        const TensorT<T>& bv = n.parents[1].value();
        if (n.parents[0].requires_grad()) {
            TensorT<T> ga(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * bv[i];
            n.parents[0].node()->accumulate(ga);
        }
        if (n.parents[1].requires_grad()) {
            TensorT<T> gb(g.shape());
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] = g[i] * av[i];
            n.parents[1].node()->accumulate(gb);
        }
    });
}

template <class T>
VarT<T> mul_scalar(const VarT<T>& a, T s) {
    TensorT<T> out(a.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * s;
    return detail::make_op<T>(std::move(out), {a}, [s](detail::VarNode<T>& n) {
        const TensorT<T>& g = *n.grad;
        TensorT<T> ga(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s;
        n.parents[0].node()->accumulate(ga);
    });
}

// ---- matmul ----

namespace {

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n,
             const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            const T* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n,
             const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        T* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = b + j * k;
            T acc{};
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] += acc;
        }
    }
}

// C[k,n] += A[m,k]^T * B[m,n]
template <class T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n,
             const T* a, const T* b, T* c) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            T* crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

} // namespace

template <class T>
VarT<T> matmul(const VarT<T>& a, const VarT<T>& b) {
    const auto& as = a.shape();
    const auto& bs = b.shape();
    HS_CHECK_SHAPE(as.size() >= 2 && bs.size() == as.size(),
                   "matmul: ranks " << shape_str(as) << " vs " << shape_str(bs));
    HS_CHECK_SHAPE(std::equal(as.begin(), as.end() - 2, bs.begin()),
                   "matmul: batch extents differ, " << shape_str(as) << " vs " << shape_str(bs));
    const std::size_t m = as[as.size() - 2];
    const std::size_t k = as[as.size() - 1];
    const std::size_t k2 = bs[bs.size() - 2];
    const std::size_t n = bs[bs.size() - 1];
    HS_CHECK_SHAPE(k == k2, "matmul: inner extents differ, " << shape_str(as) << " vs "
                                                             << shape_str(bs));
    std::size_t batch = 1;
    for (std::size_t i = 0; i + 2 < as.size(); ++i) batch *= as[i];

    Shape out_shape(as.begin(), as.end() - 2);
    out_shape.push_back(m);
    out_shape.push_back(n);
    TensorT<T> out(std::move(out_shape));
    for (std::size_t g = 0; g < batch; ++g)
        gemm_nn(m, k, n, a.value().data() + g * m * k, b.value().data() + g * k * n,
                out.data() + g * m * n);

    return detail::make_op<T>(std::move(out), {a, b}, [m, k, n, batch](detail::VarNode<T>& nd) {
        const TensorT<T>& g = *nd.grad;
        const TensorT<T>& av = nd.parents[0].value();
        const TensorT<T>& bv = nd.parents[1].value();
        if (nd.parents[0].requires_grad()) {
            TensorT<T> da(av.shape());
            for (std::size_t q = 0; q < batch; ++q)
                gemm_nt(m, n, k, g.data() + q * m * n, bv.data() + q * k * n,
                        da.data() + q * m * k);
            nd.parents[0].node()->accumulate(da);
        }
        if (nd.parents[1].requires_grad()) {
            TensorT<T> db(bv.shape());
            for (std::size_t q = 0; q < batch; ++q)
                gemm_tn(m, k, n, av.data() + q * m * k, g.data() + q * m * n,
                        db.data() + q * k * n);
            nd.parents[1].node()->accumulate(db);
        }
    });
}

// ---- shape ops ----

template <class T>
VarT<T> reshape(const VarT<T>& x, Shape shape) {
    HS_CHECK_SHAPE(shape_numel(shape) == x.size(),
                   "reshape: " << shape_str(x.shape()) << " to " << shape_str(shape)
                               << " changes element count");
    TensorT<T> out(std::move(shape), x.value().vec());
    return detail::make_op<T>(std::move(out), {x}, [](detail::VarNode<T>& n) {
        TensorT<T> gx(n.parents[0].shape(), n.grad->vec());
        n.parents[0].node()->accumulate(gx);
    });
}

namespace {

template <class T>
TensorT<T> permute_tensor(const TensorT<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.rank();
    Shape out_shape(r);
    for (std::size_t i = 0; i < r; ++i) out_shape[i] = x.extent(axes[i]);

    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.extent(i);
    // stride of output axis i in the input layout
    std::vector<std::size_t> strides(r);
    for (std::size_t i = 0; i < r; ++i) strides[i] = in_strides[axes[i]];

    TensorT<T> out(out_shape);
    std::vector<std::size_t> idx(r, 0);
    const T* src = x.data();
    T* dst = out.data();
    std::size_t src_off = 0;
    const std::size_t total = out.size();
    for (std::size_t flat = 0; flat < total; ++flat) {
        dst[flat] = src[src_off];
        for (std::size_t ax = r; ax-- > 0;) {
            if (++idx[ax] < out_shape[ax]) {
                src_off += strides[ax];
                break;
            }
            src_off -= strides[ax] * (out_shape[ax] - 1);
            idx[ax] = 0;
        }
    }
    return out;
}

} // namespace

template <class T>
VarT<T> permute(const VarT<T>& x, const std::vector<std::size_t>& axes) {
    const std::size_t r = x.shape().size();
    HS_CHECK_SHAPE(axes.size() == r, "permute: axes count " << axes.size() << " vs rank " << r);
    std::vector<bool> seen(r, false);
    for (std::size_t a : axes) {
        HS_CHECK_SHAPE(a < r && !seen[a], "permute: invalid axis list");
        seen[a] = true;
    }
    TensorT<T> out = permute_tensor(x.value(), axes);
    std::vector<std::size_t> inverse(r);
    for (std::size_t i = 0; i < r; ++i) inverse[axes[i]] = i;
    return detail::make_op<T>(std::move(out), {x}, [inverse](detail::VarNode<T>& n) {
        n.parents[0].node()->accumulate(permute_tensor(*n.grad, inverse));
    });
}

template <class T>
VarT<T> concat(const std::vector<VarT<T>>& xs, std::size_t axis) {
    HS_CHECK_SHAPE(!xs.empty(), "concat: empty input list");
    const Shape& first = xs[0].shape();
    HS_CHECK_SHAPE(axis < first.size(), "concat: axis " << axis << " out of range");
    std::size_t axis_total = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        HS_CHECK_SHAPE(s.size() == first.size(), "concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            HS_CHECK_SHAPE(i == axis || s[i] == first[i],
                           "concat: extent mismatch at axis " << i << ": " << shape_str(s)
                                                              << " vs " << shape_str(first));
        axis_total += s[axis];
    }
    Shape out_shape = first;
    out_shape[axis] = axis_total;

    AxisSplit sp = split_axis(out_shape, axis);
    TensorT<T> out(out_shape);
    std::vector<std::size_t> piece(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) piece[i] = xs[i].shape()[axis];

    T* dst = out.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        std::size_t row = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const T* src = xs[i].value().data() + o * piece[i] * sp.inner;
            std::copy(src, src + piece[i] * sp.inner,
                      dst + (o * sp.n + row) * sp.inner);
            row += piece[i];
        }
    }

    return detail::make_op<T>(std::move(out), xs, [sp, piece](detail::VarNode<T>& n) {
        const TensorT<T>& g = *n.grad;
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            if (!n.parents[i].requires_grad()) continue;
            TensorT<T> gx(n.parents[i].shape());
            std::size_t row = 0;
            for (std::size_t j = 0; j < i; ++j) row += piece[j];
            for (std::size_t o = 0; o < sp.outer; ++o) {
                const T* src = g.data() + (o * sp.n + row) * sp.inner;
                std::copy(src, src + piece[i] * sp.inner,
                          gx.data() + o * piece[i] * sp.inner);
            }
            n.parents[i].node()->accumulate(gx);
        }
    });
}

// ---- nonlinearities ----

template <class T>
VarT<T> softmax(const VarT<T>& x, std::size_t axis) {
    AxisSplit sp = split_axis(x.shape(), axis);
    TensorT<T> out(x.shape());
    const T* src = x.value().data();
    T* dst = out.data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t in = 0; in < sp.inner; ++in) {
            const std::size_t base = o * sp.n * sp.inner + in;
            T mx = src[base];
            for (std::size_t i = 1; i < sp.n; ++i)
                mx = std::max(mx, src[base + i * sp.inner]);
            T denom{};
            for (std::size_t i = 0; i < sp.n; ++i) {
                const T e = std::exp(src[base + i * sp.inner] - mx);
                dst[base + i * sp.inner] = e;
                denom += e;
            }
            const T inv = T{1} / denom;
            for (std::size_t i = 0; i < sp.n; ++i) dst[base + i * sp.inner] *= inv;
        }
    }
    return detail::make_op<T>(std::move(out), {x}, [sp](detail::VarNode<T>& n) {
        const TensorT<T>& y = n.value;
        const TensorT<T>& g = *n.grad;
        TensorT<T> gx(y.shape());
        for (std::size_t o = 0; o < sp.outer; ++o) {
            for (std::size_t in = 0; in < sp.inner; ++in) {
                const std::size_t base = o * sp.n * sp.inner + in;
                T dot{};
                for (std::size_t i = 0; i < sp.n; ++i)
                    dot += g[base + i * sp.inner] * y[base + i * sp.inner];
                for (std::size_t i = 0; i < sp.n; ++i) {
                    const std::size_t k = base + i * sp.inner;
                    gx[k] = y[k] * (g[k] - dot);
                }
            }
        }
        n.parents[0].node()->accumulate(gx);
    });
}

template <class T>
VarT<T> layer_norm(const VarT<T>& x, const VarT<T>& gamma, const VarT<T>& beta, T eps) {
    const std::size_t c = x.shape().back();
    HS_CHECK_SHAPE(gamma.shape() == Shape{c} && beta.shape() == Shape{c},
                   "layer_norm: affine params " << shape_str(gamma.shape()) << "/"
                                                << shape_str(beta.shape())
                                                << " must match normalized extent " << c);
    const std::size_t rows = x.size() / c;
    TensorT<T> out(x.shape());
    TensorT<T> xhat(x.shape());
    TensorT<T> inv_sigma(Shape{rows});
    const T* src = x.value().data();
    const T* gm = gamma.value().data();
    const T* bt = beta.value().data();
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = src + r * c;
        T mu{};
        for (std::size_t i = 0; i < c; ++i) mu += row[i];
        mu /= static_cast<T>(c);
        T var{};
        for (std::size_t i = 0; i < c; ++i) {
            const T d = row[i] - mu;
            var += d * d;
        }
        var /= static_cast<T>(c);
        const T inv = T{1} / std::sqrt(var + eps);
        inv_sigma[r] = inv;
        T* xh = xhat.data() + r * c;
        T* dst = out.data() + r * c;
        for (std::size_t i = 0; i < c; ++i) {
            xh[i] = (row[i] - mu) * inv;
            dst[i] = gm[i] * xh[i] + bt[i];
        }
    }
    return detail::make_op<T>(
        std::move(out), {x, gamma, beta},
        [c, rows, xhat = std::move(xhat),
         inv_sigma = std::move(inv_sigma)](detail::VarNode<T>& n) {
            const TensorT<T>& g = *n.grad;
            const TensorT<T>& gm = n.parents[1].value();
            if (n.parents[0].requires_grad()) {
                TensorT<T> gx(n.parents[0].shape());
                for (std::size_t r = 0; r < rows; ++r) {
                    const T* grow = g.data() + r * c;
                    const T* xh = xhat.data() + r * c;
                    T* dst = gx.data() + r * c;
                    T sum_g{}, sum_gx{};
                    for (std::size_t i = 0; i < c; ++i) {
                        const T gg = grow[i] * gm[i];
                        sum_g += gg;
                        sum_gx += gg * xh[i];
                    }
                    const T inv_c = T{1} / static_cast<T>(c);
                    for (std::size_t i = 0; i < c; ++i) {
                        const T gg = grow[i] * gm[i];
                        dst[i] = inv_sigma[r] * (gg - sum_g * inv_c - xh[i] * sum_gx * inv_c);
                    }
                }
                n.parents[0].node()->accumulate(gx);
            }
            if (n.parents[1].requires_grad()) {
                TensorT<T> ggamma(Shape{c});
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < c; ++i)
                        ggamma[i] += g[r * c + i] * xhat[r * c + i];
                n.parents[1].node()->accumulate(ggamma);
            }
            if (n.parents[2].requires_grad()) {
                TensorT<T> gbeta(Shape{c});
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t i = 0; i < c; ++i) gbeta[i] += g[r * c + i];
                n.parents[2].node()->accumulate(gbeta);
            }
        });
}

namespace {

// Exact Gaussian-CDF form, not the tanh approximation.
template <class T>
T gauss_cdf(T x) {
    return T{0.5} * (T{1} + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gauss_pdf(T x) {
    constexpr T inv_sqrt_2pi = T{0.3989422804014326779};
    return inv_sqrt_2pi * std::exp(T{-0.5} * x * x);
}

} // namespace

template <class T>
VarT<T> gelu(const VarT<T>& x) {
    TensorT<T> out(x.shape());
    const T* src = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] * gauss_cdf(src[i]);
    return detail::make_op<T>(std::move(out), {x}, [](detail::VarNode<T>& n) {
        const TensorT<T>& xv = n.parents[0].value();
        const TensorT<T>& g = *n.grad;
        TensorT<T> gx(xv.shape());
        for (std::size_t i = 0; i < gx.size(); ++i)
            gx[i] = g[i] * (gauss_cdf(xv[i]) + xv[i] * gauss_pdf(xv[i]));
        n.parents[0].node()->accumulate(gx);
    });
}

template <class T>
VarT<T> relu(const VarT<T>& x) {
    TensorT<T> out(x.shape());
    const T* src = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] > T{} ? src[i] : T{};
    return detail::make_op<T>(std::move(out), {x}, [](detail::VarNode<T>& n) {
        const TensorT<T>& xv = n.parents[0].value();
        const TensorT<T>& g = *n.grad;
        TensorT<T> gx(xv.shape());
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = xv[i] > T{} ? g[i] : T{};
        n.parents[0].node()->accumulate(gx);
    });
}

template <class T>
VarT<T> dropout(const VarT<T>& x, double p, Mode mode, RngState& rng) {
    HS_CHECK_PARAM(p >= 0.0 && p < 1.0, "dropout: probability " << p << " outside [0, 1)");
    if (mode == Mode::Eval) return x;
    const T scale = static_cast<T>(1.0 / (1.0 - p));
    TensorT<T> mask(x.shape());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.next_uniform() >= p ? scale : T{};
    TensorT<T> out(x.shape());
    const T* src = x.value().data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = src[i] * mask[i];
    return detail::make_op<T>(std::move(out), {x},
                              [mask = std::move(mask)](detail::VarNode<T>& n) {
                                  const TensorT<T>& g = *n.grad;
                                  TensorT<T> gx(g.shape());
                                  for (std::size_t i = 0; i < gx.size(); ++i)
                                      gx[i] = g[i] * mask[i];
                                  n.parents[0].node()->accumulate(gx);
                              });
}

// ---- reductions ----

template <class T>
VarT<T> sum(const VarT<T>& x) {
    T acc{};
    for (std::size_t i = 0; i < x.size(); ++i) acc += x.value()[i];
    return detail::make_op<T>(TensorT<T>::scalar(acc), {x}, [](detail::VarNode<T>& n) {
        const T g = (*n.grad)[0];
        n.parents[0].node()->accumulate(TensorT<T>::full(n.parents[0].shape(), g));
    });
}

template <class T>
VarT<T> mean(const VarT<T>& x) {
    HS_CHECK_SHAPE(x.size() > 0, "mean of an empty tensor");
    T acc{};
    for (std::size_t i = 0; i < x.size(); ++i) acc += x.value()[i];
    const T inv = T{1} / static_cast<T>(x.size());
    return detail::make_op<T>(TensorT<T>::scalar(acc * inv), {x}, [inv](detail::VarNode<T>& n) {
        const T g = (*n.grad)[0] * inv;
        n.parents[0].node()->accumulate(TensorT<T>::full(n.parents[0].shape(), g));
    });
}

// ---- explicit instantiations ----

#define HS_INSTANTIATE_OPS(T)                                                            \
    template class VarT<T>;                                                              \
    template void backward<T>(const VarT<T>&);                                           \
    template VarT<T> add<T>(const VarT<T>&, const VarT<T>&);                             \
    template VarT<T> sub<T>(const VarT<T>&, const VarT<T>&);                             \
    template VarT<T> mul<T>(const VarT<T>&, const VarT<T>&);                             \
    template VarT<T> mul_scalar<T>(const VarT<T>&, T);                                   \
    template VarT<T> matmul<T>(const VarT<T>&, const VarT<T>&);                          \
    template VarT<T> reshape<T>(const VarT<T>&, Shape);                                  \
    template VarT<T> permute<T>(const VarT<T>&, const std::vector<std::size_t>&);        \
    template VarT<T> concat<T>(const std::vector<VarT<T>>&, std::size_t);                \
    template VarT<T> softmax<T>(const VarT<T>&, std::size_t);                            \
    template VarT<T> layer_norm<T>(const VarT<T>&, const VarT<T>&, const VarT<T>&, T);   \
    template VarT<T> gelu<T>(const VarT<T>&);                                            \
    template VarT<T> relu<T>(const VarT<T>&);                                            \
    template VarT<T> dropout<T>(const VarT<T>&, double, Mode, RngState&);                \
    template VarT<T> sum<T>(const VarT<T>&);                                             \
    template VarT<T> mean<T>(const VarT<T>&);

HS_INSTANTIATE_OPS(float)
HS_INSTANTIATE_OPS(double)

#undef HS_INSTANTIATE_OPS

} // namespace hairseg
