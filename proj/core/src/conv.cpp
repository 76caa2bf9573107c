#include <algorithm>
#include <cmath>

#include "hairseg/autodiff.hpp"

namespace hairseg {

namespace {

// Valid output range [lo, hi] for which 0 <= o*stride + k_off - pad < in_extent.
void conv_bounds(long in_extent, long k_off, long pad, long stride, long out_extent,
                 long& lo, long& hi) {
    const long num_lo = pad - k_off;
    lo = num_lo <= 0 ? 0 : (num_lo + stride - 1) / stride;
    const long num_hi = in_extent - 1 + pad - k_off;
    hi = num_hi < 0 ? -1 : num_hi / stride;
    hi = std::min(hi, out_extent - 1);
}

struct ConvDims {
    std::size_t cin, h, w, cout, kh, kw, oh, ow, groups, stride, pad;
    std::size_t cin_g, cout_g;
};

template <class T>
void conv2d_forward_one(const T* x, const T* wt, const T* b, T* y, const ConvDims& d) {
    for (std::size_t g = 0; g < d.groups; ++g) {
        for (std::size_t cog = 0; cog < d.cout_g; ++cog) {
            const std::size_t co = g * d.cout_g + cog;
            T* ych = y + co * d.oh * d.ow;
            std::fill(ych, ych + d.oh * d.ow, b ? b[co] : T{});
            for (std::size_t cig = 0; cig < d.cin_g; ++cig) {
                const std::size_t ci = g * d.cin_g + cig;
                const T* xch = x + ci * d.h * d.w;
                const T* wch = wt + (co * d.cin_g + cig) * d.kh * d.kw;
                for (std::size_t r = 0; r < d.kh; ++r) {
                    long oy_lo, oy_hi;
                    conv_bounds((long)d.h, (long)r, (long)d.pad, (long)d.stride, (long)d.oh,
                                oy_lo, oy_hi);
                    for (std::size_t s = 0; s < d.kw; ++s) {
                        const T wv = wch[r * d.kw + s];
                        long ox_lo, ox_hi;
                        conv_bounds((long)d.w, (long)s, (long)d.pad, (long)d.stride, (long)d.ow,
                                    ox_lo, ox_hi);
                        for (long oy = oy_lo; oy <= oy_hi; ++oy) {
                            const long iy = oy * (long)d.stride + (long)r - (long)d.pad;
                            const T* xrow = xch + (std::size_t)iy * d.w;
                            T* yrow = ych + (std::size_t)oy * d.ow;
                            const long ix0 = ox_lo * (long)d.stride + (long)s - (long)d.pad;
                            if (d.stride == 1) {
                                const T* xp = xrow + ix0;
                                for (long ox = ox_lo; ox <= ox_hi; ++ox)
                                    yrow[ox] += wv * xp[ox - ox_lo];
                            } else {
                                long ix = ix0;
                                for (long ox = ox_lo; ox <= ox_hi; ++ox, ix += (long)d.stride)
                                    yrow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_backward_one(const T* x, const T* wt, const T* gy,
                         T* gx, T* gw, T* gb, const ConvDims& d) {
    for (std::size_t g = 0; g < d.groups; ++g) {
        for (std::size_t cog = 0; cog < d.cout_g; ++cog) {
            const std::size_t co = g * d.cout_g + cog;
            const T* gych = gy + co * d.oh * d.ow;
            if (gb) {
                T acc{};
                for (std::size_t i = 0; i < d.oh * d.ow; ++i) acc += gych[i];
                gb[co] += acc;
            }
            for (std::size_t cig = 0; cig < d.cin_g; ++cig) {
                const std::size_t ci = g * d.cin_g + cig;
                const T* xch = x + ci * d.h * d.w;
                T* gxch = gx ? gx + ci * d.h * d.w : nullptr;
                const T* wch = wt + (co * d.cin_g + cig) * d.kh * d.kw;
                T* gwch = gw ? gw + (co * d.cin_g + cig) * d.kh * d.kw : nullptr;
                for (std::size_t r = 0; r < d.kh; ++r) {
                    long oy_lo, oy_hi;
                    conv_bounds((long)d.h, (long)r, (long)d.pad, (long)d.stride, (long)d.oh,
                                oy_lo, oy_hi);
                    for (std::size_t s = 0; s < d.kw; ++s) {
                        long ox_lo, ox_hi;
                        conv_bounds((long)d.w, (long)s, (long)d.pad, (long)d.stride, (long)d.ow,
                                    ox_lo, ox_hi);
                        const T wv = wch[r * d.kw + s];
                        T wacc{};
                        for (long oy = oy_lo; oy <= oy_hi; ++oy) {
                            const long iy = oy * (long)d.stride + (long)r - (long)d.pad;
                            const T* xrow = xch + (std::size_t)iy * d.w;
                            T* gxrow = gxch ? gxch + (std::size_t)iy * d.w : nullptr;
                            const T* gyrow = gych + (std::size_t)oy * d.ow;
                            long ix = ox_lo * (long)d.stride + (long)s - (long)d.pad;
                            for (long ox = ox_lo; ox <= ox_hi; ++ox, ix += (long)d.stride) {
                                const T gv = gyrow[ox];
                                wacc += xrow[ix] * gv;
                                if (gxrow) gxrow[ix] += wv * gv;
                            }
                        }
                        if (gwch) gwch[r * d.kw + s] += wacc;
                    }
                }
            }
        }
    }
}

} // namespace

template <class T>
VarT<T> conv2d(const VarT<T>& x, const VarT<T>& w, const VarT<T>& bias, Conv2dSpec spec) {
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    HS_CHECK_SHAPE(xs.size() == 3 || xs.size() == 4,
                   "conv2d: input must be [C,H,W] or [B,C,H,W], got " << shape_str(xs));
    HS_CHECK_SHAPE(ws.size() == 4, "conv2d: weight must be rank 4, got " << shape_str(ws));
    HS_CHECK_PARAM(spec.stride >= 1 && spec.groups >= 1, "conv2d: stride and groups must be >= 1");

    const bool batched = xs.size() == 4;
    const std::size_t batch = batched ? xs[0] : 1;
    ConvDims d;
    d.cin = xs[batched ? 1 : 0];
    d.h = xs[batched ? 2 : 1];
    d.w = xs[batched ? 3 : 2];
    d.cout = ws[0];
    d.kh = ws[2];
    d.kw = ws[3];
    d.groups = spec.groups;
    d.stride = spec.stride;
    d.pad = spec.padding;
    HS_CHECK_SHAPE(d.cin % d.groups == 0, "conv2d: input channels " << d.cin
                                              << " not divisible by groups " << d.groups);
    HS_CHECK_SHAPE(d.cout % d.groups == 0, "conv2d: output channels " << d.cout
                                               << " not divisible by groups " << d.groups);
    d.cin_g = d.cin / d.groups;
    d.cout_g = d.cout / d.groups;
    HS_CHECK_SHAPE(ws[1] == d.cin_g, "conv2d: weight " << shape_str(ws) << " expects "
                                                       << ws[1] * d.groups
                                                       << " input channels, input has " << d.cin);
    const long oh = ((long)d.h + 2 * (long)d.pad - (long)d.kh) / (long)d.stride + 1;
    const long ow = ((long)d.w + 2 * (long)d.pad - (long)d.kw) / (long)d.stride + 1;
    HS_CHECK_SHAPE(oh >= 1 && ow >= 1, "conv2d: non-positive output extent for input "
                                           << shape_str(xs) << ", kernel " << shape_str(ws)
                                           << ", stride " << d.stride << ", padding " << d.pad);
    d.oh = (std::size_t)oh;
    d.ow = (std::size_t)ow;
    if (bias.defined())
        HS_CHECK_SHAPE(bias.shape() == Shape{d.cout},
                       "conv2d: bias " << shape_str(bias.shape()) << " vs out channels " << d.cout);

    Shape out_shape = batched ? Shape{batch, d.cout, d.oh, d.ow} : Shape{d.cout, d.oh, d.ow};
    TensorT<T> out(out_shape);
    const std::size_t x_stride = d.cin * d.h * d.w;
    const std::size_t y_stride = d.cout * d.oh * d.ow;
    for (std::size_t n = 0; n < batch; ++n)
        conv2d_forward_one(x.value().data() + n * x_stride, w.value().data(),
                           bias.defined() ? bias.value().data() : nullptr,
                           out.data() + n * y_stride, d);

    std::vector<VarT<T>> parents{x, w};
    const bool has_bias = bias.defined();
    if (has_bias) parents.push_back(bias);
    return detail::make_op<T>(
        std::move(out), std::move(parents),
        [d, batch, x_stride, y_stride, has_bias](detail::VarNode<T>& n) {
            const TensorT<T>& gy = *n.grad;
            const TensorT<T>& xv = n.parents[0].value();
            const TensorT<T>& wv = n.parents[1].value();
            const bool need_x = n.parents[0].requires_grad();
            const bool need_w = n.parents[1].requires_grad();
            const bool need_b = has_bias && n.parents[2].requires_grad();
            TensorT<T> gx = need_x ? TensorT<T>(xv.shape()) : TensorT<T>();
            TensorT<T> gw = need_w ? TensorT<T>(wv.shape()) : TensorT<T>();
            TensorT<T> gb = need_b ? TensorT<T>(n.parents[2].shape()) : TensorT<T>();
            for (std::size_t q = 0; q < batch; ++q)
                conv2d_backward_one(xv.data() + q * x_stride, wv.data(),
                                    gy.data() + q * y_stride,
                                    need_x ? gx.data() + q * x_stride : nullptr,
                                    need_w ? gw.data() : nullptr,
                                    need_b ? gb.data() : nullptr, d);
            if (need_x) n.parents[0].node()->accumulate(gx);
            if (need_w) n.parents[1].node()->accumulate(gw);
            if (need_b) n.parents[2].node()->accumulate(gb);
        });
}

namespace {

template <class T>
struct LerpTap {
    std::size_t i0, i1;
    T t;
};

// Half-pixel-center source mapping with edge clamping.
template <class T>
std::vector<LerpTap<T>> lerp_table(std::size_t in_extent, std::size_t out_extent) {
    std::vector<LerpTap<T>> tab(out_extent);
    const double scale = static_cast<double>(in_extent) / static_cast<double>(out_extent);
    for (std::size_t o = 0; o < out_extent; ++o) {
        double s = (static_cast<double>(o) + 0.5) * scale - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in_extent - 1));
        const std::size_t i0 = static_cast<std::size_t>(s);
        tab[o].i0 = i0;
        tab[o].i1 = std::min(i0 + 1, in_extent - 1);
        tab[o].t = static_cast<T>(s - static_cast<double>(i0));
    }
    return tab;
}

} // namespace

template <class T>
VarT<T> bilinear_upsample(const VarT<T>& x, std::size_t out_h, std::size_t out_w) {
    const auto& xs = x.shape();
    HS_CHECK_SHAPE(xs.size() == 3 || xs.size() == 4,
                   "bilinear_upsample: input must be [C,H,W] or [B,C,H,W], got " << shape_str(xs));
    HS_CHECK_PARAM(out_h >= 1 && out_w >= 1, "bilinear_upsample: output extents must be >= 1");
    const bool batched = xs.size() == 4;
    const std::size_t channels = (batched ? xs[0] : 1) * xs[batched ? 1 : 0];
    const std::size_t h = xs[batched ? 2 : 1];
    const std::size_t w = xs[batched ? 3 : 2];

    const auto ytab = lerp_table<T>(h, out_h);
    const auto xtab = lerp_table<T>(w, out_w);

    Shape out_shape = xs;
    out_shape[out_shape.size() - 2] = out_h;
    out_shape[out_shape.size() - 1] = out_w;
    TensorT<T> out(out_shape);
    for (std::size_t c = 0; c < channels; ++c) {
        const T* src = x.value().data() + c * h * w;
        T* dst = out.data() + c * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const auto& yt = ytab[oy];
            const T* row0 = src + yt.i0 * w;
            const T* row1 = src + yt.i1 * w;
            T* drow = dst + oy * out_w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const auto& xt = xtab[ox];
                // lerp form keeps constants exact
                const T top = row0[xt.i0] + xt.t * (row0[xt.i1] - row0[xt.i0]);
                const T bot = row1[xt.i0] + xt.t * (row1[xt.i1] - row1[xt.i0]);
                drow[ox] = top + yt.t * (bot - top);
            }
        }
    }

    return detail::make_op<T>(
        std::move(out), {x},
        [channels, h, w, out_h, out_w, ytab, xtab](detail::VarNode<T>& n) {
            const TensorT<T>& g = *n.grad;
            TensorT<T> gx(n.parents[0].shape());
            for (std::size_t c = 0; c < channels; ++c) {
                T* dst = gx.data() + c * h * w;
                const T* grow = g.data() + c * out_h * out_w;
                for (std::size_t oy = 0; oy < out_h; ++oy) {
                    const auto& yt = ytab[oy];
                    for (std::size_t ox = 0; ox < out_w; ++ox) {
                        const auto& xt = xtab[ox];
                        const T gv = grow[oy * out_w + ox];
                        dst[yt.i0 * w + xt.i0] += (T{1} - yt.t) * (T{1} - xt.t) * gv;
                        dst[yt.i0 * w + xt.i1] += (T{1} - yt.t) * xt.t * gv;
                        dst[yt.i1 * w + xt.i0] += yt.t * (T{1} - xt.t) * gv;
                        dst[yt.i1 * w + xt.i1] += yt.t * xt.t * gv;
                    }
                }
            }
            n.parents[0].node()->accumulate(gx);
        });
}

template VarT<float> conv2d<float>(const VarT<float>&, const VarT<float>&, const VarT<float>&,
                                   Conv2dSpec);
template VarT<double> conv2d<double>(const VarT<double>&, const VarT<double>&,
                                     const VarT<double>&, Conv2dSpec);
template VarT<float> bilinear_upsample<float>(const VarT<float>&, std::size_t, std::size_t);
template VarT<double> bilinear_upsample<double>(const VarT<double>&, std::size_t, std::size_t);

} // namespace hairseg
