#include "hairseg/model.hpp"

#include <cmath>
#include <functional>
#include <sstream>
#include <unordered_map>

#include "hairseg/serialize.hpp"

namespace hairseg {

namespace {

constexpr double kLayerNormEps = 1e-5;

enum class InitKind { Weight, Bias, Gamma, Beta };

// Canonical parameter enumeration. Initialization, serialization, and
// structural validation all walk this single order.
void for_each_param_spec(const ModelConfig& cfg,
                         const std::function<void(const std::string&, Shape, InitKind)>& fn) {
    std::size_t prev_channels = cfg.in_channels;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string sp = "enc.s" + std::to_string(s);
        const std::size_t c = cfg.stage_dims[s];
        const auto& pe = cfg.patch_embed[s];
        fn(sp + ".patch.w", {c, prev_channels, pe.kernel, pe.kernel}, InitKind::Weight);
        fn(sp + ".patch.bias", {c}, InitKind::Bias);
        fn(sp + ".patch.norm.gamma", {c}, InitKind::Gamma);
        fn(sp + ".patch.norm.beta", {c}, InitKind::Beta);
        for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
            const std::string bp = sp + ".blk" + std::to_string(b);
            fn(bp + ".norm1.gamma", {c}, InitKind::Gamma);
            fn(bp + ".norm1.beta", {c}, InitKind::Beta);
            for (const char* head : {"q", "k", "v", "proj"}) {
                fn(bp + ".attn." + std::string(head) + ".w", {c, c}, InitKind::Weight);
                fn(bp + ".attn." + std::string(head) + ".bias", {c}, InitKind::Bias);
            }
            if (cfg.sr_ratios[s] > 1) {
                const std::size_t sr = cfg.sr_ratios[s];
                fn(bp + ".attn.sr.w", {c, c, sr, sr}, InitKind::Weight);
                fn(bp + ".attn.sr.bias", {c}, InitKind::Bias);
                fn(bp + ".attn.srnorm.gamma", {c}, InitKind::Gamma);
                fn(bp + ".attn.srnorm.beta", {c}, InitKind::Beta);
            }
            fn(bp + ".norm2.gamma", {c}, InitKind::Gamma);
            fn(bp + ".norm2.beta", {c}, InitKind::Beta);
            const std::size_t ce = c * cfg.ffn_expansion;
            fn(bp + ".ffn.fc1.w", {c, ce}, InitKind::Weight);
            fn(bp + ".ffn.fc1.bias", {ce}, InitKind::Bias);
            fn(bp + ".ffn.dw.w", {ce, 1, 3, 3}, InitKind::Weight);
            fn(bp + ".ffn.dw.bias", {ce}, InitKind::Bias);
            fn(bp + ".ffn.fc2.w", {ce, c}, InitKind::Weight);
            fn(bp + ".ffn.fc2.bias", {c}, InitKind::Bias);
        }
        fn(sp + ".norm.gamma", {c}, InitKind::Gamma);
        fn(sp + ".norm.beta", {c}, InitKind::Beta);
        prev_channels = c;
    }
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string dp = "dec.proj" + std::to_string(s);
        fn(dp + ".w", {cfg.stage_dims[s], cfg.decoder_dim}, InitKind::Weight);
        fn(dp + ".bias", {cfg.decoder_dim}, InitKind::Bias);
    }
    fn("dec.fuse.w", {4 * cfg.decoder_dim, cfg.decoder_dim}, InitKind::Weight);
    fn("dec.fuse.bias", {cfg.decoder_dim}, InitKind::Bias);
    fn("dec.fusenorm.gamma", {cfg.decoder_dim}, InitKind::Gamma);
    fn("dec.fusenorm.beta", {cfg.decoder_dim}, InitKind::Beta);
    fn("dec.head.w", {cfg.num_classes, cfg.decoder_dim, 1, 1}, InitKind::Weight);
    fn("dec.head.bias", {cfg.num_classes}, InitKind::Bias);
}

} // namespace

std::vector<std::uint64_t> encode_structure(const ModelConfig& cfg) {
    std::vector<std::uint64_t> v{cfg.in_channels, cfg.num_classes};
    for (auto d : cfg.stage_dims) v.push_back(d);
    for (auto d : cfg.stage_depths) v.push_back(d);
    for (auto d : cfg.stage_heads) v.push_back(d);
    for (auto d : cfg.sr_ratios) v.push_back(d);
    v.push_back(cfg.ffn_expansion);
    v.push_back(cfg.decoder_dim);
    for (const auto& pe : cfg.patch_embed) {
        v.push_back(pe.kernel);
        v.push_back(pe.stride);
        v.push_back(pe.padding);
    }
    return v;
}

ModelConfig decode_structure(const std::vector<std::uint64_t>& v) {
    HS_CHECK(v.size() == 32, ErrorKind::Corrupt,
             "structure metadata has " << v.size() << " fields, expected 32");
    ModelConfig cfg;
    std::size_t i = 0;
    cfg.in_channels = v[i++];
    cfg.num_classes = v[i++];
    for (auto& d : cfg.stage_dims) d = v[i++];
    for (auto& d : cfg.stage_depths) d = v[i++];
    for (auto& d : cfg.stage_heads) d = v[i++];
    for (auto& d : cfg.sr_ratios) d = v[i++];
    cfg.ffn_expansion = v[i++];
    cfg.decoder_dim = v[i++];
    for (auto& pe : cfg.patch_embed) {
        pe.kernel = v[i++];
        pe.stride = v[i++];
        pe.padding = v[i++];
    }
    return cfg;
}

namespace {

// [B,C,h,w] -> [B,N,C]
template <class T>
VarT<T> spatial_to_tokens(const VarT<T>& x) {
    const auto& s = x.shape();
    return permute(reshape(x, {s[0], s[1], s[2] * s[3]}), {0, 2, 1});
}

// [B,N,C] -> [B,C,h,w]
template <class T>
VarT<T> tokens_to_spatial(const VarT<T>& x, std::size_t h, std::size_t w) {
    const auto& s = x.shape();
    return reshape(permute(x, {0, 2, 1}), {s[0], s[2], h, w});
}

// x [.., in] * w [in, out] + b
template <class T>
VarT<T> linear(const VarT<T>& x, const VarT<T>& w, const VarT<T>& b) {
    const auto& xs = x.shape();
    const std::size_t in = xs.back();
    const std::size_t rows = x.size() / in;
    VarT<T> flat = reshape(x, {rows, in});
    VarT<T> y = add(matmul(flat, w), b);
    Shape out_shape = xs;
    out_shape.back() = w.shape()[1];
    return reshape(y, std::move(out_shape));
}

} // namespace

void ModelConfig::validate() const {
    HS_CHECK_PARAM(in_channels >= 1, "config: in_channels must be >= 1");
    HS_CHECK_PARAM(num_classes >= 2, "config: num_classes must be >= 2");
    HS_CHECK_PARAM(decoder_dim >= 1, "config: decoder_dim must be >= 1");
    HS_CHECK_PARAM(ffn_expansion >= 1, "config: ffn_expansion must be >= 1");
    HS_CHECK_PARAM(dropout_p >= 0.0 && dropout_p < 1.0,
                   "config: dropout_p " << dropout_p << " outside [0, 1)");
    for (std::size_t i = 0; i < 4; ++i) {
        HS_CHECK_PARAM(stage_dims[i] >= 1 && stage_depths[i] >= 1 && stage_heads[i] >= 1 &&
                           sr_ratios[i] >= 1,
                       "config: stage " << i << " extents must be >= 1");
        HS_CHECK_PARAM(stage_dims[i] % stage_heads[i] == 0,
                       "config: stage_dims[" << i << "]=" << stage_dims[i]
                                             << " not divisible by stage_heads[" << i
                                             << "]=" << stage_heads[i]);
        HS_CHECK_PARAM(patch_embed[i].stride >= 1 && patch_embed[i].kernel >= 1,
                       "config: patch embed " << i << " kernel/stride must be >= 1");
    }
}

std::uint64_t ModelConfig::structure_hash() const {
    std::ostringstream os;
    os << "hairseg.model.v1";
    for (std::uint64_t v : encode_structure(*this)) os << ',' << v;
    return fnv1a64(os.str());
}

ModelConfig tiny_preset() {
    ModelConfig cfg;
    cfg.stage_dims = {16, 32, 64, 128};
    cfg.stage_depths = {1, 1, 1, 1};
    cfg.stage_heads = {1, 2, 4, 8};
    cfg.sr_ratios = {8, 4, 2, 1};
    cfg.decoder_dim = 64;
    return cfg;
}

ModelConfig b2_preset() {
    ModelConfig cfg;
    cfg.stage_dims = {64, 128, 320, 512};
    cfg.stage_depths = {3, 4, 6, 3};
    cfg.stage_heads = {1, 2, 5, 8};
    cfg.sr_ratios = {8, 4, 2, 1};
    cfg.decoder_dim = 768;
    return cfg;
}

ModelConfig preset_by_name(const std::string& name) {
    if (name == "tiny") return tiny_preset();
    if (name == "b2") return b2_preset();
    raise(ErrorKind::Param, "unknown model preset '" + name + "' (expected tiny or b2)");
}

template <class T>
ParamStoreT<T> init_params(const ModelConfig& cfg, RngState rng) {
    cfg.validate();
    ParamStoreT<T> store;
    for_each_param_spec(cfg, [&](const std::string& name, Shape shape, InitKind kind) {
        TensorT<T> t(std::move(shape));
        switch (kind) {
        case InitKind::Weight:
            for (std::size_t i = 0; i < t.size(); ++i)
                t[i] = static_cast<T>(rng.next_trunc_normal(0.02));
            break;
        case InitKind::Gamma:
            for (std::size_t i = 0; i < t.size(); ++i) t[i] = T{1};
            break;
        case InitKind::Bias:
        case InitKind::Beta:
            break; // zero-initialized
        }
        store.add(name, std::move(t));
    });
    return store;
}

template <class T>
VarT<T> efficient_self_attention(const VarT<T>& tokens, std::size_t h, std::size_t w,
                                 std::size_t heads, std::size_t sr_ratio,
                                 ParamStoreT<T>& params, const std::string& prefix,
                                 AttentionDebugT<T>* debug) {
    const auto& ts = tokens.shape();
    HS_CHECK_SHAPE(ts.size() == 3, "attention: tokens must be [B,N,C], got " << shape_str(ts));
    const std::size_t batch = ts[0], n = ts[1], c = ts[2];
    HS_CHECK_SHAPE(n == h * w,
                   "attention: token count " << n << " != h*w = " << h << "*" << w);
    HS_CHECK_SHAPE(c % heads == 0,
                   "attention: channels " << c << " not divisible by heads " << heads);
    const std::size_t dh = c / heads;
    const T eps = static_cast<T>(kLayerNormEps);

    VarT<T> q = linear(tokens, params.at(prefix + ".q.w"), params.at(prefix + ".q.bias"));

    VarT<T> kv = tokens;
    std::size_t m = n;
    if (sr_ratio > 1) {
        VarT<T> sp = tokens_to_spatial(tokens, h, w);
        sp = conv2d(sp, params.at(prefix + ".sr.w"), params.at(prefix + ".sr.bias"),
                    {sr_ratio, 0, 1});
        m = sp.shape()[2] * sp.shape()[3];
        kv = spatial_to_tokens(sp);
        kv = layer_norm(kv, params.at(prefix + ".srnorm.gamma"),
                        params.at(prefix + ".srnorm.beta"), eps);
    }
    VarT<T> k = linear(kv, params.at(prefix + ".k.w"), params.at(prefix + ".k.bias"));
    VarT<T> v = linear(kv, params.at(prefix + ".v.w"), params.at(prefix + ".v.bias"));

    auto split_heads = [&](const VarT<T>& t, std::size_t len) {
        return permute(reshape(t, {batch, len, heads, dh}), {0, 2, 1, 3});
    };
    VarT<T> qh = split_heads(q, n);
    VarT<T> kh = split_heads(k, m);
    VarT<T> vh = split_heads(v, m);

    VarT<T> scores = matmul(qh, permute(kh, {0, 1, 3, 2}));
    scores = mul_scalar(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
    VarT<T> attn = softmax(scores, 3);
    if (debug) debug->weights = attn.value();

    VarT<T> ctx = matmul(attn, vh); // [B,heads,N,dh]
    VarT<T> merged = reshape(permute(ctx, {0, 2, 1, 3}), {batch, n, c});
    return linear(merged, params.at(prefix + ".proj.w"), params.at(prefix + ".proj.bias"));
}

template <class T>
VarT<T> mix_ffn(const VarT<T>& tokens, std::size_t h, std::size_t w, std::size_t expansion,
                ParamStoreT<T>& params, const std::string& prefix) {
    const auto& ts = tokens.shape();
    HS_CHECK_SHAPE(ts.size() == 3, "mix_ffn: tokens must be [B,N,C], got " << shape_str(ts));
    HS_CHECK_SHAPE(ts[1] == h * w,
                   "mix_ffn: token count " << ts[1] << " != h*w = " << h << "*" << w);
    const std::size_t ce = ts[2] * expansion;

    VarT<T> e = linear(tokens, params.at(prefix + ".fc1.w"), params.at(prefix + ".fc1.bias"));
    VarT<T> sp = tokens_to_spatial(e, h, w);
    sp = conv2d(sp, params.at(prefix + ".dw.w"), params.at(prefix + ".dw.bias"), {1, 1, ce});
    sp = gelu(sp);
    VarT<T> t = spatial_to_tokens(sp);
    return linear(t, params.at(prefix + ".fc2.w"), params.at(prefix + ".fc2.bias"));
}

template <class T>
std::array<VarT<T>, 4> encode(const VarT<T>& x, ParamStoreT<T>& params, const ModelConfig& cfg) {
    cfg.validate();
    const auto& xs = x.shape();
    HS_CHECK_SHAPE(xs.size() == 4, "encode: input must be [B,C,H,W], got " << shape_str(xs));
    HS_CHECK_SHAPE(xs[1] == cfg.in_channels, "encode: input has " << xs[1] << " channels, config "
                                                                  << cfg.in_channels);
    HS_CHECK_SHAPE(xs[2] % 32 == 0, "encode: height " << xs[2] << " not divisible by 32");
    HS_CHECK_SHAPE(xs[3] % 32 == 0, "encode: width " << xs[3] << " not divisible by 32");
    const T eps = static_cast<T>(kLayerNormEps);

    std::array<VarT<T>, 4> features;
    VarT<T> cur = x;
    for (std::size_t s = 0; s < 4; ++s) {
        const std::string sp = "enc.s" + std::to_string(s);
        const auto& pe = cfg.patch_embed[s];
        cur = conv2d(cur, params.at(sp + ".patch.w"), params.at(sp + ".patch.bias"),
                     {pe.stride, pe.padding, 1});
        const std::size_t hh = cur.shape()[2];
        const std::size_t ww = cur.shape()[3];
        VarT<T> tokens = spatial_to_tokens(cur);
        tokens = layer_norm(tokens, params.at(sp + ".patch.norm.gamma"),
                            params.at(sp + ".patch.norm.beta"), eps);
        for (std::size_t b = 0; b < cfg.stage_depths[s]; ++b) {
            const std::string bp = sp + ".blk" + std::to_string(b);
            // pre-norm residual blocks
            VarT<T> t1 = layer_norm(tokens, params.at(bp + ".norm1.gamma"),
                                    params.at(bp + ".norm1.beta"), eps);
            tokens = add(tokens, efficient_self_attention<T>(t1, hh, ww, cfg.stage_heads[s],
                                                             cfg.sr_ratios[s], params,
                                                             bp + ".attn"));
            VarT<T> t2 = layer_norm(tokens, params.at(bp + ".norm2.gamma"),
                                    params.at(bp + ".norm2.beta"), eps);
            tokens = add(tokens, mix_ffn<T>(t2, hh, ww, cfg.ffn_expansion, params, bp + ".ffn"));
        }
        tokens = layer_norm(tokens, params.at(sp + ".norm.gamma"), params.at(sp + ".norm.beta"),
                            eps);
        cur = tokens_to_spatial(tokens, hh, ww);
        features[s] = cur;
    }
    return features;
}

template <class T>
VarT<T> decode(const std::array<VarT<T>, 4>& features, ParamStoreT<T>& params,
               const ModelConfig& cfg, Mode mode, RngState& rng) {
    cfg.validate();
    const auto& f0 = features[0].shape();
    HS_CHECK_SHAPE(f0.size() == 4, "decode: features must be [B,C,h,w]");
    const std::size_t batch = f0[0];
    const std::size_t h4 = f0[2];
    const std::size_t w4 = f0[3];
    for (std::size_t i = 0; i < 4; ++i) {
        const Shape expected{batch, cfg.stage_dims[i], h4 >> i, w4 >> i};
        HS_CHECK_SHAPE(features[i].shape() == expected,
                       "decode: feature " << i << " has shape "
                                          << shape_str(features[i].shape()) << ", expected "
                                          << shape_str(expected));
    }
    const T eps = static_cast<T>(kLayerNormEps);

    // deepest feature first, matching the fusion weight layout
    std::vector<VarT<T>> projected;
    projected.reserve(4);
    for (std::size_t idx = 4; idx-- > 0;) {
        const std::string dp = "dec.proj" + std::to_string(idx);
        VarT<T> t = spatial_to_tokens(features[idx]);
        t = linear(t, params.at(dp + ".w"), params.at(dp + ".bias"));
        VarT<T> sp = tokens_to_spatial(t, h4 >> idx, w4 >> idx);
        if (idx > 0) sp = bilinear_upsample(sp, h4, w4);
        projected.push_back(std::move(sp));
    }
    VarT<T> fused = concat(projected, 1); // [B, 4*dd, h4, w4]
    VarT<T> tok = spatial_to_tokens(fused);
    tok = linear(tok, params.at("dec.fuse.w"), params.at("dec.fuse.bias"));
    tok = layer_norm(tok, params.at("dec.fusenorm.gamma"), params.at("dec.fusenorm.beta"), eps);
    tok = gelu(tok);
    tok = dropout(tok, cfg.dropout_p, mode, rng);
    VarT<T> sp = tokens_to_spatial(tok, h4, w4);
    VarT<T> logits = conv2d(sp, params.at("dec.head.w"), params.at("dec.head.bias"), {1, 0, 1});
    return bilinear_upsample(logits, h4 * 4, w4 * 4);
}

template <class T>
VarT<T> forward(const VarT<T>& x, ParamStoreT<T>& params, const ModelConfig& cfg, Mode mode,
                RngState& rng) {
    const bool batched = x.shape().size() == 4;
    VarT<T> input = x;
    if (!batched) {
        HS_CHECK_SHAPE(x.shape().size() == 3,
                       "forward: input must be [C,H,W] or [B,C,H,W], got "
                           << shape_str(x.shape()));
        Shape s = x.shape();
        input = reshape(x, {std::size_t{1}, s[0], s[1], s[2]});
    }
    auto features = encode<T>(input, params, cfg);
    VarT<T> logits = decode<T>(features, params, cfg, mode, rng);
    if (!batched) {
        const auto& ls = logits.shape();
        logits = reshape(logits, {ls[1], ls[2], ls[3]});
    }
    return logits;
}

void for_each_param_shape(const ModelConfig& cfg,
                          const std::function<void(const std::string&, const Shape&)>& fn) {
    for_each_param_spec(cfg,
                        [&](const std::string& name, Shape shape, InitKind) { fn(name, shape); });
}

void save_weights(const ParamStore& params, const ModelConfig& cfg, const std::string& path) {
    cfg.validate();
    std::vector<NamedBlob> blobs;
    blobs.push_back(NamedBlob::meta("meta.structure", encode_structure(cfg)));
    for (const auto& e : params) blobs.push_back(NamedBlob::tensor("p/" + e.name, e.var.value()));
    write_weight_file(path, cfg.structure_hash(), blobs);
}

std::pair<ParamStore, ModelConfig> load_weights(const std::string& path) {
    WeightFile wf = read_weight_file(path);

    std::unordered_map<std::string, const NamedBlob*> by_name;
    for (const auto& b : wf.blobs) by_name[b.name] = &b;
    auto meta_it = by_name.find("meta.structure");
    HS_CHECK(meta_it != by_name.end() && meta_it->second->dtype == Dtype::U64,
             ErrorKind::Corrupt, path << ": missing structure metadata");
    ModelConfig cfg = decode_structure(meta_it->second->u64);
    cfg.validate();
    HS_CHECK(cfg.structure_hash() == wf.config_hash, ErrorKind::ConfigMismatch,
             path << ": header config hash does not match the embedded structure");

    ParamStore store;
    for_each_param_spec(cfg, [&](const std::string& name, Shape shape, InitKind) {
        auto it = by_name.find("p/" + name);
        HS_CHECK(it != by_name.end(), ErrorKind::Corrupt, path << ": missing tensor " << name);
        HS_CHECK(it->second->shape == shape, ErrorKind::Corrupt,
                 path << ": tensor " << name << " has shape " << shape_str(it->second->shape)
                      << ", expected " << shape_str(shape));
        store.add(name, it->second->to_tensor());
    });
    return {std::move(store), cfg};
}

ParamStore load_weights_for(const ModelConfig& expected, const std::string& path) {
    auto [store, cfg] = load_weights(path);
    HS_CHECK(cfg.structure_hash() == expected.structure_hash(), ErrorKind::ConfigMismatch,
             path << " holds weights for a different architecture (stage dims "
                  << shape_str(Shape(cfg.stage_dims.begin(), cfg.stage_dims.end()))
                  << " vs expected "
                  << shape_str(Shape(expected.stage_dims.begin(), expected.stage_dims.end()))
                  << ")");
    return std::move(store);
}

// explicit instantiations

#define HS_INSTANTIATE_MODEL(T)                                                            \
    template ParamStoreT<T> init_params<T>(const ModelConfig&, RngState);                  \
    template VarT<T> efficient_self_attention<T>(const VarT<T>&, std::size_t, std::size_t, \
                                                 std::size_t, std::size_t, ParamStoreT<T>&, \
                                                 const std::string&, AttentionDebugT<T>*); \
    template VarT<T> mix_ffn<T>(const VarT<T>&, std::size_t, std::size_t, std::size_t,    \
                                ParamStoreT<T>&, const std::string&);                      \
    template std::array<VarT<T>, 4> encode<T>(const VarT<T>&, ParamStoreT<T>&,             \
                                              const ModelConfig&);                         \
    template VarT<T> decode<T>(const std::array<VarT<T>, 4>&, ParamStoreT<T>&,             \
                               const ModelConfig&, Mode, RngState&);                       \
    template VarT<T> forward<T>(const VarT<T>&, ParamStoreT<T>&, const ModelConfig&, Mode, \
                                RngState&);

HS_INSTANTIATE_MODEL(float)
HS_INSTANTIATE_MODEL(double)

#undef HS_INSTANTIATE_MODEL

} // namespace hairseg
