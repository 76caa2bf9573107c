#pragma once

#include <array>
#include <functional>
#include <string>
#include <utility>

#include "hairseg/params.hpp"
#include "hairseg/rng.hpp"

namespace hairseg {

struct PatchEmbedSpec {
    std::size_t kernel = 3;
    std::size_t stride = 2;
    std::size_t padding = 1;
};

// Four-stage hierarchical transformer encoder plus all-MLP decoder with a
// dropout layer immediately before the 1x1 classifier head. Every parameter
// shape is a pure function of this config.
struct ModelConfig {
    std::size_t in_channels = 3;
    std::size_t num_classes = 2;
    std::array<std::size_t, 4> stage_dims{};
    std::array<std::size_t, 4> stage_depths{};
    std::array<std::size_t, 4> stage_heads{};
    std::array<std::size_t, 4> sr_ratios{};
    std::size_t ffn_expansion = 4;
    std::size_t decoder_dim = 0;
    double dropout_p = 0.3;
    std::array<PatchEmbedSpec, 4> patch_embed{{{7, 4, 3}, {3, 2, 1}, {3, 2, 1}, {3, 2, 1}}};

    void validate() const; // throws on violated invariants

    // Hash of the parameter-bearing structure. dropout_p is excluded: it has
    // no weights attached, so weight files stay compatible across dropout
    // settings (the ablation variants share checkpoints of the same shape).
    std::uint64_t structure_hash() const;
};

ModelConfig tiny_preset(); // desk-scale
ModelConfig b2_preset();   // MiT-B2-shaped

ModelConfig preset_by_name(const std::string& name); // "tiny" | "b2"

// Truncated-normal weights (std 0.02), zero biases, unit norm gains.
// Deterministic: the same seed yields bitwise-identical parameters.
template <class T>
ParamStoreT<T> init_params(const ModelConfig& cfg, RngState rng);

template <class T>
struct AttentionDebugT {
    TensorT<T> weights; // [B, heads, N, M] softmax rows
};

// Spatial-reduction multi-head self-attention over [B,N,C] tokens laid out
// on an h x w grid; sr_ratio = 1 degenerates to standard attention.
template <class T>
VarT<T> efficient_self_attention(const VarT<T>& tokens, std::size_t h, std::size_t w,
                                 std::size_t heads, std::size_t sr_ratio,
                                 ParamStoreT<T>& params, const std::string& prefix,
                                 AttentionDebugT<T>* debug = nullptr);

// expand -> 3x3 depthwise conv on the spatial grid -> GELU -> contract
template <class T>
VarT<T> mix_ffn(const VarT<T>& tokens, std::size_t h, std::size_t w, std::size_t expansion,
                ParamStoreT<T>& params, const std::string& prefix);

// Features at H/4, H/8, H/16, H/32. Input [B,in_channels,H,W] with H and W
// divisible by 32.
template <class T>
std::array<VarT<T>, 4> encode(const VarT<T>& x, ParamStoreT<T>& params, const ModelConfig& cfg);

// Logit map [B,num_classes,H,W] from the four encoder features.
template <class T>
VarT<T> decode(const std::array<VarT<T>, 4>& features, ParamStoreT<T>& params,
               const ModelConfig& cfg, Mode mode, RngState& rng);

// encode then decode; accepts [3,H,W] or [B,3,H,W] and matches the rank.
template <class T>
VarT<T> forward(const VarT<T>& x, ParamStoreT<T>& params, const ModelConfig& cfg, Mode mode,
                RngState& rng);

// Flat u64 encoding of the parameter-bearing structure, embedded in weight
// files and checkpoints so loaders can rebuild the config.
std::vector<std::uint64_t> encode_structure(const ModelConfig& cfg);
ModelConfig decode_structure(const std::vector<std::uint64_t>& fields);

// Canonical (name, shape) parameter layout of a config, in storage order.
void for_each_param_shape(const ModelConfig& cfg,
                          const std::function<void(const std::string&, const Shape&)>& fn);

// Weight file round-trip (bit-exact). Loading verifies the structure hash
// and never returns partial parameters.
void save_weights(const ParamStore& params, const ModelConfig& cfg, const std::string& path);
std::pair<ParamStore, ModelConfig> load_weights(const std::string& path);

// Loads and verifies the file was built for `expected` (config mismatch
// otherwise). dropout_p is not part of the structure.
ParamStore load_weights_for(const ModelConfig& expected, const std::string& path);

} // namespace hairseg
