#pragma once

#include <string>
#include <vector>

#include "hairseg/tensor.hpp"

namespace hairseg {

// Pluggable perceptual distance: a small convolutional feature stack whose
// weights are loaded from a weight file. Per layer, features of both inputs
// are unit-normalized across channels, squared differences are weighted by
// learned per-channel coefficients and averaged spatially; layer terms sum.
//
// No weights file, no metric: callers record the value as absent, never 0.
struct LpipsLayer {
    Tensor conv_w; // [C_out, C_in, kh, kw]
    Tensor conv_b; // [C_out]
    std::size_t stride = 1;
    std::size_t padding = 0;
    Tensor lin_w; // [C_out], non-negative channel weights
};

class LpipsNet {
public:
    static LpipsNet load(const std::string& path);
    void save(const std::string& path) const;

    // a, b: [3,H,W] real maps in [0,1]; mapped to [-1,1] before the stack.
    double distance(const Tensor& a, const Tensor& b) const;

    std::vector<LpipsLayer> layers;
};

// Config-hash namespace for perceptual weight files.
std::uint64_t lpips_config_hash();

} // namespace hairseg
