#include "hairseg/lpips.hpp"

#include <cmath>
#include <unordered_map>

#include "hairseg/autodiff.hpp"
#include "hairseg/error.hpp"
#include "hairseg/serialize.hpp"

namespace hairseg {

std::uint64_t lpips_config_hash() { return fnv1a64("hairseg.lpips.v1"); }

LpipsNet LpipsNet::load(const std::string& path) {
    WeightFile wf = read_weight_file(path);
    HS_CHECK(wf.config_hash == lpips_config_hash(), ErrorKind::ConfigMismatch,
             path << " is not a perceptual-net weight file (config hash mismatch)");
    std::unordered_map<std::string, const NamedBlob*> by_name;
    for (const auto& b : wf.blobs) by_name[b.name] = &b;

    auto get = [&](const std::string& name) -> const NamedBlob& {
        auto it = by_name.find(name);
        HS_CHECK(it != by_name.end(), ErrorKind::Corrupt,
                 path << ": missing tensor " << name);
        return *it->second;
    };

    LpipsNet net;
    for (std::size_t k = 0;; ++k) {
        const std::string prefix = "layer" + std::to_string(k) + ".";
        if (!by_name.contains(prefix + "conv.w")) break;
        LpipsLayer layer;
        layer.conv_w = get(prefix + "conv.w").to_tensor();
        layer.conv_b = get(prefix + "conv.bias").to_tensor();
        layer.lin_w = get(prefix + "lin.w").to_tensor();
        const NamedBlob& spec = get(prefix + "spec");
        HS_CHECK(spec.dtype == Dtype::U64 && spec.u64.size() == 2, ErrorKind::Corrupt,
                 path << ": bad layer spec for " << prefix);
        layer.stride = spec.u64[0];
        layer.padding = spec.u64[1];
        HS_CHECK(layer.conv_w.rank() == 4, ErrorKind::Corrupt, path << ": bad conv weight rank");
        HS_CHECK(layer.lin_w.shape() == Shape{layer.conv_w.extent(0)}, ErrorKind::Corrupt,
                 path << ": channel weights do not match conv output channels");
        net.layers.push_back(std::move(layer));
    }
    HS_CHECK(!net.layers.empty(), ErrorKind::Corrupt, path << ": no layers found");
    return net;
}

void LpipsNet::save(const std::string& path) const {
    std::vector<NamedBlob> blobs;
    for (std::size_t k = 0; k < layers.size(); ++k) {
        const std::string prefix = "layer" + std::to_string(k) + ".";
        blobs.push_back(NamedBlob::tensor(prefix + "conv.w", layers[k].conv_w));
        blobs.push_back(NamedBlob::tensor(prefix + "conv.bias", layers[k].conv_b));
        blobs.push_back(NamedBlob::tensor(prefix + "lin.w", layers[k].lin_w));
        blobs.push_back(NamedBlob::meta(prefix + "spec", {layers[k].stride, layers[k].padding}));
    }
    write_weight_file(path, lpips_config_hash(), blobs);
}

double LpipsNet::distance(const Tensor& a, const Tensor& b) const {
    HS_CHECK_SHAPE(a.shape() == b.shape() && a.rank() == 3,
                   "lpips: inputs must be matching [C,H,W] maps, got "
                       << shape_str(a.shape()) << " vs " << shape_str(b.shape()));
    NoGradGuard ng;

    auto to_input = [](const Tensor& t) {
        Tensor out(t.shape());
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i] * 2.0f - 1.0f;
        return Var(std::move(out));
    };

    Var fa = to_input(a);
    Var fb = to_input(b);
    double total = 0.0;
    for (const auto& layer : layers) {
        const Var w(layer.conv_w);
        const Var bias(layer.conv_b);
        Conv2dSpec spec{layer.stride, layer.padding, 1};
        fa = relu(conv2d(fa, w, bias, spec));
        fb = relu(conv2d(fb, w, bias, spec));

        const Tensor& va = fa.value();
        const Tensor& vb = fb.value();
        const std::size_t c = va.extent(0);
        const std::size_t plane = va.extent(1) * va.extent(2);
        double layer_acc = 0.0;
        for (std::size_t px = 0; px < plane; ++px) {
            double na = 0.0, nb = 0.0;
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double x = va[ch * plane + px];
                const double y = vb[ch * plane + px];
                na += x * x;
                nb += y * y;
            }
            const double inv_a = 1.0 / std::sqrt(na + 1e-10);
            const double inv_b = 1.0 / std::sqrt(nb + 1e-10);
            for (std::size_t ch = 0; ch < c; ++ch) {
                const double d = va[ch * plane + px] * inv_a - vb[ch * plane + px] * inv_b;
                layer_acc += static_cast<double>(layer.lin_w[ch]) * d * d;
            }
        }
        total += layer_acc / static_cast<double>(plane);
    }
    return total;
}

} // namespace hairseg
