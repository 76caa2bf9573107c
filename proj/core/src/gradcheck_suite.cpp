#include "hairseg/gradcheck_suite.hpp"

#include <cmath>

#include "hairseg/gradcheck.hpp"
#include "hairseg/model.hpp"
#include "hairseg/optim.hpp"

namespace hairseg {

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;

Tensor64 random_tensor(Shape shape, RngState& rng, double scale = 1.0) {
    Tensor64 t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = (rng.next_uniform() * 2.0 - 1.0) * scale;
    return t;
}

using CheckFn = std::function<Var64(const std::vector<Var64>&)>;

struct Case {
    std::string name;
    std::vector<Tensor64> inputs;
    CheckFn fn;
    std::size_t max_coords = 0; // 0 = every coordinate
};

std::vector<Case> primitive_cases() {
    RngState rng(20240809);
    std::vector<Case> cases;

    cases.push_back({"matmul",
                     {random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                     [](const std::vector<Var64>& v) { return sum(matmul(v[0], v[1])); }});
    cases.push_back({"matmul.batched",
                     {random_tensor({2, 3, 4}, rng), random_tensor({2, 4, 2}, rng)},
                     [](const std::vector<Var64>& v) { return sum(matmul(v[0], v[1])); }});

    cases.push_back({"conv2d.pad1",
                     {random_tensor({2, 5, 6}, rng), random_tensor({3, 2, 3, 3}, rng),
                      random_tensor({3}, rng)},
                     [](const std::vector<Var64>& v) {
                         return sum(conv2d(v[0], v[1], v[2], {1, 1, 1}));
                     }});
    cases.push_back({"conv2d.stride2",
                     {random_tensor({2, 6, 6}, rng), random_tensor({4, 2, 2, 2}, rng),
                      random_tensor({4}, rng)},
                     [](const std::vector<Var64>& v) {
                         return sum(conv2d(v[0], v[1], v[2], {2, 0, 1}));
                     }});
    cases.push_back({"conv2d.depthwise",
                     {random_tensor({3, 5, 5}, rng), random_tensor({3, 1, 3, 3}, rng),
                      random_tensor({3}, rng)},
                     [](const std::vector<Var64>& v) {
                         return sum(conv2d(v[0], v[1], v[2], {1, 1, 3}));
                     }});
    cases.push_back({"conv2d.grouped.batched",
                     {random_tensor({2, 4, 5, 5}, rng), random_tensor({6, 2, 3, 3}, rng),
                      random_tensor({6}, rng)},
                     [](const std::vector<Var64>& v) {
                         return sum(conv2d(v[0], v[1], v[2], {1, 1, 2}));
                     }});

    cases.push_back({"softmax.axis1",
                     {random_tensor({3, 5}, rng, 3.0)},
                     [](const std::vector<Var64>& v) {
                         Var64 y = softmax(v[0], 1);
                         return sum(mul(y, y)); // non-uniform downstream gradient
                     }});
    cases.push_back({"softmax.axis0",
                     {random_tensor({3, 5}, rng, 3.0)},
                     [](const std::vector<Var64>& v) {
                         Var64 y = softmax(v[0], 0);
                         return sum(mul(y, y));
                     }});

    cases.push_back({"layer_norm",
                     {random_tensor({4, 7}, rng), random_tensor({7}, rng),
                      random_tensor({7}, rng)},
                     [](const std::vector<Var64>& v) {
                         Var64 y = layer_norm(v[0], v[1], v[2], 1e-5);
                         return sum(mul(y, y));
                     }});

    cases.push_back({"gelu",
                     {random_tensor({11}, rng, 3.0)},
                     [](const std::vector<Var64>& v) { return sum(mul(gelu(v[0]), v[0])); }});

    cases.push_back({"bilinear.up",
                     {random_tensor({2, 3, 4}, rng)},
                     [](const std::vector<Var64>& v) {
                         Var64 y = bilinear_upsample(v[0], 7, 9);
                         return sum(mul(y, y));
                     }});
    cases.push_back({"bilinear.down",
                     {random_tensor({2, 5, 5}, rng)},
                     [](const std::vector<Var64>& v) {
                         Var64 y = bilinear_upsample(v[0], 3, 3);
                         return sum(mul(y, y));
                     }});

    cases.push_back({"dropout.train",
                     {random_tensor({4, 5}, rng)},
                     [](const std::vector<Var64>& v) {
                         RngState mask_rng(99); // same mask on every call
                         Var64 y = dropout(v[0], 0.3, Mode::Train, mask_rng);
                         return sum(mul(y, y));
                     }});

    cases.push_back({"elementwise.mix",
                     {random_tensor({2, 3, 4}, rng), random_tensor({2, 3, 4}, rng),
                      random_tensor({4}, rng)},
                     [](const std::vector<Var64>& v) {
                         Var64 y = add(mul(v[0], v[1]), v[2]); // broadcast bias
                         y = sub(y, mul_scalar(v[0], 0.5));
                         y = permute(reshape(y, {2, 12}), {1, 0});
                         Var64 z = concat(std::vector<Var64>{y, y}, 1);
                         return mean(mul(z, z));
                     }});

    {
        RngState trng(7);
        TensorT<std::uint8_t> targets({2, 3, 3});
        for (std::size_t i = 0; i < targets.size(); ++i)
            targets[i] = static_cast<std::uint8_t>(trng.next_range(0, 1));
        cases.push_back({"cross_entropy",
                         {random_tensor({2, 2, 3, 3}, rng, 2.0)},
                         [targets](const std::vector<Var64>& v) {
                             return cross_entropy_loss(v[0], targets);
                         }});
    }

    return cases;
}

// Rebuilds a named store from leaf variables so finite differences see the
// perturbed parameter values.
ParamStoreT<double> store_from_leaves(const std::vector<std::string>& names,
                                      const std::vector<Var64>& leaves, std::size_t offset) {
    ParamStoreT<double> store;
    for (std::size_t i = 0; i < names.size(); ++i) store.add(names[i], leaves[offset + i]);
    return store;
}

std::vector<Case> block_cases() {
    std::vector<Case> cases;

    // attention with an active spatial-reduction path
    {
        const std::size_t c = 4, heads = 2, h = 4, w = 4, sr = 2;
        RngState rng(555);
        std::vector<std::string> names;
        std::vector<Tensor64> inputs{random_tensor({1, h * w, c}, rng)};
        auto param = [&](const std::string& n, Shape s) {
            names.push_back("a." + n);
            inputs.push_back(random_tensor(std::move(s), rng, 0.5));
        };
        for (const char* head : {"q", "k", "v", "proj"}) {
            param(std::string(head) + ".w", {c, c});
            param(std::string(head) + ".bias", {c});
        }
        param("sr.w", {c, c, sr, sr});
        param("sr.bias", {c});
        param("srnorm.gamma", {c});
        param("srnorm.beta", {c});
        cases.push_back({"attention.sr2", std::move(inputs),
                         [names, heads, h, w, sr](const std::vector<Var64>& v) {
                             ParamStoreT<double> store = store_from_leaves(names, v, 1);
                             Var64 y = efficient_self_attention<double>(v[0], h, w, heads, sr,
                                                                        store, "a");
                             return sum(mul(y, y));
                         }});
    }

    // mix-ffn including the depthwise path
    {
        const std::size_t c = 3, h = 3, w = 4, e = 2;
        RngState rng(777);
        std::vector<std::string> names;
        std::vector<Tensor64> inputs{random_tensor({1, h * w, c}, rng)};
        auto param = [&](const std::string& n, Shape s) {
            names.push_back("f." + n);
            inputs.push_back(random_tensor(std::move(s), rng, 0.5));
        };
        param("fc1.w", {c, c * e});
        param("fc1.bias", {c * e});
        param("dw.w", {c * e, 1, 3, 3});
        param("dw.bias", {c * e});
        param("fc2.w", {c * e, c});
        param("fc2.bias", {c});
        cases.push_back({"mix_ffn", std::move(inputs),
                         [names, h, w, e](const std::vector<Var64>& v) {
                             ParamStoreT<double> store = store_from_leaves(names, v, 1);
                             Var64 y = mix_ffn<double>(v[0], h, w, e, store, "f");
                             return sum(mul(y, y));
                         }});
    }

    return cases;
}

Case model_case(Mode mode, std::size_t max_coords) {
    ModelConfig cfg = tiny_preset();
    RngState rng(4242);
    ParamStoreT<double> reference = init_params<double>(cfg, RngState(4242));

    std::vector<std::string> names;
    std::vector<Tensor64> inputs;
    inputs.push_back(random_tensor({1, 3, 32, 32}, rng));
    for (const auto& e : reference) {
        names.push_back(e.name);
        inputs.push_back(e.var.value());
    }

    TensorT<std::uint8_t> targets({1, 32, 32});
    RngState trng(31);
    for (std::size_t i = 0; i < targets.size(); ++i)
        targets[i] = static_cast<std::uint8_t>(trng.next_range(0, 1));

    Case c;
    c.name = mode == Mode::Eval ? "model.tiny.eval" : "model.tiny.train";
    c.inputs = std::move(inputs);
    c.max_coords = max_coords;
    c.fn = [names, targets, cfg, mode](const std::vector<Var64>& v) {
        ParamStoreT<double> store = store_from_leaves(names, v, 1);
        RngState drop_rng(12345); // fixed dropout mask per call
        Var64 logits = forward<double>(v[0], store, cfg, mode, drop_rng);
        return cross_entropy_loss(logits, targets);
    };
    return c;
}

} // namespace

std::vector<GradCheckCase> run_gradcheck_suite(bool corrupt_one) {
    std::vector<Case> cases = primitive_cases();
    for (auto& c : block_cases()) cases.push_back(std::move(c));
    cases.push_back(model_case(Mode::Eval, 4));
    cases.push_back(model_case(Mode::Train, 2));

    if (corrupt_one) {
        // an op whose backward is wrong on purpose: y = x^2 but grad 2x + 0.5
        RngState rng(1);
        cases.push_back({"corruption.probe",
                         {random_tensor({5}, rng)},
                         [](const std::vector<Var64>& v) {
                             const TensorT<double>& xv = v[0].value();
                             TensorT<double> out(xv.shape());
                             for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
                             Var64 y = detail::make_op<double>(
                                 std::move(out), {v[0]}, [](detail::VarNode<double>& n) {
                                     const TensorT<double>& x = n.parents[0].value();
                                     const TensorT<double>& g = *n.grad;
                                     TensorT<double> gx(x.shape());
                                     for (std::size_t i = 0; i < gx.size(); ++i)
                                         gx[i] = g[i] * (2.0 * x[i] + 0.5);
                                     n.parents[0].node()->accumulate(gx);
                                 });
                             return sum(y);
                         }});
    }

    std::vector<GradCheckCase> results;
    results.reserve(cases.size());
    for (auto& c : cases) {
        GradCheckCase r;
        r.name = c.name;
        r.tolerance = kTol;
        r.max_rel_err = grad_check_sampled(c.fn, c.inputs, kStep, c.max_coords, RngState(9090));
        r.pass = r.max_rel_err < r.tolerance;
        results.push_back(std::move(r));
    }
    return results;
}

bool all_passed(const std::vector<GradCheckCase>& cases) {
    for (const auto& c : cases)
        if (!c.pass) return false;
    return !cases.empty();
}

} // namespace hairseg
