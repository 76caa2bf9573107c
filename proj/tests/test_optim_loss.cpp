#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "hairseg/gradcheck.hpp"
#include "hairseg/optim.hpp"
#include "oracles.hpp"

using namespace hairseg;

TEST_CASE("adamw first step closed form") {
    // theta = 0, g = 1, lr = 0.001, defaults: theta' = -lr/(1+eps)
    ParamStoreT<double> params;
    auto& p = params.add("w", TensorT<double>({1}, {0.0}));
    backward(sum(p)); // gradient of exactly 1
    AdamWStateT<double> state;
    AdamWConfig cfg;
    adamw_step(params, state, cfg);
    CHECK(p.value()[0] == doctest::Approx(-9.99999990e-4).epsilon(1e-9));
    CHECK(state.step == 1);
}

TEST_CASE("adamw decay-only path") {
    // g = 0, m = v = 0, theta = 1, wd = 0.01: theta' = 1 - lr*wd
    ParamStoreT<double> params;
    auto& p = params.add("w", TensorT<double>({1}, {1.0}));
    (void)p;
    AdamWStateT<double> state;
    AdamWConfig cfg; // grad() reads zeros for an untouched leaf
    adamw_step(params, state, cfg);
    CHECK(params.at("w").value()[0] == doctest::Approx(1.0 - 0.001 * 0.01).epsilon(1e-15));
}

TEST_CASE("adamw matches the scalar reference recurrence") {
    ParamStoreT<double> params;
    params.add("w", TensorT<double>({1}, {0.3}));
    AdamWStateT<double> state;
    AdamWConfig cfg;
    cfg.weight_decay = 0.01;

    oracle::AdamScalar ref;
    double ref_theta = 0.3;
    RngState rng(5);
    for (int step = 0; step < 10; ++step) {
        const double g = rng.next_uniform() * 2 - 1;
        auto& var = params.at("w");
        var.zero_grad();
        backward(mul_scalar(sum(var), g)); // d/dw (g*w) = g
        adamw_step(params, state, cfg);
        ref_theta = ref.step(ref_theta, g, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps,
                             cfg.weight_decay);
        CHECK(params.at("w").value()[0] == doctest::Approx(ref_theta).epsilon(1e-9));
    }
}

TEST_CASE("adamw with wd=0 matches plain Adam over 100 steps") {
    ParamStoreT<double> params;
    params.add("w", TensorT<double>({1}, {1.5}));
    AdamWStateT<double> state;
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;

    oracle::AdamScalar ref;
    double ref_theta = 1.5;
    RngState rng(17);
    for (int step = 0; step < 100; ++step) {
        const double g = std::sin(step * 0.37) + (rng.next_uniform() - 0.5);
        auto& var = params.at("w");
        var.zero_grad();
        backward(mul_scalar(sum(var), g));
        adamw_step(params, state, cfg);
        ref_theta = ref.step(ref_theta, g, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, 0.0);
    }
    CHECK(params.at("w").value()[0] == doctest::Approx(ref_theta).epsilon(1e-9));
}

TEST_CASE("adamw refuses non-finite gradients and names the tensor") {
    ParamStoreT<double> params;
    params.add("enc.bad.w", TensorT<double>({2}, {1.0, 2.0}));
    auto& var = params.at("enc.bad.w");
    backward(mul_scalar(sum(var), std::numeric_limits<double>::infinity()));
    AdamWStateT<double> state;
    AdamWConfig cfg;
    const TensorT<double> before = var.value();
    CHECK_THROWS_WITH_AS(adamw_step(params, state, cfg), doctest::Contains("enc.bad.w"), Error);
    CHECK(var.value().vec() == before.vec()); // step refused, nothing touched
    CHECK(state.step == 0);
}

TEST_CASE("weight decay exemption for norms and biases") {
    ParamStoreT<double> params;
    params.add("fc.w", TensorT<double>({1}, {1.0}));
    params.add("fc.bias", TensorT<double>({1}, {1.0}));
    params.add("n.gamma", TensorT<double>({1}, {1.0}));
    AdamWStateT<double> state;
    AdamWConfig cfg; // decay_exempt_norm_bias = true, zero grads everywhere
    adamw_step(params, state, cfg);
    CHECK(params.at("fc.w").value()[0] < 1.0);
    CHECK(params.at("fc.bias").value()[0] == 1.0);
    CHECK(params.at("n.gamma").value()[0] == 1.0);

    // the pure variant decays everything
    ParamStoreT<double> params2;
    params2.add("fc.bias", TensorT<double>({1}, {1.0}));
    AdamWStateT<double> state2;
    cfg.decay_exempt_norm_bias = false;
    adamw_step(params2, state2, cfg);
    CHECK(params2.at("fc.bias").value()[0] < 1.0);
}

TEST_CASE("cross entropy examples") {
    // uniform logits over 2 classes: ln 2
    Var64 uniform(Tensor64({1, 2, 1, 1}, {0.3, 0.3}));
    TensorT<std::uint8_t> t0({1, 1, 1}, {0});
    CHECK(cross_entropy_loss(uniform, t0).value()[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-12));

    // +20 margin on the correct class saturates
    Var64 conf(Tensor64({1, 2, 1, 1}, {20.0, 0.0}));
    CHECK(cross_entropy_loss(conf, t0).value()[0] < 1e-8);

    // 2x2 mixed case equals the hand-summed mean of -log p
    Var64 logits(Tensor64({1, 2, 2, 2}, {// class-0 plane
                                         1.0, -0.5, 0.25, 2.0,
                                         // class-1 plane
                                         -1.0, 0.5, 0.75, -2.0}));
    TensorT<std::uint8_t> targets({1, 2, 2}, {0, 1, 1, 0});
    auto nlp = [](double z_t, double z_o) { return std::log(1.0 + std::exp(z_o - z_t)); };
    const double expected = (nlp(1.0, -1.0) + nlp(0.5, -0.5) + nlp(0.75, 0.25) +
                             nlp(2.0, -2.0)) /
                            4.0;
    CHECK(cross_entropy_loss(logits, targets).value()[0] ==
          doctest::Approx(expected).epsilon(1e-12));

    // out-of-range class id names the pixel
    TensorT<std::uint8_t> bad({1, 2, 2}, {0, 1, 3, 0});
    CHECK_THROWS_WITH_AS(cross_entropy_loss(logits, bad), doctest::Contains("(0, 1, 0)"), Error);
}

TEST_CASE("cross entropy invariances and gradient") {
    RngState rng(23);
    Tensor64 z({2, 2, 3, 3});
    for (auto& v : z.vec()) v = (rng.next_uniform() * 2 - 1) * 2;
    TensorT<std::uint8_t> targets({2, 3, 3});
    for (auto& v : targets.vec()) v = static_cast<std::uint8_t>(rng.next_range(0, 1));

    const double base = cross_entropy_loss(Var64(z), targets).value()[0];
    CHECK(base >= 0.0);

    // adding a per-pixel constant to both channels changes nothing
    Tensor64 shifted = z;
    const std::size_t plane = 9;
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            const double c = (rng.next_uniform() - 0.5) * 10;
            shifted[(n * 2 + 0) * plane + p] += c;
            shifted[(n * 2 + 1) * plane + p] += c;
        }
    CHECK(cross_entropy_loss(Var64(shifted), targets).value()[0] ==
          doctest::Approx(base).epsilon(1e-9));

    // analytic gradient: softmax - one_hot, scaled by 1/N
    Var64 leaf(z, true);
    backward(cross_entropy_loss(leaf, targets));
    Tensor64 g = leaf.grad();
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t p = 0; p < plane; ++p) {
            const double z0 = z[(n * 2 + 0) * plane + p];
            const double z1 = z[(n * 2 + 1) * plane + p];
            const double m = std::max(z0, z1);
            const double e0 = std::exp(z0 - m), e1 = std::exp(z1 - m);
            const double p0 = e0 / (e0 + e1);
            const std::uint8_t t = targets[n * plane + p];
            const double want0 = (p0 - (t == 0 ? 1.0 : 0.0)) / 18.0;
            CHECK(g[(n * 2 + 0) * plane + p] == doctest::Approx(want0).epsilon(1e-9));
        }

    // and the finite-difference oracle agrees
    const double err = grad_check(
        [&](const std::vector<Var64>& v) { return cross_entropy_loss(v[0], targets); }, {z},
        1e-5);
    CHECK(err < 1e-4);
}
