#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "hairseg/lpips.hpp"
#include "hairseg/metrics.hpp"
#include "hairseg/rng.hpp"
#include "oracles.hpp"

using namespace hairseg;

namespace {

MaskPair pair_from(std::vector<std::uint8_t> pred, std::vector<std::uint8_t> target, Shape s) {
    return MaskPair{MaskTensor(s, std::move(pred)), MaskTensor(s, std::move(target))};
}

} // namespace

TEST_CASE("iou examples") {
    // identical masks with both classes present
    MaskPair same = pair_from({1, 0, 1, 0}, {1, 0, 1, 0}, {2, 2});
    CHECK(iou(same) == 1.0);

    // pixel-set enumeration fixture: (0.5 + 2/3) / 2
    MaskPair mixed = pair_from({1, 1, 0, 0}, {1, 0, 0, 0}, {2, 2});
    CHECK(iou(mixed) == doctest::Approx((0.5 + 2.0 / 3.0) / 2.0).epsilon(1e-12));

    // all-zero masks: class 1 excluded (zero union), class 0 = 1
    ExclusionStats stats;
    MaskPair zeros = pair_from({0, 0, 0, 0}, {0, 0, 0, 0}, {2, 2});
    CHECK(iou(zeros, &stats) == 1.0);
    CHECK(stats.excluded_classes == 1);

    // empty mask is a data error
    CHECK_THROWS_AS(iou(MaskPair{MaskTensor({0, 0}), MaskTensor({0, 0})}), Error);
}

TEST_CASE("dice examples") {
    MaskPair same = pair_from({1, 0}, {1, 0}, {1, 2});
    CHECK(dice(same) == 1.0);

    // same fixture as the IoU example: (2/3 + 0.8) / 2
    MaskPair mixed = pair_from({1, 1, 0, 0}, {1, 0, 0, 0}, {2, 2});
    CHECK(dice(mixed) == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0).epsilon(1e-12));

    // disjoint nonempty class-1 regions: class-1 term is 0
    MaskPair disjoint = pair_from({1, 0, 0}, {0, 0, 1}, {1, 3});
    CHECK(dice(disjoint) == doctest::Approx((2.0 * 1.0 / 4.0 + 0.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("iou and dice match set enumeration exhaustively up to 3x3") {
    for (std::size_t n : {1u, 2u, 4u, 9u}) {
        const std::size_t combos = std::size_t{1} << n;
        for (std::size_t pb = 0; pb < combos; ++pb) {
            for (std::size_t tb = 0; tb < combos; ++tb) {
                std::vector<std::uint8_t> p(n), t(n);
                for (std::size_t i = 0; i < n; ++i) {
                    p[i] = (pb >> i) & 1;
                    t[i] = (tb >> i) & 1;
                }
                const auto ref = oracle::iou_dice_sets(p, t);
                MaskPair pair = pair_from(p, t, {1, n});
                const double ji = iou(pair);
                const double di = dice(pair);
                REQUIRE(ji == ref.iou);   // exact, both are ratios of small integers
                REQUIRE(di == ref.dice);
                REQUIRE(di >= ji);        // D = 2J/(1+J) per class
                // equality holds exactly when every defined class has J in {0,1}
                bool all_degenerate = true;
                for (double j : ref.per_class_iou)
                    if (j != 0.0 && j != 1.0) all_degenerate = false;
                REQUIRE((di == ji) == all_degenerate);
            }
        }
    }
}

TEST_CASE("iou and dice match set enumeration on random 8x8 pairs") {
    RngState rng(31);
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<std::uint8_t> p(64), t(64);
        for (std::size_t i = 0; i < 64; ++i) {
            p[i] = static_cast<std::uint8_t>(rng.next_range(0, 1));
            t[i] = static_cast<std::uint8_t>(rng.next_range(0, 1));
        }
        const auto ref = oracle::iou_dice_sets(p, t);
        MaskPair pair = pair_from(p, t, {8, 8});
        REQUIRE(std::abs(iou(pair) - ref.iou) < 1e-12);
        REQUIRE(std::abs(dice(pair) - ref.dice) < 1e-12);
        REQUIRE(dice(pair) >= iou(pair));
    }
}

TEST_CASE("psnr examples and monotonicity") {
    // one differing pixel of four: MSE 0.25, 20*log10(2)
    MaskPair quarter = pair_from({1, 0, 0, 0}, {0, 0, 0, 0}, {2, 2});
    CHECK(psnr(quarter) == doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-12));
    CHECK(psnr(quarter) == doctest::Approx(6.0206).epsilon(1e-4));

    // zero MSE capped at 100 dB
    MaskPair same = pair_from({1, 0}, {1, 0}, {1, 2});
    CHECK(psnr(same) == doctest::Approx(100.0).epsilon(1e-12));

    // every pixel wrong: 0 dB
    MaskPair inverted = pair_from({1, 1, 1, 1}, {0, 0, 0, 0}, {2, 2});
    CHECK(psnr(inverted) == doctest::Approx(0.0).epsilon(1e-12));

    // strictly decreasing in MSE below the cap
    double last = 101.0;
    for (std::size_t wrong = 1; wrong <= 16; ++wrong) {
        std::vector<std::uint8_t> p(16, 0), t(16, 0);
        for (std::size_t i = 0; i < wrong; ++i) p[i] = 1;
        const double v = psnr(pair_from(p, t, {4, 4}));
        CHECK(v < last);
        last = v;
    }
}

TEST_CASE("ssim examples") {
    // identical masks
    RngState rng(7);
    std::vector<std::uint8_t> m(16 * 16);
    for (auto& v : m) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
    MaskPair same{MaskTensor({16, 16}, m), MaskTensor({16, 16}, m)};
    CHECK(ssim(same) == doctest::Approx(1.0).epsilon(1e-12));

    // constant 0 vs constant 1: C1/(1+C1)
    std::vector<std::uint8_t> z(12 * 12, 0), o(12 * 12, 1);
    MaskPair consts{MaskTensor({12, 12}, z), MaskTensor({12, 12}, o)};
    CHECK(ssim(consts) == doctest::Approx(1e-4 / 1.0001).epsilon(1e-9));
    CHECK(ssim(consts) == doctest::Approx(9.999e-5).epsilon(1e-3));

    // symmetry
    std::vector<std::uint8_t> a(14 * 14), b(14 * 14);
    for (auto& v : a) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
    for (auto& v : b) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
    MaskPair ab{MaskTensor({14, 14}, a), MaskTensor({14, 14}, b)};
    MaskPair ba{MaskTensor({14, 14}, b), MaskTensor({14, 14}, a)};
    CHECK(ssim(ab) == doctest::Approx(ssim(ba)).epsilon(1e-15));

    // window precondition
    MaskPair tiny = pair_from({1, 0, 0, 0}, {0, 0, 0, 0}, {2, 2});
    CHECK_THROWS_AS(ssim(tiny), Error);
}

TEST_CASE("ssim matches the direct sliding-window reference") {
    RngState rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t h = 11 + rng.next_range(0, 8);
        const std::size_t w = 11 + rng.next_range(0, 8);
        std::vector<std::uint8_t> p(h * w), t(h * w);
        for (auto& v : p) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
        for (auto& v : t) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
        std::vector<double> pd(p.begin(), p.end()), td(t.begin(), t.end());
        const double got = ssim(MaskPair{MaskTensor({h, w}, p), MaskTensor({h, w}, t)});
        const double ref = oracle::ssim_direct(pd, td, h, w);
        REQUIRE(got == doctest::Approx(ref).epsilon(1e-6));
        REQUIRE(std::abs(got) <= 1.0);
    }
}

TEST_CASE("lpips toy network with hand-set weights") {
    // one 1x1-conv layer, two channels, on a 1x1 input: every stage is
    // computable by hand.
    LpipsNet net;
    LpipsLayer layer;
    layer.conv_w = Tensor({2, 3, 1, 1}, {1, 0, 0, 0, 1, 0});
    layer.conv_b = Tensor({2}, {0, 0});
    layer.stride = 1;
    layer.padding = 0;
    layer.lin_w = Tensor({2}, {0.5f, 2.0f});
    net.layers.push_back(layer);

    // identical inputs: zero distance
    Tensor x({3, 4, 4});
    RngState rng(3);
    for (auto& v : x.vec()) v = static_cast<float>(rng.next_uniform());
    CHECK(net.distance(x, x) == 0.0);

    // hand computation on a 1x1 spatial input:
    // a = (0.8, 0.2, *) -> mapped to (0.6, -0.6); relu -> (0.6, 0)
    //   normalized: (1, 0) (eps-shifted)
    // b = (0.2, 0.8, *) -> (-0.6, 0.6); relu -> (0, 0.6) -> normalized (0, 1)
    // d = 0.5*(1-0)^2 + 2*(0-1)^2 = 2.5
    Tensor a({3, 1, 1}, {0.8f, 0.2f, 0.0f});
    Tensor b({3, 1, 1}, {0.2f, 0.8f, 0.0f});
    CHECK(net.distance(a, b) == doctest::Approx(2.5).epsilon(1e-6));

    // two-layer variant: second layer sees the first's relu output
    LpipsLayer layer2;
    layer2.conv_w = Tensor({1, 2, 1, 1}, {1, 1});
    layer2.conv_b = Tensor({1}, {0});
    layer2.lin_w = Tensor({1}, {1.0f});
    net.layers.push_back(layer2);
    // layer-2 features: a -> 0.6, b -> 0.6; normalized both to 1 -> term 0
    CHECK(net.distance(a, b) == doctest::Approx(2.5).epsilon(1e-6));
}

TEST_CASE("lpips weight file round trip and mismatch") {
    LpipsNet net;
    LpipsLayer layer;
    RngState rng(17);
    layer.conv_w = Tensor({4, 3, 3, 3});
    for (auto& v : layer.conv_w.vec()) v = static_cast<float>(rng.next_uniform() - 0.5);
    layer.conv_b = Tensor({4});
    layer.stride = 2;
    layer.padding = 1;
    layer.lin_w = Tensor({4}, {0.1f, 0.2f, 0.3f, 0.4f});
    net.layers.push_back(layer);

    const std::string path = (std::filesystem::temp_directory_path() / "lpips_rt.bin").string();
    net.save(path);
    LpipsNet loaded = LpipsNet::load(path);
    REQUIRE(loaded.layers.size() == 1);
    CHECK(loaded.layers[0].conv_w.vec() == net.layers[0].conv_w.vec());
    CHECK(loaded.layers[0].stride == 2);
    CHECK(loaded.layers[0].padding == 1);

    Tensor x({3, 8, 8});
    for (auto& v : x.vec()) v = static_cast<float>(rng.next_uniform());
    Tensor y({3, 8, 8});
    for (auto& v : y.vec()) v = static_cast<float>(rng.next_uniform());
    CHECK(net.distance(x, y) == loaded.distance(x, y));
    CHECK(net.distance(x, y) >= 0.0);

    CHECK_THROWS_AS(LpipsNet::load("/nonexistent/lpips.bin"), Error);
    std::filesystem::remove(path);
}

TEST_CASE("aggregate over per-fold records") {
    // the ten per-fold rows of the headline experiment
    const double ious[] = {0.935, 0.940, 0.928, 0.933, 0.942,
                           0.930, 0.936, 0.927, 0.934, 0.944};
    const double dices[] = {0.965, 0.968, 0.960, 0.964, 0.970,
                            0.962, 0.966, 0.959, 0.965, 0.971};
    std::vector<MetricRecord> records(10);
    for (int i = 0; i < 10; ++i) {
        records[i].fold = i + 1;
        records[i].iou = ious[i];
        records[i].dice = dices[i];
        records[i].lpips = 0.06;
    }
    const Aggregate agg = aggregate(records);
    CHECK(agg.iou.mean == doctest::Approx(0.9349).epsilon(1e-12));
    CHECK(agg.dice.mean == doctest::Approx(0.9650).epsilon(1e-12));
    CHECK(agg.iou.stddev == doctest::Approx(0.005763).epsilon(1e-3));
    REQUIRE(agg.lpips.has_value());
    CHECK(agg.lpips->n == 10);

    // identical records: zero std
    std::vector<MetricRecord> same(3, records[0]);
    CHECK(aggregate(same).iou.stddev == 0.0);

    // permutation invariance
    std::vector<MetricRecord> shuffled = records;
    std::swap(shuffled[0], shuffled[7]);
    std::swap(shuffled[3], shuffled[9]);
    const Aggregate agg2 = aggregate(shuffled);
    CHECK(agg2.iou.mean == agg.iou.mean);
    CHECK(agg2.iou.stddev == agg.iou.stddev);

    // absent LPIPS entries are excluded pairwise
    records[2].lpips.reset();
    records[5].lpips.reset();
    const Aggregate agg3 = aggregate(records);
    REQUIRE(agg3.lpips.has_value());
    CHECK(agg3.lpips->n == 8);

    // fewer than 2 records is a data error
    std::vector<MetricRecord> one(1);
    CHECK_THROWS_AS(aggregate(one), Error);
}
