#include <benchmark/benchmark.h>

#include "hairseg/metrics.hpp"
#include "hairseg/model.hpp"
#include "hairseg/optim.hpp"

using namespace hairseg;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed = 1) {
    RngState rng(seed);
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<float>(rng.next_uniform() * 2 - 1);
    return t;
}

void BM_matmul(benchmark::State& state) {
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    Var a(random_tensor({n, n}, 1));
    Var b(random_tensor({n, n}, 2));
    for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).value().data());
    state.SetItemsProcessed(state.iterations() * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_conv2d_patch_embed(benchmark::State& state) {
    // stage-1 shape: 3->16 channels, 7x7 kernel, stride 4 on a 64x64 image
    Var x(random_tensor({3, 64, 64}, 3));
    Var w(random_tensor({16, 3, 7, 7}, 4));
    Var b(random_tensor({16}, 5));
    for (auto _ : state)
        benchmark::DoNotOptimize(conv2d(x, w, b, {4, 3, 1}).value().data());
}
BENCHMARK(BM_conv2d_patch_embed);

void BM_conv2d_depthwise(benchmark::State& state) {
    Var x(random_tensor({64, 16, 16}, 6));
    Var w(random_tensor({64, 1, 3, 3}, 7));
    Var b(random_tensor({64}, 8));
    for (auto _ : state)
        benchmark::DoNotOptimize(conv2d(x, w, b, {1, 1, 64}).value().data());
}
BENCHMARK(BM_conv2d_depthwise);

void BM_softmax_rows(benchmark::State& state) {
    Var x(random_tensor({256, 256}, 9));
    for (auto _ : state) benchmark::DoNotOptimize(softmax(x, 1).value().data());
}
BENCHMARK(BM_softmax_rows);

void BM_bilinear_x4(benchmark::State& state) {
    Var x(random_tensor({2, 16, 16}, 10));
    for (auto _ : state)
        benchmark::DoNotOptimize(bilinear_upsample(x, 64, 64).value().data());
}
BENCHMARK(BM_bilinear_x4);

void BM_forward_tiny_eval(benchmark::State& state) {
    ModelConfig cfg = tiny_preset();
    ParamStore params = init_params<float>(cfg, RngState(42));
    Var x(random_tensor({1, 3, 64, 64}, 11));
    NoGradGuard ng;
    RngState rng(0);
    for (auto _ : state)
        benchmark::DoNotOptimize(forward<float>(x, params, cfg, Mode::Eval, rng).value().data());
}
BENCHMARK(BM_forward_tiny_eval);

void BM_train_step_tiny(benchmark::State& state) {
    ModelConfig cfg = tiny_preset();
    ParamStore params = init_params<float>(cfg, RngState(42));
    AdamWState opt;
    AdamWConfig acfg;
    Tensor img = random_tensor({2, 3, 64, 64}, 12);
    TensorT<std::uint8_t> targets({2, 64, 64});
    RngState trng(13);
    for (auto& v : targets.vec()) v = static_cast<std::uint8_t>(trng.next_range(0, 1));
    RngState rng(14);
    for (auto _ : state) {
        Var x(img);
        Var loss = cross_entropy_loss(forward<float>(x, params, cfg, Mode::Train, rng), targets);
        backward(loss);
        adamw_step(params, opt, acfg);
        params.zero_grads();
    }
}
BENCHMARK(BM_train_step_tiny)->Unit(benchmark::kMillisecond);

void BM_iou_dice(benchmark::State& state) {
    RngState rng(15);
    MaskPair pair{MaskTensor({256, 256}), MaskTensor({256, 256})};
    for (auto& v : pair.pred.vec()) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
    for (auto& v : pair.target.vec()) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
    for (auto _ : state) {
        benchmark::DoNotOptimize(iou(pair));
        benchmark::DoNotOptimize(dice(pair));
    }
}
BENCHMARK(BM_iou_dice);

void BM_ssim(benchmark::State& state) {
    RngState rng(16);
    MaskPair pair{MaskTensor({256, 256}), MaskTensor({256, 256})};
    for (auto& v : pair.pred.vec()) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
    for (auto& v : pair.target.vec()) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
    for (auto _ : state) benchmark::DoNotOptimize(ssim(pair));
}
BENCHMARK(BM_ssim)->Unit(benchmark::kMillisecond);

void BM_cross_entropy(benchmark::State& state) {
    Var logits(random_tensor({16, 2, 64, 64}, 17));
    TensorT<std::uint8_t> targets({16, 64, 64});
    RngState rng(18);
    for (auto& v : targets.vec()) v = static_cast<std::uint8_t>(rng.next_range(0, 1));
    for (auto _ : state)
        benchmark::DoNotOptimize(cross_entropy_loss(logits, targets).value()[0]);
}
BENCHMARK(BM_cross_entropy);

} // namespace

BENCHMARK_MAIN();
