#include <benchmark/benchmark.h>

#include "wavenet/model.hpp"
#include "wavenet/rng.hpp"
#include "wavenet/sampler.hpp"
#include "wavenet/tensor_ops.hpp"

using namespace wavenet;

namespace {

Tensor2D random_tensor(int t, int c, std::uint64_t seed) {
    Tensor2D out(t, c);
    Rng rng(seed);
    for (auto& v : out.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return out;
}

ConvKernel random_kernel(int fw, int cin, int cout, int dil, std::uint64_t seed) {
    ConvKernel k(fw, cin, cout, dil);
    Rng rng(seed);
    for (auto& v : k.weights) v = static_cast<float>(rng.uniform(-0.3, 0.3));
    for (auto& v : k.bias) v = static_cast<float>(rng.uniform(-0.1, 0.1));
    return k;
}

void BM_CausalConv(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    const Tensor2D input = random_tensor(1024, channels, 1);
    const ConvKernel kernel = random_kernel(2, channels, channels, 8, 2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(causal_conv(input, kernel));
    }
    state.SetItemsProcessed(state.iterations() * input.timesteps);
}
BENCHMARK(BM_CausalConv)->Arg(16)->Arg(32)->Arg(64);

void BM_GatedActivation(benchmark::State& state) {
    const int channels = static_cast<int>(state.range(0));
    const Tensor2D filt = random_tensor(1024, channels, 3);
    const Tensor2D gate = random_tensor(1024, channels, 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(gated_activation(filt, gate));
    }
    state.SetItemsProcessed(state.iterations() * filt.timesteps);
}
BENCHMARK(BM_GatedActivation)->Arg(32)->Arg(64);

void BM_SoftmaxXent(benchmark::State& state) {
    const Tensor2D logits = random_tensor(1024, 256, 5);
    std::vector<int> targets(1024);
    Rng rng(6);
    for (auto& t : targets) t = static_cast<int>(rng.next_below(256));
    for (auto _ : state) {
        benchmark::DoNotOptimize(softmax_xent(logits, targets));
    }
    state.SetItemsProcessed(state.iterations() * logits.timesteps);
}
BENCHMARK(BM_SoftmaxXent);

void BM_SamplerStep(benchmark::State& state) {
    ModelConfig cfg;
    cfg.num_classes = 256;
    cfg.residual_channels = 32;
    cfg.skip_channels = 32;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {1, 2, 4, 8, 16, 32, 64, 128, 256, 512};
    cfg.validate();
    WaveNetModel model(cfg, 7);
    model.randomize_parameters(8);

    GenerationRequest req;
    req.num_samples = 1;
    SamplerState sampler = init_state(model, req);
    Rng rng(9);
    int prev = sampler.silence;
    for (auto _ : state) {
        const std::vector<float> probs = sampler_step(model, sampler, prev);
        prev = static_cast<int>(rng.categorical(probs));
        benchmark::DoNotOptimize(prev);
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_SamplerStep);

void BM_ForwardBackward(benchmark::State& state) {
    ModelConfig cfg;
    cfg.num_classes = 64;
    cfg.residual_channels = 32;
    cfg.skip_channels = 32;
    cfg.filter_width = 2;
    cfg.dilation_schedule = {1, 2, 4, 8, 16, 32};
    cfg.validate();
    WaveNetModel model(cfg, 10);
    model.randomize_parameters(11);

    Rng rng(12);
    std::vector<int> classes(256);
    for (auto& c : classes) c = static_cast<int>(rng.next_below(64));
    GradientTape tape(model);
    for (auto _ : state) {
        tape.zero();
        ForwardTraceT<float> trace;
        const ForwardResultT<float> out = model.forward(classes, {}, &trace);
        Tensor2D grad(out.logits.timesteps, out.logits.channels, 1.0f / 255.0f);
        model.backward(trace, grad, nullptr, tape);
        benchmark::DoNotOptimize(tape);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<long>(classes.size()));
}
BENCHMARK(BM_ForwardBackward);

} // namespace

BENCHMARK_MAIN();
