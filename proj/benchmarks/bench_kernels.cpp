#include <benchmark/benchmark.h>

#include "lgc/model.hpp"
#include "lgc/packed_model.hpp"
#include "lgc/quantize.hpp"
#include "lgc/runtime.hpp"

namespace {

lgc::Tensor random_tensor(std::vector<std::size_t> dims, std::uint64_t seed) {
    lgc::Tensor t(std::move(dims));
    lgc::Prng rng(seed);
    for (auto& v : t.storage()) v = static_cast<float>(rng.normal());
    return t;
}

void BM_QLinear(benchmark::State& state) {
    const auto in = static_cast<std::size_t>(state.range(0));
    const auto out = static_cast<std::size_t>(state.range(1));
    const auto rows = static_cast<std::size_t>(state.range(2));
    auto w = random_tensor({in, out}, 1);
    auto x = random_tensor({rows, in}, 2);
    auto q = lgc::QuantizedLinear::from_weights(w, 256);
    for (auto _ : state) {
        auto y = lgc::qlinear_forward(x, q);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * in * out));
}
BENCHMARK(BM_QLinear)->Args({512, 512, 1})->Args({2048, 2048, 1})->Args({2048, 2048, 16});

void BM_DenseMatmul(benchmark::State& state) {
    const auto in = static_cast<std::size_t>(state.range(0));
    const auto out = static_cast<std::size_t>(state.range(1));
    const auto rows = static_cast<std::size_t>(state.range(2));
    auto w = random_tensor({in, out}, 1);
    auto x = random_tensor({rows, in}, 2);
    for (auto _ : state) {
        auto y = lgc::matmul(x, w);
        benchmark::DoNotOptimize(y.data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows * in * out));
}
BENCHMARK(BM_DenseMatmul)->Args({512, 512, 1})->Args({2048, 2048, 1})->Args({2048, 2048, 16});

void BM_PackedDecode(benchmark::State& state) {
    lgc::ModelConfig c{512, 64, 6, 4, 2, 192, 1e-5f, 256, 10000.0f};
    auto w = lgc::init_random(c, 3);
    auto packed = lgc::pack_model(w, c, {});
    auto view = lgc::make_view(packed);
    std::vector<std::int32_t> prompt(16);
    for (std::size_t i = 0; i < prompt.size(); ++i) prompt[i] = static_cast<std::int32_t>(i + 1);
    const auto gen = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) {
        auto out = lgc::greedy_generate(view, prompt, gen);
        benchmark::DoNotOptimize(out.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(gen));
}
BENCHMARK(BM_PackedDecode)->Arg(32)->Arg(64);

}  // namespace
BENCHMARK_MAIN();
