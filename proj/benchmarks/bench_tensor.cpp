#include <benchmark/benchmark.h>

#include <random>

#include "sgpt/tensor.hpp"

using namespace sgpt;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (double& v : t.mutable_data()) v = dist(rng);
    return t;
}

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(1);
    Tensor a = random_tensor({n, n}, rng);
    Tensor b = random_tensor({n, n}, rng);
    Tape tape;
    for (auto _ : state) {
        Tensor c = tape.matmul(a, b);
        benchmark::DoNotOptimize(c.data().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    std::mt19937_64 rng(2);
    Tensor a = random_tensor({n, n}, rng);
    Tensor b = random_tensor({n, n}, rng);
    a.set_requires_grad(true);
    b.set_requires_grad(true);
    for (auto _ : state) {
        Tape tape;
        Tensor loss = tape.sum(tape.matmul(a, b));
        tape.backward(loss);
        a.zero_grad();
        b.zero_grad();
    }
}
BENCHMARK(BM_MatmulBackward)->Arg(16)->Arg(64);

void BM_LogSoftmax(benchmark::State& state) {
    std::mt19937_64 rng(3);
    Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 261}, rng);
    Tape tape;
    for (auto _ : state) {
        Tensor y = tape.log_softmax(x);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_LogSoftmax)->Arg(16)->Arg(256);

void BM_LayerNorm(benchmark::State& state) {
    std::mt19937_64 rng(4);
    Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 64}, rng);
    Tensor gain = Tensor::full({64}, 1.0);
    Tensor bias = Tensor::zeros({64});
    Tape tape;
    for (auto _ : state) {
        Tensor y = tape.layer_norm(x, gain, bias);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_LayerNorm)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
