#include <benchmark/benchmark.h>

#include <string>

#include "sgpt/biencoder.hpp"
#include "sgpt/model.hpp"
#include "sgpt/training.hpp"

using namespace sgpt;

namespace {

DecoderModel bench_model(int max_seq_len = 512) {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 32;
    c.n_heads = 4;
    c.max_seq_len = max_seq_len;
    c.seed = 9;
    return DecoderModel::init(c);
}

void BM_Forward(benchmark::State& state) {
    const DecoderModel model = bench_model();
    TokenSequence ids;
    for (int i = 0; i < state.range(0); ++i) ids.ids.push_back(i % 256);
    for (auto _ : state) {
        const ForwardOutput out = model.forward(ids);
        benchmark::DoNotOptimize(out.logits.data().data());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(16)->Arg(64)->Arg(256);

void BM_Embed(benchmark::State& state) {
    const DecoderModel model = bench_model();
    const std::string text(static_cast<std::size_t>(state.range(0)), 'x');
    const PoolingSpec pooling;
    for (auto _ : state) {
        auto v = embed(model, text, Role::Document, pooling, true, 300);
        benchmark::DoNotOptimize(v.data());
    }
}
BENCHMARK(BM_Embed)->Arg(75)->Arg(300);

void BM_TrainStep(benchmark::State& state) {
    DecoderModel model = bench_model(128);
    PairBatch batch;
    for (int i = 0; i < 8; ++i) {
        batch.push_back({"query number " + std::to_string(i),
                         "document body number " + std::to_string(i)});
    }
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_len = 48;
    cfg.learning_rate = 0.001;
    for (auto _ : state) {
        const StepReport report = train_step(model, batch, cfg);
        benchmark::DoNotOptimize(report.loss);
    }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();
