#include <benchmark/benchmark.h>

#include <random>
#include <string>

#include "sgpt/retrieval.hpp"

using namespace sgpt;

namespace {

Corpus synthetic_corpus(std::size_t docs) {
    std::mt19937_64 rng(17);
    const std::vector<std::string> vocab{
        "search", "engine", "ranking", "model", "token", "index",
        "query",  "score",  "vector",  "text",  "match", "corpus"};
    std::uniform_int_distribution<std::size_t> word(0, vocab.size() - 1);
    std::uniform_int_distribution<int> length(5, 60);
    Corpus corpus;
    for (std::size_t d = 0; d < docs; ++d) {
        std::string text;
        const int n = length(rng);
        for (int i = 0; i < n; ++i) {
            if (!text.empty()) text += ' ';
            text += vocab[word(rng)];
        }
        corpus.add({"d" + std::to_string(d), "", text});
    }
    return corpus;
}

void BM_IndexBuild(benchmark::State& state) {
    const Corpus corpus = synthetic_corpus(static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) {
        const InvertedIndex index = InvertedIndex::build(corpus);
        benchmark::DoNotOptimize(index.doc_count());
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_IndexBuild)->Arg(100)->Arg(1000)->Arg(10000);

void BM_Bm25Search(benchmark::State& state) {
    const Corpus corpus = synthetic_corpus(static_cast<std::size_t>(state.range(0)));
    const InvertedIndex index = InvertedIndex::build(corpus);
    for (auto _ : state) {
        const Ranking r = index.search("q", "search engine ranking", 10);
        benchmark::DoNotOptimize(r.entries.size());
    }
}
BENCHMARK(BM_Bm25Search)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
