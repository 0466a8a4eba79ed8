#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "sgpt/error.hpp"
#include "sgpt/retrieval.hpp"
#include "support/oracles.hpp"

using namespace sgpt;

namespace {

Corpus abc_corpus() {
    Corpus corpus;
    corpus.add({"doc1", "", "a b"});
    corpus.add({"doc2", "", "a a b"});
    corpus.add({"doc3", "", "c"});
    return corpus;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() /
           ("sgpt_ret_test_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST_CASE("lexical tokenization lowercases and splits on non-alphanumerics") {
    CHECK(lexical_tokenize("Hello, World!") ==
          std::vector<std::string>{"hello", "world"});
    CHECK(lexical_tokenize("x86-64 CPUs") ==
          std::vector<std::string>{"x86", "64", "cpus"});
    CHECK(lexical_tokenize("   ") == std::vector<std::string>{});
    CHECK(lexical_tokenize("don't") == std::vector<std::string>{"don", "t"});
}

TEST_CASE("index statistics on the worked corpus") {
    const InvertedIndex index = InvertedIndex::build(abc_corpus());
    CHECK(index.doc_count() == 3);
    CHECK(index.avgdl() == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(index.doc_frequency("a") == 2);
    CHECK(index.doc_frequency("b") == 2);
    CHECK(index.doc_frequency("c") == 1);
    CHECK(index.doc_frequency("zzz") == 0);
    CHECK(index.doc_length("doc2") == 3);
}

TEST_CASE("empty-text documents count toward the average length") {
    Corpus corpus;
    corpus.add({"a", "", "one two"});
    corpus.add({"b", "", ""});
    const InvertedIndex index = InvertedIndex::build(corpus);
    CHECK(index.doc_length("b") == 0);
    CHECK(index.avgdl() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("worked bm25 example") {
    const InvertedIndex index = InvertedIndex::build(abc_corpus(), 0.9, 0.4);
    const Ranking r = index.search("q", "a", 10);
    REQUIRE(r.entries.size() == 2);
    CHECK(r.entries[0].doc_id == "doc2");
    CHECK(r.entries[0].score == doctest::Approx(0.579875).epsilon(1e-6));
    CHECK(r.entries[1].doc_id == "doc1");
    CHECK(r.entries[1].score == doctest::Approx(0.470004).epsilon(1e-6));
    // idf("a") = ln(1.6)
    CHECK(r.entries[1].score ==
          doctest::Approx(std::log(1.6)).epsilon(1e-12));
}

TEST_CASE("absent terms and empty queries") {
    const InvertedIndex index = InvertedIndex::build(abc_corpus());
    CHECK(index.search("q", "zebra", 5).entries.empty());
    CHECK(index.search("q", "", 5).entries.empty());
    CHECK(index.search("q", "...", 5).entries.empty());
    CHECK_THROWS_AS(index.search("q", "a", 0), InputError);
}

TEST_CASE("duplicate query terms accumulate per occurrence") {
    const InvertedIndex index = InvertedIndex::build(abc_corpus());
    const Ranking once = index.search("q", "a", 5);
    const Ranking twice = index.search("q", "a a", 5);
    REQUIRE(once.entries.size() == twice.entries.size());
    for (std::size_t i = 0; i < once.entries.size(); ++i) {
        CHECK(twice.entries[i].score ==
              doctest::Approx(2.0 * once.entries[i].score).epsilon(1e-12));
    }
}

TEST_CASE("randomized corpora match the formula oracle exactly") {
    std::mt19937_64 rng(17);
    std::uniform_int_distribution<int> n_docs(1, 10);
    std::uniform_int_distribution<int> n_tokens(0, 12);
    std::uniform_int_distribution<int> term(0, 7);
    std::uniform_int_distribution<int> q_len(1, 4);
    const std::vector<std::string> vocab{"ant", "bee", "cat", "dog",
                                         "elk", "fox", "gnu", "hen"};
    for (int trial = 0; trial < 50; ++trial) {
        Corpus corpus;
        std::vector<std::pair<std::string, std::vector<std::string>>> docs;
        const int nd = n_docs(rng);
        for (int d = 0; d < nd; ++d) {
            std::vector<std::string> tokens;
            std::string text;
            const int nt = n_tokens(rng);
            for (int t = 0; t < nt; ++t) {
                tokens.push_back(vocab[static_cast<std::size_t>(term(rng))]);
                text += tokens.back() + " ";
            }
            const std::string id = "d" + std::to_string(d);
            corpus.add({id, "", text});
            docs.emplace_back(id, tokens);
        }
        std::string query;
        std::vector<std::string> query_tokens;
        for (int t = 0; t < q_len(rng); ++t) {
            query_tokens.push_back(vocab[static_cast<std::size_t>(term(rng))]);
            query += query_tokens.back() + " ";
        }

        const InvertedIndex index = InvertedIndex::build(corpus, 0.9, 0.4);
        const Ranking got = index.search("q", query, nd);
        const auto expected = oracles::bm25_scores(docs, query_tokens, 0.9, 0.4);
        for (const ScoredDoc& e : got.entries) {
            auto it = expected.find(e.doc_id);
            REQUIRE(it != expected.end());
            CHECK(e.score == it->second);  // bitwise agreement
        }
        std::size_t positive = 0;
        for (const auto& [_, s] : expected) {
            if (s > 0.0) ++positive;
        }
        CHECK(got.entries.size() == positive);
    }
}

TEST_CASE("bm25 scores are non-negative and ranked canonically") {
    const InvertedIndex index = InvertedIndex::build(abc_corpus());
    const Ranking r = index.search("q", "a b c", 10);
    r.check_invariants();
    for (const ScoredDoc& e : r.entries) CHECK(e.score > 0.0);
}

TEST_CASE("index persistence round trip") {
    const InvertedIndex index = InvertedIndex::build(abc_corpus(), 1.2, 0.75);
    const auto path = temp_file("idx.bin");
    index.save(path.string());
    const InvertedIndex loaded = InvertedIndex::load(path.string());
    CHECK(loaded.k1() == 1.2);
    CHECK(loaded.b() == 0.75);
    CHECK(loaded.doc_count() == 3);
    CHECK(loaded.avgdl() == index.avgdl());

    const Ranking a = index.search("q", "a b", 5);
    const Ranking b = loaded.search("q", "a b", 5);
    REQUIRE(a.entries.size() == b.entries.size());
    for (std::size_t i = 0; i < a.entries.size(); ++i) {
        CHECK(a.entries[i].doc_id == b.entries[i].doc_id);
        CHECK(a.entries[i].score == b.entries[i].score);
    }

    // Rebuild and re-save determinism.
    const auto path2 = temp_file("idx2.bin");
    InvertedIndex::build(abc_corpus(), 1.2, 0.75).save(path2.string());
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), {});
    std::string b2((std::istreambuf_iterator<char>(f2)), {});
    CHECK(b1 == b2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("corrupt index files are rejected") {
    const auto path = temp_file("bad.bin");
    InvertedIndex::build(abc_corpus()).save(path.string());
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('Z');
    f.close();
    CHECK_THROWS_AS(InvertedIndex::load(path.string()), FormatError);
    std::filesystem::remove(path);
}

TEST_CASE("pipeline with no reranker equals plain bm25") {
    const Corpus corpus = abc_corpus();
    const InvertedIndex index = InvertedIndex::build(corpus);
    const Ranking direct = index.search("q", "a b", 2);
    const Ranking piped =
        pipeline_search(index, corpus, "q", "a b", std::monostate{}, 0, 2);
    REQUIRE(direct.entries.size() == piped.entries.size());
    for (std::size_t i = 0; i < direct.entries.size(); ++i) {
        CHECK(direct.entries[i].doc_id == piped.entries[i].doc_id);
        CHECK(direct.entries[i].score == piped.entries[i].score);
    }
}

TEST_CASE("pipeline equals manually composed stages") {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 2;
    c.max_seq_len = 128;
    c.seed = 5;
    const DecoderModel model = DecoderModel::init(c);
    const PromptTemplate t{"t", PromptMode::SumQueryLogProb, "{doc} {query}"};

    Corpus corpus;
    for (int i = 0; i < 20; ++i) {
        corpus.add({"d" + std::to_string(i), "",
                    (i % 3 == 0 ? "alpha beta" : "gamma delta") + std::string(" filler") +
                        std::to_string(i)});
    }
    const InvertedIndex index = InvertedIndex::build(corpus);

    CrossEncoderReranker ce;
    ce.model = &model;
    ce.prompt = &t;
    ce.max_len = 64;
    const Ranking piped =
        pipeline_search(index, corpus, "q", "alpha", Reranker{ce}, 5, 3);

    Ranking manual = index.search("q", "alpha", 5);
    manual = rerank(model, t, "alpha", manual, corpus, 5, 64);
    manual.truncate(3);
    REQUIRE(piped.entries.size() == manual.entries.size());
    for (std::size_t i = 0; i < piped.entries.size(); ++i) {
        CHECK(piped.entries[i].doc_id == manual.entries[i].doc_id);
        CHECK(piped.entries[i].score == manual.entries[i].score);
    }
}

TEST_CASE("stage failures carry the stage identity") {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 2;
    c.max_seq_len = 128;
    c.seed = 5;
    const DecoderModel model = DecoderModel::init(c);
    const PromptTemplate t{"t", PromptMode::SumQueryLogProb, "{doc} {query}"};
    const Corpus corpus = abc_corpus();
    const InvertedIndex index = InvertedIndex::build(corpus);

    CrossEncoderReranker ce;
    ce.model = &model;
    ce.prompt = &t;
    ce.max_len = 2;  // query alone blows the budget
    CHECK_THROWS_WITH_AS(
        pipeline_search(index, corpus, "q", "a b", Reranker{ce}, 2, 2),
        doctest::Contains("re-rank stage"), Error);
}

TEST_CASE("only the rescored window can move under a cross-encoder") {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.n_heads = 2;
    c.max_seq_len = 128;
    c.seed = 6;
    const DecoderModel model = DecoderModel::init(c);
    const PromptTemplate t{"t", PromptMode::SumQueryLogProb, "{doc} {query}"};

    Corpus corpus;
    for (int i = 0; i < 15; ++i) {
        corpus.add({"d" + std::to_string(i), "",
                    "common word doc " + std::to_string(i)});
    }
    const InvertedIndex index = InvertedIndex::build(corpus);
    const Ranking first = index.search("q", "common word", 15);
    REQUIRE(first.entries.size() == 15);

    CrossEncoderReranker ce;
    ce.model = &model;
    ce.prompt = &t;
    ce.max_len = 64;
    const Ranking out =
        pipeline_search(index, corpus, "q", "common word", Reranker{ce}, 10, 15);
    // Tail order beyond the rescored window is untouched.
    for (std::size_t i = 10; i < 15; ++i) {
        CHECK(out.entries[i].doc_id == first.entries[i].doc_id);
    }
}
