#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "sgpt/biencoder.hpp"
#include "sgpt/crossencoder.hpp"
#include "sgpt/data.hpp"

namespace sgpt {

/// First-stage lexical tokenization: ASCII lowercase, split on any run of
/// non-alphanumeric bytes, no stemming or stopwords. Independent of the
/// byte-level model tokenizer.
std::vector<std::string> lexical_tokenize(std::string_view text);

/// Okapi BM25 over an in-memory inverted index.
///
/// score(d, q) = sum over query tokens t (duplicates kept) of
///   idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
/// with the smoothed, always-positive idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).
class InvertedIndex {
public:
    static InvertedIndex build(const Corpus& corpus, double k1 = 0.9,
                               double b = 0.4);

    /// Top-k by BM25; zero-score documents never appear, an empty query
    /// yields an empty ranking.
    Ranking search(const std::string& query_id, std::string_view query,
                   int k) const;

    double k1() const { return k1_; }
    double b() const { return b_; }
    std::size_t doc_count() const { return docs_.size(); }
    double avgdl() const { return avgdl_; }
    std::size_t doc_length(const std::string& doc_id) const;
    std::size_t doc_frequency(const std::string& term) const;

    /// File layout: magic "SGPI", version u16, k1 f64, b f64, N u32, avgdl
    /// f64, the document table (id + length u32 per doc, corpus order), then
    /// term count u32 and per term in sorted order: term, postings count u32,
    /// (doc table index u32, tf u32) pairs sorted by doc id.
    void save(const std::string& path) const;
    static InvertedIndex load(const std::string& path);

private:
    using Posting = std::pair<std::uint32_t, std::uint32_t>;  // doc index, tf

    double k1_ = 0.9;
    double b_ = 0.4;
    double avgdl_ = 0.0;
    std::vector<std::pair<std::string, std::uint32_t>> docs_;  // id, length
    std::unordered_map<std::string, std::size_t> doc_pos_;
    std::map<std::string, std::vector<Posting>> postings_;

    void rebuild_doc_positions();
};

/// Second-stage choice for the two-stage pipeline.
struct CrossEncoderReranker {
    const DecoderModel* model = nullptr;
    const PromptTemplate* prompt = nullptr;
    int max_len = 2048;
    const OneShotExample* one_shot = nullptr;
};

struct BiEncoderReranker {
    const DecoderModel* model = nullptr;
    const EmbeddingIndex* index = nullptr;
};

using Reranker =
    std::variant<std::monostate, CrossEncoderReranker, BiEncoderReranker>;

/// BM25 retrieves max(k, max_rerank) candidates, the optional second stage
/// rescores the top max_rerank of them, and the result is cut to k. With no
/// reranker this is exactly a BM25 search.
Ranking pipeline_search(const InvertedIndex& index, const Corpus& corpus,
                        const std::string& query_id, std::string_view query,
                        const Reranker& reranker, int max_rerank, int k);

}  // namespace sgpt
