#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sgpt/data.hpp"
#include "sgpt/model.hpp"
#include "sgpt/pooling.hpp"

namespace sgpt {

/// Settings shared by document embedding, index construction and query-side
/// search. The symmetric preset leaves role markers off and caps sequences
/// at 75 tokens; the asymmetric preset encloses queries in [] and documents
/// in {} and caps at 300 tokens.
struct EmbedSettings {
    PoolingSpec pooling;
    bool specb = false;
    int max_len = 75;
    bool store_f32 = false;
};

EmbedSettings symmetric_preset();
EmbedSettings asymmetric_preset();

/// Embedding pipeline on an explicit tape (differentiable when the model
/// parameters require gradients): tokenize, optionally splice role markers,
/// truncate the tail to max_len, run the decoder, pool the selected layer.
Tensor embed_on_tape(Tape& tape, const DecoderModel& model,
                     std::string_view text, Role role,
                     const PoolingSpec& pooling, bool specb, int max_len);

/// Inference-only embedding returning a plain vector.
std::vector<double> embed(const DecoderModel& model, std::string_view text,
                          Role role, const PoolingSpec& pooling, bool specb,
                          int max_len);

/// Cosine similarity, clamped into [-1, 1] against rounding spill. Zero-norm
/// inputs are rejected.
double cosine(std::span<const double> u, std::span<const double> v);

/// Cache of pooled document vectors keyed by doc id, the persistent half of
/// the bi-encoder: documents are embedded once, queries at search time.
class EmbeddingIndex {
public:
    EmbeddingIndex() = default;
    EmbeddingIndex(std::size_t dim, const EmbedSettings& settings)
        : dim_(dim), settings_(settings) {}

    void add(const std::string& doc_id, std::vector<double> vec);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return entries_.size(); }
    const EmbedSettings& settings() const { return settings_; }
    const std::map<std::string, std::vector<double>>& entries() const {
        return entries_;
    }
    const std::vector<double>& vector_for(const std::string& doc_id) const;

    /// File layout: magic "SGPE", version u16, flags u32 (bit 0: f64 payload,
    /// bit 1: specb; bits 2-3: pooling method; bits 8-15: pooling layer + 1,
    /// 0 meaning "final layer"; bits 16-31: max sequence length used), dim
    /// u32, count u64, then per entry sorted by id: id (u16 length + bytes)
    /// followed by dim little-endian floats at the declared width.
    void save(const std::string& path) const;
    static EmbeddingIndex load(const std::string& path);

private:
    std::size_t dim_ = 0;
    EmbedSettings settings_;
    std::map<std::string, std::vector<double>> entries_;
};

/// Embeds every corpus document (title + " " + text) and caches the vectors.
EmbeddingIndex build_embedding_index(const DecoderModel& model,
                                     const Corpus& corpus,
                                     const EmbedSettings& settings);

/// Embeds the query with the index's own settings and returns the top-k
/// documents by cosine similarity (all of them when k exceeds the index).
Ranking bi_search(const DecoderModel& model, const std::string& query_id,
                  std::string_view query_text, const EmbeddingIndex& index,
                  int k);

/// Rescores the top max_rerank candidates by cosine against the cached
/// vectors, keeping the remainder below in first-stage order.
Ranking bi_rerank(const DecoderModel& model, std::string_view query_text,
                  const Ranking& candidates, const EmbeddingIndex& index,
                  int max_rerank);

/// Shared re-rank merge: the first new_scores.size() candidates are
/// rescored and sorted among themselves; the remainder keeps its order but
/// is placed strictly below every rescored entry.
Ranking merge_rerank(const Ranking& candidates,
                     std::span<const double> new_scores);

}  // namespace sgpt
