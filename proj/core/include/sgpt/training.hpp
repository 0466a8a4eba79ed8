#pragma once

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgpt/model.hpp"
#include "sgpt/pooling.hpp"
#include "sgpt/tensor.hpp"

namespace sgpt {

/// One (query, positive document) training pair; the other documents in the
/// same batch act as negatives.
struct PairExample {
    std::string query;
    std::string positive;
};

using PairBatch = std::vector<PairExample>;

/// Tab-separated "query<TAB>positive" lines; '#' lines are comments.
std::vector<PairExample> load_pairs(const std::string& path);

struct TrainConfig {
    double tau = 20.0;  // similarity temperature
    double learning_rate = 0.1;
    int steps = 1;
    int batch_size = 8;
    int accumulation_chunks = 1;  // must divide batch_size
    bool bitfit = false;          // update only bias parameters
    int max_len = 75;
    bool specb = false;
    PoolingSpec pooling;
    std::uint64_t seed = 42;

    void validate() const;
};

/// In-batch-negative contrastive loss over M (query, document) embedding
/// pairs:
///   loss = -(1/M) sum_i log softmax_j(tau * cos(q_i, d_j))[i]
/// i.e. each query should prefer its own document over the other documents
/// in the batch. Only the query-to-document direction enters the
/// denominator. Differentiable end to end; zero embeddings are rejected.
Tensor contrastive_loss(Tape& tape, std::span<const Tensor> query_emb,
                        std::span<const Tensor> doc_emb, double tau);

struct StepReport {
    int step = 0;
    double loss = 0.0;
    /// Per-parameter L2 gradient norms, recorded before any bias-only
    /// masking, so frozen weights still show their raw gradient signal.
    std::vector<std::pair<std::string, double>> grad_norms;
};

/// One optimization step: embeds all 2M batch texts (queries with the query
/// role, positives with the document role) in accumulation_chunks groups,
/// assembles the full similarity matrix before the log-softmax - so the
/// loss is identical for every chunk count - backpropagates, and applies a
/// plain gradient-descent update. With bitfit, all non-bias gradients are
/// zeroed before the update and only bias parameters change. A NaN loss
/// aborts with a diagnostic.
StepReport train_step(DecoderModel& model, const PairBatch& batch,
                      const TrainConfig& config);

/// Appends "step,tensor,norm" CSV rows, one per logged tensor.
void log_gradient_norms(const StepReport& report, std::ostream& sink);

struct TrainReport {
    std::vector<double> losses;  // one entry per step
};

/// Runs `config.steps` steps over the pair list, taking consecutive
/// batch_size slices and wrapping around; deterministic given the model
/// seed and data order. When gradlog is non-null a CSV header plus one row
/// per (step, tensor) is written.
TrainReport train(DecoderModel& model, const std::vector<PairExample>& pairs,
                  const TrainConfig& config, std::ostream* gradlog = nullptr);

}  // namespace sgpt
