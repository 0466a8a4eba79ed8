#include "sgpt/training.hpp"

#include <cmath>
#include <fstream>

#include "sgpt/biencoder.hpp"
#include "sgpt/error.hpp"

namespace sgpt {

std::vector<PairExample> load_pairs(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open pair file: " + path);
    std::vector<PairExample> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) {
            throw ParseError("pair file line " + std::to_string(line_no) +
                             ": expected query<TAB>positive");
        }
        out.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    return out;
}

void TrainConfig::validate() const {
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    if (!std::isfinite(learning_rate)) throw ConfigError("learning rate not finite");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (accumulation_chunks < 1) {
        throw ConfigError("accumulation_chunks must be >= 1");
    }
    if (batch_size % accumulation_chunks != 0) {
        throw ConfigError("batch_size (" + std::to_string(batch_size) +
                          ") must be divisible by accumulation_chunks (" +
                          std::to_string(accumulation_chunks) + ")");
    }
    if (max_len < 1) throw ConfigError("max_len must be >= 1");
}

Tensor contrastive_loss(Tape& tape, std::span<const Tensor> query_emb,
                        std::span<const Tensor> doc_emb, double tau) {
    if (query_emb.empty() || query_emb.size() != doc_emb.size()) {
        throw InputError("contrastive_loss needs matching non-empty "
                         "query/document embedding lists");
    }
    if (!(tau > 0.0)) throw ConfigError("tau must be > 0");
    Tensor q = tape.normalize_rows(tape.stack_rows(query_emb));
    Tensor d = tape.normalize_rows(tape.stack_rows(doc_emb));
    Tensor sim = tape.matmul_nt(q, d);  // [M x M] of cosines
    Tensor scaled = tape.mul_scalar(sim, tau);
    return tape.neg_mean_diag(tape.log_softmax(scaled));
}

namespace {

double l2_norm(std::span<const double> v) {
    double sq = 0.0;
    for (double x : v) sq += x * x;
    return std::sqrt(sq);
}

bool is_bias_name(const std::string& name) {
    return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

}  // namespace

StepReport train_step(DecoderModel& model, const PairBatch& batch,
                      const TrainConfig& config) {
    config.validate();
    const std::size_t m = batch.size();
    if (m == 0) throw InputError("train_step on an empty batch");
    if (m % static_cast<std::size_t>(config.accumulation_chunks) != 0) {
        throw ConfigError("batch size " + std::to_string(m) +
                          " not divisible by accumulation_chunks " +
                          std::to_string(config.accumulation_chunks));
    }

    model.set_requires_grad(true);
    model.zero_grads();

    Tape tape;
    std::vector<Tensor> q_emb, d_emb;
    q_emb.reserve(m);
    d_emb.reserve(m);
    // Chunks run strictly in order; all embeddings land on one tape and the
    // similarity matrix is assembled across chunks before the log-softmax,
    // which keeps the loss equal to the single-chunk value.
    const std::size_t chunk =
        m / static_cast<std::size_t>(config.accumulation_chunks);
    for (std::size_t c = 0; c < m; c += chunk) {
        for (std::size_t i = c; i < c + chunk; ++i) {
            q_emb.push_back(embed_on_tape(tape, model, batch[i].query,
                                          Role::Query, config.pooling,
                                          config.specb, config.max_len));
            d_emb.push_back(embed_on_tape(tape, model, batch[i].positive,
                                          Role::Document, config.pooling,
                                          config.specb, config.max_len));
        }
    }
    Tensor loss = contrastive_loss(tape, q_emb, d_emb, config.tau);

    StepReport report;
    report.loss = loss.value();
    if (std::isnan(report.loss)) {
        throw TrainingError("NaN loss at batch of " + std::to_string(m) +
                            " pairs; aborting before the parameter update");
    }

    tape.backward(loss);

    for (const NamedTensor& p : model.parameters()) {
        report.grad_norms.emplace_back(p.name, l2_norm(p.tensor.grad()));
    }

    for (NamedTensor& p : model.parameters()) {
        const bool frozen = config.bitfit && !is_bias_name(p.name);
        if (frozen) {
            p.tensor.zero_grad();
            continue;
        }
        if (!p.tensor.has_grad()) continue;
        auto grad = p.tensor.grad();
        auto& data = p.tensor.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            data[i] -= config.learning_rate * grad[i];
        }
    }
    model.set_requires_grad(false);
    return report;
}

void log_gradient_norms(const StepReport& report, std::ostream& sink) {
    for (const auto& [name, norm] : report.grad_norms) {
        sink << report.step << ',' << name << ',';
        const auto flags = sink.flags();
        sink.precision(17);
        sink << norm << '\n';
        sink.flags(flags);
    }
    if (!sink) throw IoError("gradient log write failed");
}

TrainReport train(DecoderModel& model, const std::vector<PairExample>& pairs,
                  const TrainConfig& config, std::ostream* gradlog) {
    config.validate();
    if (config.steps > 0 && pairs.empty()) {
        throw InputError("training requires at least one pair");
    }
    if (gradlog) *gradlog << "step,tensor,norm\n";
    TrainReport report;
    std::size_t cursor = 0;
    for (int step = 0; step < config.steps; ++step) {
        PairBatch batch;
        batch.reserve(static_cast<std::size_t>(config.batch_size));
        for (int i = 0; i < config.batch_size; ++i) {
            batch.push_back(pairs[cursor]);
            cursor = (cursor + 1) % pairs.size();
        }
        StepReport sr = train_step(model, batch, config);
        sr.step = step;
        report.losses.push_back(sr.loss);
        if (gradlog) log_gradient_norms(sr, *gradlog);
    }
    return report;
}

}  // namespace sgpt
