#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sgpt/data.hpp"

namespace sgpt {

/// BEIR-format dataset: corpus.jsonl lines {"_id", "title", "text"},
/// queries.jsonl lines {"_id", "text"}, and a tab-separated qrels file whose
/// first row is the "query-id corpus-id score" header.
struct BeirData {
    Corpus corpus;
    std::vector<Query> queries;
    Qrels qrels;
    /// Non-fatal issues, e.g. judgments referencing unknown ids (retained).
    std::vector<std::string> warnings;
};

BeirData load_beir(const std::string& corpus_path,
                   const std::string& queries_path,
                   const std::string& qrels_path);

void write_beir_corpus(const Corpus& corpus, const std::string& path);
void write_beir_queries(std::span<const Query> queries, const std::string& path);
void write_qrels(const Qrels& qrels, const std::string& path);

/// nDCG@k with exponential gains, DCG = sum (2^rel - 1) / log2(rank + 1) and
/// the ideal DCG taken from the query's judged grades sorted descending; for
/// binary grades this coincides with the linear-gain form. A query without a
/// positive judgment cannot be scored and raises InputError - corpus-level
/// evaluation skips and flags such queries.
double ndcg_at_k(const Ranking& ranking, const Qrels& qrels, int k = 10);

/// Average precision over binary judgments (grade > 0 counts as relevant),
/// divided by the total number of judged relevant documents.
double average_precision(const Ranking& ranking, const Qrels& qrels);

/// Spearman rank correlation: average ranks on ties, then Pearson.
double spearman(std::span<const double> x, std::span<const double> y);

/// Best achievable nDCG@k given the first-stage candidates: the top
/// max_rerank entries are reordered ideally (grade descending) above the
/// untouched remainder.
double rerank_bound(const Ranking& candidates, const Qrels& qrels,
                    int max_rerank, int k = 10);

struct Rescaled {
    double value = 0.0;          // score / bound, not clipped
    bool exceeds_bound = false;  // value > 1 signals inconsistent inputs
};

/// Score as a fraction of its re-rank bound; bound must be positive.
Rescaled rescale(double score, double bound);

enum class Metric { NdcgAtK, AveragePrecision };

struct MetricSpec {
    Metric metric = Metric::NdcgAtK;
    int k = 10;
};

/// Parses "ndcg@<k>" or "ap".
MetricSpec parse_metric(const std::string& name);

struct EvalReport {
    std::vector<std::pair<std::string, double>> per_query;
    double mean = 0.0;
    /// Queries present in the run but lacking any positive judgment.
    std::vector<std::string> skipped;
};

/// Evaluates every ranking in the run; queries without positive judgments
/// are excluded from the mean and listed in `skipped`.
EvalReport evaluate_run(std::span<const Ranking> run, const Qrels& qrels,
                        const MetricSpec& metric);

/// TREC run rows: "query_id Q0 doc_id rank score run_tag", rank 1-based,
/// score at full precision. A non-empty config_comment is written first as a
/// "# ..." line, which the reader ignores.
void write_trec_run(std::ostream& os, std::span<const Ranking> run,
                    const std::string& run_tag,
                    const std::string& config_comment = "");
void write_trec_run(const std::string& path, std::span<const Ranking> run,
                    const std::string& run_tag,
                    const std::string& config_comment = "");

/// Reads a TREC run, grouping rows by query id in encounter order. Row order
/// within a query is preserved; comment lines starting with '#' are skipped.
std::vector<Ranking> read_trec_run(const std::string& path);

}  // namespace sgpt
