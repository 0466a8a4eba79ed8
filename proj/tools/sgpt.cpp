// sgpt: semantic search over a toy causal decoder - BM25 first stage,
// log-probability cross-encoder re-ranking, cached bi-encoder embeddings,
// contrastive training and TREC-style evaluation, all file based.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "sgpt/biencoder.hpp"
#include "sgpt/crossencoder.hpp"
#include "sgpt/error.hpp"
#include "sgpt/evaluation.hpp"
#include "sgpt/model.hpp"
#include "sgpt/retrieval.hpp"
#include "sgpt/training.hpp"

namespace {

using namespace sgpt;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::uint64_t resolve_seed(std::optional<std::uint64_t> flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("SGPT_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw InputError(std::string("bad SGPT_SEED value: ") + env);
        }
    }
    return 42;
}

/// Every run announces its resolved configuration; the same line goes into
/// text outputs as a '#' comment.
void print_cfg(const std::string& cfg) { std::cout << "# cfg: " << cfg << "\n"; }

std::string json_id(const nlohmann::json& j) {
    if (j.contains("_id") && j.at("_id").is_number_integer()) {
        return std::to_string(j.at("_id").get<long long>());
    }
    return j.at("_id").get<std::string>();
}

Corpus load_corpus_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open corpus: " + path);
    Corpus corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Document doc;
            doc.id = json_id(j);
            doc.title = j.value("title", std::string{});
            doc.text = j.value("text", std::string{});
            corpus.add(std::move(doc));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    return corpus;
}

std::vector<Query> load_queries_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open queries: " + path);
    std::vector<Query> queries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            queries.push_back({json_id(j), j.value("text", std::string{})});
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(path + " line " + std::to_string(line_no) + ": " +
                             e.what());
        }
    }
    return queries;
}

Qrels load_qrels_tsv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open qrels: " + path);
    Qrels qrels;
    std::string line;
    std::size_t line_no = 0;
    bool header_skipped = false;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (!header_skipped) {
            header_skipped = true;
            continue;
        }
        std::istringstream ls(line);
        std::string qid, did, grade;
        if (!(std::getline(ls, qid, '\t') && std::getline(ls, did, '\t') &&
              std::getline(ls, grade))) {
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": expected query-id<TAB>corpus-id<TAB>score");
        }
        try {
            qrels.set(qid, did, std::stoi(grade));
        } catch (const std::exception&) {
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": bad score '" + grade + "'");
        }
    }
    return qrels;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

struct IndexArgs {
    std::string corpus, out;
    double k1 = 0.9, b = 0.4;
};

int cmd_index(const IndexArgs& a) {
    std::ostringstream cfg;
    cfg << "cmd=index corpus=" << a.corpus << " out=" << a.out << " k1=" << a.k1
        << " b=" << a.b;
    print_cfg(cfg.str());
    const Corpus corpus = load_corpus_jsonl(a.corpus);
    InvertedIndex::build(corpus, a.k1, a.b).save(a.out);
    std::cout << "indexed " << corpus.size() << " documents\n";
    return kExitOk;
}

struct SearchArgs {
    std::string index, queries, out;
    int k = 10;
    std::string tag = "bm25";
};

int cmd_search(const SearchArgs& a) {
    std::ostringstream cfg;
    cfg << "cmd=search index=" << a.index << " queries=" << a.queries
        << " k=" << a.k << " out=" << a.out;
    print_cfg(cfg.str());
    const InvertedIndex index = InvertedIndex::load(a.index);
    const std::vector<Query> queries = load_queries_jsonl(a.queries);
    std::vector<Ranking> run;
    run.reserve(queries.size());
    for (const Query& q : queries) {
        run.push_back(index.search(q.id, q.text, a.k));
    }
    write_trec_run(a.out, run, a.tag, "cfg: " + cfg.str());
    std::cout << "wrote " << run.size() << " query rankings\n";
    return kExitOk;
}

struct RerankArgs {
    std::string model, run, corpus, queries, out;
    std::string prompt = "G";
    std::string prompts_file;
    int max_rerank = 100;
    int max_len = 2048;
    std::string tag = "sgpt-ce";
};

int cmd_rerank(const RerankArgs& a) {
    std::ostringstream cfg;
    cfg << "cmd=rerank model=" << a.model << " run=" << a.run
        << " prompt=" << a.prompt << " max_rerank=" << a.max_rerank
        << " max_len=" << a.max_len << " out=" << a.out;
    print_cfg(cfg.str());

    const PromptRegistry registry = a.prompts_file.empty()
                                        ? PromptRegistry::builtin()
                                        : PromptRegistry::load(a.prompts_file);
    const PromptTemplate& prompt = registry.get(a.prompt);
    const DecoderModel model = DecoderModel::load_checkpoint(a.model);
    const Corpus corpus = load_corpus_jsonl(a.corpus);
    const std::vector<Query> queries = load_queries_jsonl(a.queries);
    const std::vector<Ranking> first = read_trec_run(a.run);

    std::unordered_map<std::string, std::string> query_text;
    for (const Query& q : queries) query_text[q.id] = q.text;

    std::vector<Ranking> out;
    out.reserve(first.size());
    for (const Ranking& candidates : first) {
        auto it = query_text.find(candidates.query_id);
        if (it == query_text.end()) {
            throw InputError("run references query id '" + candidates.query_id +
                             "' missing from " + a.queries);
        }
        out.push_back(rerank(model, prompt, it->second, candidates, corpus,
                             a.max_rerank, a.max_len));
    }
    write_trec_run(a.out, out, a.tag, "cfg: " + cfg.str());
    std::cout << "reranked " << out.size() << " query rankings\n";
    return kExitOk;
}

struct EmbedArgs {
    std::string model, corpus, out;
    std::string pooling = "weightedmean";
    std::string layer = "last";
    std::string preset;
    bool specb = false;
    int max_len = 300;
    bool f32 = false;
};

EmbedSettings embed_settings(const EmbedArgs& a) {
    EmbedSettings settings;
    if (!a.preset.empty()) {
        if (a.preset == "symmetric") {
            settings = symmetric_preset();
        } else if (a.preset == "asymmetric") {
            settings = asymmetric_preset();
        } else {
            throw InputError("unknown preset '" + a.preset +
                             "' (expected symmetric or asymmetric)");
        }
    } else {
        settings.specb = a.specb;
        settings.max_len = a.max_len;
    }
    settings.pooling.method = pooling_method_from_name(a.pooling);
    if (a.layer == "last") {
        settings.pooling.layer = -1;
    } else {
        try {
            settings.pooling.layer = std::stoi(a.layer);
        } catch (const std::exception&) {
            throw InputError("bad --layer value: " + a.layer);
        }
    }
    settings.store_f32 = a.f32;
    return settings;
}

int cmd_embed(const EmbedArgs& a) {
    const EmbedSettings settings = embed_settings(a);
    std::ostringstream cfg;
    cfg << "cmd=embed model=" << a.model << " corpus=" << a.corpus
        << " pooling=" << pooling_method_name(settings.pooling.method)
        << " layer=" << settings.pooling.layer
        << " specb=" << (settings.specb ? 1 : 0)
        << " max_len=" << settings.max_len
        << " storage=" << (settings.store_f32 ? "f32" : "f64")
        << " out=" << a.out;
    print_cfg(cfg.str());
    const DecoderModel model = DecoderModel::load_checkpoint(a.model);
    const Corpus corpus = load_corpus_jsonl(a.corpus);
    build_embedding_index(model, corpus, settings).save(a.out);
    std::cout << "embedded " << corpus.size() << " documents\n";
    return kExitOk;
}

struct BisearchArgs {
    std::string emb, model, queries, out;
    int k = 10;
    std::string tag = "sgpt-be";
};

int cmd_bisearch(const BisearchArgs& a) {
    std::ostringstream cfg;
    cfg << "cmd=bisearch emb=" << a.emb << " model=" << a.model
        << " queries=" << a.queries << " k=" << a.k << " out=" << a.out;
    print_cfg(cfg.str());
    const DecoderModel model = DecoderModel::load_checkpoint(a.model);
    const EmbeddingIndex index = EmbeddingIndex::load(a.emb);
    const std::vector<Query> queries = load_queries_jsonl(a.queries);
    std::vector<Ranking> run;
    run.reserve(queries.size());
    for (const Query& q : queries) {
        run.push_back(bi_search(model, q.id, q.text, index, a.k));
    }
    write_trec_run(a.out, run, a.tag, "cfg: " + cfg.str());
    std::cout << "wrote " << run.size() << " query rankings\n";
    return kExitOk;
}

struct TrainArgs {
    std::string pairs, out, gradlog, model;
    double tau = 20.0;
    double lr = 0.1;
    int steps = 100;
    int batch_size = 8;
    int chunks = 1;
    bool bitfit = false;
    int max_len = 75;
    bool specb = false;
    std::string pooling = "weightedmean";
    // Fresh-init configuration, used when --model is absent.
    int layers = 2;
    int heads = 4;
    int dmodel = 32;
    int dff = 0;
    int max_seq_len = 128;
    std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
    const std::uint64_t seed = resolve_seed(a.seed);
    TrainConfig cfg;
    cfg.tau = a.tau;
    cfg.learning_rate = a.lr;
    cfg.steps = a.steps;
    cfg.batch_size = a.batch_size;
    cfg.accumulation_chunks = a.chunks;
    cfg.bitfit = a.bitfit;
    cfg.max_len = a.max_len;
    cfg.specb = a.specb;
    cfg.pooling.method = pooling_method_from_name(a.pooling);
    cfg.seed = seed;
    cfg.validate();

    std::ostringstream line;
    line << "cmd=train pairs=" << a.pairs << " steps=" << cfg.steps
         << " batch_size=" << cfg.batch_size
         << " chunks=" << cfg.accumulation_chunks << " tau=" << cfg.tau
         << " lr=" << cfg.learning_rate << " bitfit=" << (cfg.bitfit ? 1 : 0)
         << " specb=" << (cfg.specb ? 1 : 0) << " max_len=" << cfg.max_len
         << " seed=" << seed << " out=" << a.out;
    print_cfg(line.str());

    DecoderModel model = [&] {
        if (!a.model.empty()) return DecoderModel::load_checkpoint(a.model);
        ModelConfig mc;
        mc.n_layers = a.layers;
        mc.n_heads = a.heads;
        mc.d_model = a.dmodel;
        mc.d_ff = a.dff;
        mc.max_seq_len = a.max_seq_len;
        mc.seed = seed;
        return DecoderModel::init(mc);
    }();
    std::vector<PairExample> pairs;
    if (cfg.steps > 0) {
        if (cfg.max_len > model.config().max_seq_len) {
            throw InputError("--max-len exceeds the model's max_seq_len");
        }
        if (a.pairs.empty()) {
            throw InputError("--pairs is required when --steps > 0");
        }
        pairs = load_pairs(a.pairs);
        if (pairs.empty()) throw InputError("no pairs in " + a.pairs);
    }

    // Snapshot for the change report printed after training.
    std::vector<std::vector<double>> before;
    for (const NamedTensor& p : model.parameters()) {
        before.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    }

    std::ofstream gradlog;
    if (!a.gradlog.empty()) {
        gradlog.open(a.gradlog, std::ios::trunc);
        if (!gradlog) throw IoError("cannot open gradient log: " + a.gradlog);
        gradlog << "# cfg: " << line.str() << "\n";
    }
    const TrainReport report =
        train(model, pairs, cfg, a.gradlog.empty() ? nullptr : &gradlog);

    model.save_checkpoint(a.out);

    std::size_t changed = 0, unchanged = 0;
    const auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const bool same = std::equal(params[i].tensor.data().begin(),
                                     params[i].tensor.data().end(),
                                     before[i].begin());
        if (same) {
            ++unchanged;
        } else {
            ++changed;
        }
    }
    if (!report.losses.empty()) {
        std::cout << "first_loss=" << report.losses.front()
                  << " last_loss=" << report.losses.back() << "\n";
    }
    std::cout << "tensors_changed=" << changed
              << " tensors_unchanged=" << unchanged << "\n";
    if (cfg.bitfit) {
        std::cout << "bitfit: only the " << model.bias_parameters().size()
                  << " bias tensors may change\n";
    }
    return kExitOk;
}

struct EvalArgs {
    std::string run, qrels;
    std::string metric = "ndcg@10";
    std::string bound_candidates;
    int max_rerank = 0;
};

int cmd_eval(const EvalArgs& a) {
    std::ostringstream cfg;
    cfg << "cmd=eval run=" << a.run << " qrels=" << a.qrels
        << " metric=" << a.metric;
    if (!a.bound_candidates.empty()) {
        cfg << " bound_candidates=" << a.bound_candidates
            << " max_rerank=" << a.max_rerank;
    }
    print_cfg(cfg.str());

    const std::vector<Ranking> run = read_trec_run(a.run);
    const Qrels qrels = load_qrels_tsv(a.qrels);
    const MetricSpec metric = parse_metric(a.metric);
    const EvalReport report = evaluate_run(run, qrels, metric);

    std::unordered_map<std::string, double> bounds;
    double bound_sum = 0.0;
    std::size_t bound_count = 0;
    if (!a.bound_candidates.empty()) {
        if (metric.metric != Metric::NdcgAtK) {
            throw InputError("re-rank bounds are defined for ndcg@k only");
        }
        for (const Ranking& candidates : read_trec_run(a.bound_candidates)) {
            try {
                bounds[candidates.query_id] =
                    rerank_bound(candidates, qrels, a.max_rerank, metric.k);
            } catch (const InputError&) {
                continue;  // unjudged query; skipped from the report too
            }
        }
    }

    std::cout.precision(6);
    std::cout << std::fixed;
    for (const auto& [qid, value] : report.per_query) {
        std::cout << "query " << qid << " " << value;
        auto it = bounds.find(qid);
        if (it != bounds.end() && it->second > 0.0) {
            const Rescaled r = rescale(value, it->second);
            std::cout << " bound " << it->second << " rescaled " << r.value;
            if (r.exceeds_bound) std::cout << " (exceeds bound)";
            bound_sum += it->second;
            ++bound_count;
        }
        std::cout << "\n";
    }
    for (const std::string& qid : report.skipped) {
        std::cout << "skipped " << qid << " (no positive judgments)\n";
    }
    std::cout << "mean " << report.mean << " evaluated "
              << report.per_query.size() << " skipped " << report.skipped.size();
    if (bound_count > 0) {
        const double mean_bound = bound_sum / static_cast<double>(bound_count);
        const Rescaled r = rescale(report.mean, mean_bound);
        std::cout << " mean_bound " << mean_bound << " rescaled " << r.value;
        if (r.exceeds_bound) std::cout << " (exceeds bound)";
    }
    std::cout << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"semantic search with a toy causal decoder transformer"};
    app.require_subcommand(1);

    IndexArgs index_args;
    auto* index_cmd = app.add_subcommand("index", "build a BM25 inverted index");
    index_cmd->add_option("--corpus", index_args.corpus, "corpus.jsonl")->required();
    index_cmd->add_option("--out", index_args.out, "index output path")->required();
    index_cmd->add_option("--k1", index_args.k1, "BM25 k1");
    index_cmd->add_option("--b", index_args.b, "BM25 b");

    SearchArgs search_args;
    auto* search_cmd = app.add_subcommand("search", "BM25 search to a TREC run");
    search_cmd->add_option("--index", search_args.index, "index path")->required();
    search_cmd->add_option("--queries", search_args.queries, "queries.jsonl")->required();
    search_cmd->add_option("--k", search_args.k, "results per query");
    search_cmd->add_option("--out", search_args.out, "run output path")->required();
    search_cmd->add_option("--tag", search_args.tag, "run tag");

    RerankArgs rerank_args;
    auto* rerank_cmd =
        app.add_subcommand("rerank", "cross-encoder re-ranking of a TREC run");
    rerank_cmd->add_option("--model", rerank_args.model, "model checkpoint")->required();
    rerank_cmd->add_option("--run", rerank_args.run, "first-stage run")->required();
    rerank_cmd->add_option("--corpus", rerank_args.corpus, "corpus.jsonl")->required();
    rerank_cmd->add_option("--queries", rerank_args.queries, "queries.jsonl")->required();
    rerank_cmd->add_option("--prompt", rerank_args.prompt, "prompt id (default G)");
    rerank_cmd->add_option("--prompts", rerank_args.prompts_file,
                           "prompt registry file (defaults to the built-in set)");
    rerank_cmd->add_option("--max-rerank", rerank_args.max_rerank,
                           "candidates to rescore");
    rerank_cmd->add_option("--max-len", rerank_args.max_len, "prompt token budget");
    rerank_cmd->add_option("--out", rerank_args.out, "run output path")->required();
    rerank_cmd->add_option("--tag", rerank_args.tag, "run tag");

    EmbedArgs embed_args;
    auto* embed_cmd = app.add_subcommand("embed", "build a bi-encoder embedding index");
    embed_cmd->add_option("--model", embed_args.model, "model checkpoint")->required();
    embed_cmd->add_option("--corpus", embed_args.corpus, "corpus.jsonl")->required();
    embed_cmd->add_option("--pooling", embed_args.pooling,
                          "weightedmean | mean | lasttoken");
    embed_cmd->add_option("--layer", embed_args.layer, "hidden layer or 'last'");
    embed_cmd->add_option("--preset", embed_args.preset, "symmetric | asymmetric");
    embed_cmd->add_flag("--specb", embed_args.specb, "enclose roles in brackets");
    embed_cmd->add_option("--max-len", embed_args.max_len, "token cap per document");
    embed_cmd->add_flag("--f32", embed_args.f32, "store 32-bit vectors");
    embed_cmd->add_option("--out", embed_args.out, "index output path")->required();

    BisearchArgs bisearch_args;
    auto* bisearch_cmd =
        app.add_subcommand("bisearch", "cosine search against cached embeddings");
    bisearch_cmd->add_option("--emb", bisearch_args.emb, "embedding index")->required();
    bisearch_cmd->add_option("--model", bisearch_args.model, "model checkpoint")->required();
    bisearch_cmd->add_option("--queries", bisearch_args.queries, "queries.jsonl")->required();
    bisearch_cmd->add_option("--k", bisearch_args.k, "results per query");
    bisearch_cmd->add_option("--out", bisearch_args.out, "run output path")->required();
    bisearch_cmd->add_option("--tag", bisearch_args.tag, "run tag");

    TrainArgs train_args;
    auto* train_cmd =
        app.add_subcommand("train", "contrastive fine-tuning on query-positive pairs");
    train_cmd->add_option("--pairs", train_args.pairs, "tab-separated pair file");
    train_cmd->add_option("--model", train_args.model,
                          "checkpoint to continue from (else fresh init)");
    train_cmd->add_option("--tau", train_args.tau, "similarity temperature");
    train_cmd->add_option("--lr", train_args.lr, "learning rate");
    train_cmd->add_option("--steps", train_args.steps, "optimization steps");
    train_cmd->add_option("--batch-size", train_args.batch_size, "pairs per step");
    train_cmd->add_option("--chunks", train_args.chunks, "accumulation chunks");
    train_cmd->add_flag("--bitfit", train_args.bitfit, "update bias tensors only");
    train_cmd->add_option("--max-len", train_args.max_len, "token cap per text");
    train_cmd->add_flag("--specb", train_args.specb, "enclose roles in brackets");
    train_cmd->add_option("--pooling", train_args.pooling,
                          "weightedmean | mean | lasttoken");
    train_cmd->add_option("--layers", train_args.layers, "fresh model: blocks");
    train_cmd->add_option("--heads", train_args.heads, "fresh model: heads");
    train_cmd->add_option("--dmodel", train_args.dmodel, "fresh model: width");
    train_cmd->add_option("--dff", train_args.dff, "fresh model: mlp width");
    train_cmd->add_option("--max-seq-len", train_args.max_seq_len,
                          "fresh model: sequence limit");
    train_cmd->add_option("--seed", train_args.seed,
                          "seed (or SGPT_SEED, default 42)");
    train_cmd->add_option("--out", train_args.out, "checkpoint output")->required();
    train_cmd->add_option("--gradlog", train_args.gradlog,
                          "per-step gradient norm CSV");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "score a TREC run against qrels");
    eval_cmd->add_option("--run", eval_args.run, "run file")->required();
    eval_cmd->add_option("--qrels", eval_args.qrels, "qrels file")->required();
    eval_cmd->add_option("--metric", eval_args.metric, "ndcg@<k> or ap");
    eval_cmd->add_option("--bound-candidates", eval_args.bound_candidates,
                         "first-stage run for re-rank bounds");
    eval_cmd->add_option("--max-rerank", eval_args.max_rerank,
                         "window for the bound");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*index_cmd) return cmd_index(index_args);
        if (*search_cmd) return cmd_search(search_args);
        if (*rerank_cmd) return cmd_rerank(rerank_args);
        if (*embed_cmd) return cmd_embed(embed_args);
        if (*bisearch_cmd) return cmd_bisearch(bisearch_args);
        if (*train_cmd) return cmd_train(train_args);
        if (*eval_cmd) return cmd_eval(eval_args);
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const TrainingError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    } catch (const Error& e) {
        // Remaining library errors are caller/input problems: bad files, bad
        // flags, malformed data.
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
