#include "sgpt/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "sgpt/error.hpp"

namespace sgpt {

namespace {

using nlohmann::json;

std::string id_field(const json& j, const char* key, const std::string& where) {
    if (!j.contains(key)) {
        throw ParseError(where + ": missing field '" + key + "'");
    }
    const auto& v = j.at(key);
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    throw ParseError(where + ": field '" + key + "' is neither string nor int");
}

json parse_json_line(const std::string& line, const std::string& where) {
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw ParseError(where + ": " + e.what());
    }
}

}  // namespace

BeirData load_beir(const std::string& corpus_path,
                   const std::string& queries_path,
                   const std::string& qrels_path) {
    BeirData data;

    std::ifstream cis(corpus_path);
    if (!cis) throw IoError("cannot open corpus: " + corpus_path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(cis, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where =
            corpus_path + " line " + std::to_string(line_no);
        const json j = parse_json_line(line, where);
        Document doc;
        doc.id = id_field(j, "_id", where);
        doc.title = j.value("title", std::string{});
        doc.text = j.value("text", std::string{});
        data.corpus.add(std::move(doc));
    }

    std::ifstream qis(queries_path);
    if (!qis) throw IoError("cannot open queries: " + queries_path);
    line_no = 0;
    while (std::getline(qis, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where =
            queries_path + " line " + std::to_string(line_no);
        const json j = parse_json_line(line, where);
        data.queries.push_back({id_field(j, "_id", where),
                                j.value("text", std::string{})});
    }

    std::ifstream ris(qrels_path);
    if (!ris) throw IoError("cannot open qrels: " + qrels_path);
    line_no = 0;
    bool header_skipped = false;
    std::vector<std::string> known_queries;
    known_queries.reserve(data.queries.size());
    for (const Query& q : data.queries) known_queries.push_back(q.id);
    std::sort(known_queries.begin(), known_queries.end());
    while (std::getline(ris, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (!header_skipped) {
            // The format carries a "query-id corpus-id score" header row.
            header_skipped = true;
            continue;
        }
        std::istringstream ls(line);
        std::string qid, did, grade_text;
        if (!(std::getline(ls, qid, '\t') && std::getline(ls, did, '\t') &&
              std::getline(ls, grade_text))) {
            throw ParseError(qrels_path + " line " + std::to_string(line_no) +
                             ": expected query-id<TAB>corpus-id<TAB>score");
        }
        int grade = 0;
        try {
            grade = std::stoi(grade_text);
        } catch (const std::exception&) {
            throw ParseError(qrels_path + " line " + std::to_string(line_no) +
                             ": bad score '" + grade_text + "'");
        }
        if (!data.corpus.contains(did)) {
            data.warnings.push_back("qrels line " + std::to_string(line_no) +
                                    ": unknown corpus id '" + did + "'");
        }
        if (!std::binary_search(known_queries.begin(), known_queries.end(), qid)) {
            data.warnings.push_back("qrels line " + std::to_string(line_no) +
                                    ": unknown query id '" + qid + "'");
        }
        data.qrels.set(qid, did, grade);
    }
    return data;
}

void write_beir_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    for (const Document& d : corpus.docs()) {
        json j{{"_id", d.id}, {"title", d.title}, {"text", d.text}};
        os << j.dump() << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

void write_beir_queries(std::span<const Query> queries, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    for (const Query& q : queries) {
        json j{{"_id", q.id}, {"text", q.text}};
        os << j.dump() << '\n';
    }
    if (!os) throw IoError("write failed: " + path);
}

void write_qrels(const Qrels& qrels, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "query-id\tcorpus-id\tscore\n";
    for (const std::string& qid : qrels.query_ids()) {
        for (const auto& [did, grade] : qrels.for_query(qid)) {
            os << qid << '\t' << did << '\t' << grade << '\n';
        }
    }
    if (!os) throw IoError("write failed: " + path);
}

namespace {

double dcg_at_k(std::span<const int> grades, int k) {
    double dcg = 0.0;
    const std::size_t limit =
        std::min<std::size_t>(grades.size(), static_cast<std::size_t>(k));
    for (std::size_t r = 0; r < limit; ++r) {
        dcg += (std::exp2(static_cast<double>(grades[r])) - 1.0) /
               std::log2(static_cast<double>(r) + 2.0);
    }
    return dcg;
}

std::vector<int> judged_grades_desc(const Qrels& qrels, const std::string& qid) {
    std::vector<int> grades;
    for (const auto& [_, g] : qrels.for_query(qid)) {
        if (g > 0) grades.push_back(g);
    }
    std::sort(grades.begin(), grades.end(), std::greater<>());
    return grades;
}

}  // namespace

double ndcg_at_k(const Ranking& ranking, const Qrels& qrels, int k) {
    if (k < 1) throw InputError("ndcg requires k >= 1");
    const std::vector<int> ideal = judged_grades_desc(qrels, ranking.query_id);
    if (ideal.empty()) {
        throw InputError("query '" + ranking.query_id +
                         "' has no positive judgments");
    }
    std::vector<int> got;
    got.reserve(ranking.entries.size());
    for (const ScoredDoc& e : ranking.entries) {
        got.push_back(qrels.grade(ranking.query_id, e.doc_id));
    }
    const double idcg = dcg_at_k(ideal, k);
    return dcg_at_k(got, k) / idcg;
}

double average_precision(const Ranking& ranking, const Qrels& qrels) {
    std::size_t total_relevant = 0;
    for (const auto& [_, g] : qrels.for_query(ranking.query_id)) {
        if (g > 0) ++total_relevant;
    }
    if (total_relevant == 0) {
        throw InputError("query '" + ranking.query_id +
                         "' has no positive judgments");
    }
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < ranking.entries.size(); ++r) {
        if (qrels.grade(ranking.query_id, ranking.entries[r].doc_id) > 0) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(total_relevant);
}

namespace {

/// Rank transform with average ranks on ties (1-based).
std::vector<double> average_ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) {
        throw ContractError("spearman inputs differ in length");
    }
    if (x.size() < 2) {
        throw ContractError("spearman requires at least two points");
    }
    const std::vector<double> rx = average_ranks(x);
    const std::vector<double> ry = average_ranks(y);
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = rx[i] - mx;
        const double dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw InputError("spearman undefined for constant input");
    }
    return sxy / std::sqrt(sxx * syy);
}

double rerank_bound(const Ranking& candidates, const Qrels& qrels,
                    int max_rerank, int k) {
    if (max_rerank < 0) throw InputError("max_rerank must be >= 0");
    const std::size_t n = std::min(static_cast<std::size_t>(max_rerank),
                                   candidates.entries.size());
    Ranking ideal;
    ideal.query_id = candidates.query_id;
    ideal.entries = candidates.entries;
    // Ideal second stage: the rescorable prefix sorted by grade descending
    // (ties keep first-stage order), remainder untouched.
    std::stable_sort(ideal.entries.begin(),
                     ideal.entries.begin() + static_cast<std::ptrdiff_t>(n),
                     [&](const ScoredDoc& a, const ScoredDoc& b) {
                         return qrels.grade(ideal.query_id, a.doc_id) >
                                qrels.grade(ideal.query_id, b.doc_id);
                     });
    return ndcg_at_k(ideal, qrels, k);
}

Rescaled rescale(double score, double bound) {
    if (!(bound > 0.0)) {
        throw InputError("rescale requires a positive bound, got " +
                         std::to_string(bound));
    }
    Rescaled r;
    r.value = score / bound;
    r.exceeds_bound = r.value > 1.0;
    return r;
}

MetricSpec parse_metric(const std::string& name) {
    MetricSpec spec;
    if (name == "ap") {
        spec.metric = Metric::AveragePrecision;
        return spec;
    }
    if (name.rfind("ndcg@", 0) == 0) {
        spec.metric = Metric::NdcgAtK;
        try {
            spec.k = std::stoi(name.substr(5));
        } catch (const std::exception&) {
            throw InputError("bad metric: " + name);
        }
        if (spec.k < 1) throw InputError("bad metric cutoff in: " + name);
        return spec;
    }
    throw InputError("unknown metric '" + name + "' (expected ndcg@<k> or ap)");
}

EvalReport evaluate_run(std::span<const Ranking> run, const Qrels& qrels,
                        const MetricSpec& metric) {
    EvalReport report;
    double sum = 0.0;
    for (const Ranking& ranking : run) {
        double value = 0.0;
        try {
            value = metric.metric == Metric::NdcgAtK
                        ? ndcg_at_k(ranking, qrels, metric.k)
                        : average_precision(ranking, qrels);
        } catch (const InputError&) {
            report.skipped.push_back(ranking.query_id);
            continue;
        }
        report.per_query.emplace_back(ranking.query_id, value);
        sum += value;
    }
    report.mean =
        report.per_query.empty() ? 0.0 : sum / static_cast<double>(report.per_query.size());
    return report;
}

void write_trec_run(std::ostream& os, std::span<const Ranking> run,
                    const std::string& run_tag,
                    const std::string& config_comment) {
    if (!config_comment.empty()) os << "# " << config_comment << '\n';
    const auto flags = os.flags();
    os.precision(17);
    for (const Ranking& ranking : run) {
        for (std::size_t r = 0; r < ranking.entries.size(); ++r) {
            os << ranking.query_id << " Q0 " << ranking.entries[r].doc_id << ' '
               << (r + 1) << ' ' << ranking.entries[r].score << ' ' << run_tag
               << '\n';
        }
    }
    os.flags(flags);
    if (!os) throw IoError("run file write failed");
}

void write_trec_run(const std::string& path, std::span<const Ranking> run,
                    const std::string& run_tag,
                    const std::string& config_comment) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open run file for writing: " + path);
    write_trec_run(os, run, run_tag, config_comment);
}

std::vector<Ranking> read_trec_run(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open run file: " + path);
    std::vector<Ranking> out;
    std::unordered_map<std::string, std::size_t> by_query;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string qid, q0, did, rank_text, score_text, tag;
        if (!(ls >> qid >> q0 >> did >> rank_text >> score_text >> tag)) {
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": expected 6 space-separated run fields");
        }
        double score = 0.0;
        try {
            score = std::stod(score_text);
        } catch (const std::exception&) {
            throw ParseError(path + " line " + std::to_string(line_no) +
                             ": bad score '" + score_text + "'");
        }
        auto [it, inserted] = by_query.emplace(qid, out.size());
        if (inserted) {
            out.emplace_back();
            out.back().query_id = qid;
        }
        out[it->second].entries.push_back({did, score});
    }
    return out;
}

}  // namespace sgpt
