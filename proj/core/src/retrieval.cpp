#include "sgpt/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binio.hpp"
#include "sgpt/error.hpp"

namespace sgpt {

std::vector<std::string> lexical_tokenize(std::string_view text) {
    std::vector<std::string> out;
    std::string current;
    for (char c : text) {
        const unsigned char u = static_cast<unsigned char>(c);
        const bool alnum = (u >= '0' && u <= '9') || (u >= 'a' && u <= 'z') ||
                           (u >= 'A' && u <= 'Z');
        if (alnum) {
            current.push_back(
                u >= 'A' && u <= 'Z' ? static_cast<char>(u - 'A' + 'a') : c);
        } else if (!current.empty()) {
            out.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

InvertedIndex InvertedIndex::build(const Corpus& corpus, double k1, double b) {
    if (corpus.empty()) throw InputError("cannot index an empty corpus");
    if (k1 < 0.0 || b < 0.0 || b > 1.0) {
        throw InputError("bm25 parameters out of range: k1 >= 0 and 0 <= b <= 1");
    }
    InvertedIndex index;
    index.k1_ = k1;
    index.b_ = b;

    std::map<std::string, std::map<std::uint32_t, std::uint32_t>> tf_by_term;
    double length_sum = 0.0;
    for (const Document& doc : corpus.docs()) {
        const auto tokens = lexical_tokenize(doc.full_text());
        const std::uint32_t pos = static_cast<std::uint32_t>(index.docs_.size());
        index.docs_.emplace_back(doc.id, static_cast<std::uint32_t>(tokens.size()));
        length_sum += static_cast<double>(tokens.size());
        for (const std::string& t : tokens) ++tf_by_term[t][pos];
    }
    index.avgdl_ = length_sum / static_cast<double>(index.docs_.size());

    for (auto& [term, tf_map] : tf_by_term) {
        std::vector<Posting> postings(tf_map.begin(), tf_map.end());
        std::sort(postings.begin(), postings.end(),
                  [&](const Posting& a, const Posting& b2) {
                      return index.docs_[a.first].first <
                             index.docs_[b2.first].first;
                  });
        index.postings_.emplace(term, std::move(postings));
    }
    index.rebuild_doc_positions();
    return index;
}

void InvertedIndex::rebuild_doc_positions() {
    doc_pos_.clear();
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        auto [_, inserted] = doc_pos_.emplace(docs_[i].first, i);
        if (!inserted) {
            throw CorruptionError("duplicate document id in index: " +
                                  docs_[i].first);
        }
    }
}

std::size_t InvertedIndex::doc_length(const std::string& doc_id) const {
    auto it = doc_pos_.find(doc_id);
    if (it == doc_pos_.end()) throw InputError("unknown document id: " + doc_id);
    return docs_[it->second].second;
}

std::size_t InvertedIndex::doc_frequency(const std::string& term) const {
    auto it = postings_.find(term);
    return it == postings_.end() ? 0 : it->second.size();
}

Ranking InvertedIndex::search(const std::string& query_id,
                              std::string_view query, int k) const {
    if (k < 1) throw InputError("bm25 search requires k >= 1");
    Ranking out;
    out.query_id = query_id;
    const auto tokens = lexical_tokenize(query);
    if (tokens.empty()) return out;

    const double n_docs = static_cast<double>(docs_.size());
    std::vector<double> scores(docs_.size(), 0.0);
    std::vector<char> touched(docs_.size(), 0);
    // Query-side duplicates are kept: a term occurring twice contributes its
    // score twice.
    for (const std::string& t : tokens) {
        auto it = postings_.find(t);
        if (it == postings_.end()) continue;
        const double df = static_cast<double>(it->second.size());
        const double idf = std::log(1.0 + (n_docs - df + 0.5) / (df + 0.5));
        for (const Posting& p : it->second) {
            const double tf = static_cast<double>(p.second);
            const double dl = static_cast<double>(docs_[p.first].second);
            const double norm = tf + k1_ * (1.0 - b_ + b_ * (dl / avgdl_));
            scores[p.first] += idf * (tf * (k1_ + 1.0)) / norm;
            touched[p.first] = 1;
        }
    }
    for (std::size_t i = 0; i < docs_.size(); ++i) {
        if (touched[i] && scores[i] > 0.0) {
            out.entries.push_back({docs_[i].first, scores[i]});
        }
    }
    out.normalize();
    out.truncate(static_cast<std::size_t>(k));
    return out;
}

namespace {
constexpr char kIndexMagic[4] = {'S', 'G', 'P', 'I'};
constexpr std::uint16_t kIndexVersion = 1;
}  // namespace

void InvertedIndex::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open index for writing: " + path);
    binio::write_bytes(os, kIndexMagic, 4);
    binio::write_uint<std::uint16_t>(os, kIndexVersion);
    binio::write_f64(os, k1_);
    binio::write_f64(os, b_);
    binio::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(docs_.size()));
    binio::write_f64(os, avgdl_);
    for (const auto& [id, length] : docs_) {
        binio::write_string16(os, id);
        binio::write_uint<std::uint32_t>(os, length);
    }
    binio::write_uint<std::uint32_t>(os,
                                     static_cast<std::uint32_t>(postings_.size()));
    for (const auto& [term, postings] : postings_) {
        binio::write_string16(os, term);
        binio::write_uint<std::uint32_t>(os,
                                         static_cast<std::uint32_t>(postings.size()));
        for (const Posting& p : postings) {
            binio::write_uint<std::uint32_t>(os, p.first);
            binio::write_uint<std::uint32_t>(os, p.second);
        }
    }
    os.flush();
    if (!os) throw IoError("index write failed: " + path);
}

InvertedIndex InvertedIndex::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open index: " + path);
    binio::expect_magic(is, kIndexMagic, "inverted index");
    const std::uint16_t version = binio::read_uint<std::uint16_t>(is);
    if (version != kIndexVersion) {
        throw FormatError("unsupported index version " + std::to_string(version));
    }
    InvertedIndex index;
    index.k1_ = binio::read_f64(is);
    index.b_ = binio::read_f64(is);
    const std::uint32_t n = binio::read_uint<std::uint32_t>(is);
    index.avgdl_ = binio::read_f64(is);
    index.docs_.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string id = binio::read_string16(is);
        const std::uint32_t length = binio::read_uint<std::uint32_t>(is);
        index.docs_.emplace_back(std::move(id), length);
    }
    const std::uint32_t terms = binio::read_uint<std::uint32_t>(is);
    for (std::uint32_t t = 0; t < terms; ++t) {
        std::string term = binio::read_string16(is);
        const std::uint32_t count = binio::read_uint<std::uint32_t>(is);
        std::vector<Posting> postings;
        postings.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t doc = binio::read_uint<std::uint32_t>(is);
            const std::uint32_t tf = binio::read_uint<std::uint32_t>(is);
            if (doc >= n) throw CorruptionError("posting references bad doc index");
            postings.emplace_back(doc, tf);
        }
        index.postings_.emplace(std::move(term), std::move(postings));
    }
    binio::expect_eof(is, "inverted index");
    index.rebuild_doc_positions();
    return index;
}

Ranking pipeline_search(const InvertedIndex& index, const Corpus& corpus,
                        const std::string& query_id, std::string_view query,
                        const Reranker& reranker, int max_rerank, int k) {
    if (k < 1) throw InputError("pipeline_search requires k >= 1");
    if (max_rerank < 0) throw InputError("max_rerank must be >= 0");
    const int fetch = std::max(k, max_rerank);
    Ranking first;
    try {
        first = index.search(query_id, query, fetch);
    } catch (const Error& e) {
        throw Error(std::string("first stage (bm25): ") + e.what());
    }
    Ranking result;
    try {
        if (std::holds_alternative<std::monostate>(reranker) || max_rerank == 0) {
            result = std::move(first);
        } else if (const auto* ce = std::get_if<CrossEncoderReranker>(&reranker)) {
            result = rerank(*ce->model, *ce->prompt, query, first, corpus,
                            max_rerank, ce->max_len, ce->one_shot);
        } else {
            const auto* be = std::get_if<BiEncoderReranker>(&reranker);
            result = bi_rerank(*be->model, query, first, *be->index, max_rerank);
        }
    } catch (const InputError& e) {
        throw InputError(std::string("re-rank stage: ") + e.what());
    } catch (const Error& e) {
        throw Error(std::string("re-rank stage: ") + e.what());
    }
    result.truncate(static_cast<std::size_t>(k));
    return result;
}

}  // namespace sgpt
