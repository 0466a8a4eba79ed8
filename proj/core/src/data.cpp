#include "sgpt/data.hpp"

#include <algorithm>

#include "sgpt/error.hpp"

namespace sgpt {

Corpus::Corpus(std::vector<Document> docs) {
    docs_.reserve(docs.size());
    for (auto& d : docs) add(std::move(d));
}

void Corpus::add(Document doc) {
    if (doc.id.empty()) throw InputError("document with empty id");
    auto [it, inserted] = index_.emplace(doc.id, docs_.size());
    if (!inserted) throw InputError("duplicate document id: " + doc.id);
    docs_.push_back(std::move(doc));
}

bool Corpus::contains(const std::string& id) const { return index_.count(id) > 0; }

const Document& Corpus::by_id(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw InputError("unknown document id: " + id);
    return docs_[it->second];
}

void Ranking::normalize() {
    std::stable_sort(entries.begin(), entries.end(),
                     [](const ScoredDoc& a, const ScoredDoc& b) {
                         if (a.score != b.score) return a.score > b.score;
                         return a.doc_id < b.doc_id;
                     });
    check_invariants();
}

void Ranking::truncate(std::size_t k) {
    if (entries.size() > k) entries.resize(k);
}

void Ranking::check_invariants() const {
    for (std::size_t i = 1; i < entries.size(); ++i) {
        if (entries[i - 1].score < entries[i].score) {
            throw ContractError("ranking scores increase at position " +
                                std::to_string(i));
        }
    }
    std::vector<std::string> ids;
    ids.reserve(entries.size());
    for (const auto& e : entries) ids.push_back(e.doc_id);
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
        throw ContractError("ranking contains a duplicate doc id");
    }
}

void Qrels::set(const std::string& query_id, const std::string& doc_id, int grade) {
    if (grade < 0) throw InputError("negative relevance grade for " + doc_id);
    judgments_[query_id][doc_id] = grade;
}

int Qrels::grade(const std::string& query_id, const std::string& doc_id) const {
    auto q = judgments_.find(query_id);
    if (q == judgments_.end()) return 0;
    auto d = q->second.find(doc_id);
    return d == q->second.end() ? 0 : d->second;
}

bool Qrels::has_query(const std::string& query_id) const {
    return judgments_.count(query_id) > 0;
}

const std::map<std::string, int>& Qrels::for_query(
    const std::string& query_id) const {
    static const std::map<std::string, int> empty;
    auto it = judgments_.find(query_id);
    return it == judgments_.end() ? empty : it->second;
}

std::vector<std::string> Qrels::query_ids() const {
    std::vector<std::string> out;
    out.reserve(judgments_.size());
    for (const auto& [qid, _] : judgments_) out.push_back(qid);
    return out;
}

std::size_t Qrels::size() const {
    std::size_t n = 0;
    for (const auto& [_, docs] : judgments_) n += docs.size();
    return n;
}

}  // namespace sgpt
