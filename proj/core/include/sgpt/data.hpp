#pragma once

#include <map>
#include <string>
#include <unordered_map>
#include <vector>

namespace sgpt {

/// BEIR-style document: non-empty unique id, optional title, body text.
struct Document {
    std::string id;
    std::string title;
    std::string text;

    /// Text fed to encoders and indexers: "title text" when a title exists.
    std::string full_text() const {
        return title.empty() ? text : title + " " + text;
    }
};

/// Ordered document store with enforced id uniqueness.
class Corpus {
public:
    Corpus() = default;
    explicit Corpus(std::vector<Document> docs);

    void add(Document doc);

    std::size_t size() const { return docs_.size(); }
    bool empty() const { return docs_.empty(); }
    const std::vector<Document>& docs() const { return docs_; }
    const Document& at(std::size_t i) const { return docs_[i]; }

    bool contains(const std::string& id) const;
    const Document& by_id(const std::string& id) const;

private:
    std::vector<Document> docs_;
    std::unordered_map<std::string, std::size_t> index_;
};

struct Query {
    std::string id;
    std::string text;
};

struct ScoredDoc {
    std::string doc_id;
    double score = 0.0;
};

/// Scored document list for one query: scores non-increasing, ties broken by
/// ascending doc id, no duplicate ids.
struct Ranking {
    std::string query_id;
    std::vector<ScoredDoc> entries;

    /// Sorts entries into the canonical order and checks for duplicates.
    void normalize();
    /// Keeps at most k leading entries.
    void truncate(std::size_t k);
    /// Throws unless the canonical ordering invariants hold.
    void check_invariants() const;
};

/// Relevance judgments: (query id, doc id) -> integer grade >= 0.
class Qrels {
public:
    void set(const std::string& query_id, const std::string& doc_id, int grade);
    int grade(const std::string& query_id, const std::string& doc_id) const;
    bool has_query(const std::string& query_id) const;
    /// Judged (doc id -> grade) map for one query; empty map if unknown.
    const std::map<std::string, int>& for_query(const std::string& query_id) const;
    std::vector<std::string> query_ids() const;
    std::size_t size() const;

private:
    std::map<std::string, std::map<std::string, int>> judgments_;
};

}  // namespace sgpt
