#include "sgpt/crossencoder.hpp"

#include <algorithm>
#include <cmath>

#include "sgpt/biencoder.hpp"
#include "sgpt/error.hpp"

namespace sgpt {

const char* prompt_mode_name(PromptMode mode) {
    return mode == PromptMode::SumQueryLogProb ? "sum_query_logprob" : "yes_no";
}

PromptMode prompt_mode_from_name(const std::string& name) {
    if (name == "sum_query_logprob") return PromptMode::SumQueryLogProb;
    if (name == "yes_no") return PromptMode::YesNo;
    throw InputError("unknown prompt mode: " + name);
}

namespace {

struct Segment {
    enum Kind { Literal, Doc, Query, ShortDoc, ShortQuery, Verdict } kind;
    std::string text;  // Literal only
};

const struct {
    const char* marker;
    Segment::Kind kind;
} kMarkers[] = {
    {"{doc}", Segment::Doc},
    {"{query}", Segment::Query},
    {"{shortdoc}", Segment::ShortDoc},
    {"{shortquery}", Segment::ShortQuery},
    {"{ Yes}", Segment::Verdict},
};

std::vector<Segment> parse_template(const std::string& text) {
    std::vector<Segment> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t best = std::string::npos;
        const char* best_marker = nullptr;
        Segment::Kind best_kind = Segment::Literal;
        for (const auto& m : kMarkers) {
            const std::size_t found = text.find(m.marker, pos);
            if (found != std::string::npos && found < best) {
                best = found;
                best_marker = m.marker;
                best_kind = m.kind;
            }
        }
        if (best == std::string::npos) {
            out.push_back({Segment::Literal, text.substr(pos)});
            break;
        }
        if (best > pos) {
            out.push_back({Segment::Literal, text.substr(pos, best - pos)});
        }
        out.push_back({best_kind, {}});
        pos = best + std::string(best_marker).size();
    }
    return out;
}

}  // namespace

void PromptTemplate::validate() const {
    const auto segments = parse_template(text);
    int docs = 0, queries = 0, shortdocs = 0, shortqueries = 0, verdicts = 0;
    for (const Segment& s : segments) {
        switch (s.kind) {
            case Segment::Doc: ++docs; break;
            case Segment::Query: ++queries; break;
            case Segment::ShortDoc: ++shortdocs; break;
            case Segment::ShortQuery: ++shortqueries; break;
            case Segment::Verdict: ++verdicts; break;
            case Segment::Literal: break;
        }
    }
    if (docs != 1) {
        throw TemplateError("template '" + id + "' needs exactly one {doc}");
    }
    if (queries != 1) {
        throw TemplateError("template '" + id + "' needs exactly one {query}");
    }
    if (shortdocs > 1 || shortqueries > 1) {
        throw TemplateError("template '" + id +
                            "' may use {shortdoc}/{shortquery} at most once");
    }
    if (mode == PromptMode::SumQueryLogProb) {
        if (verdicts != 0) {
            throw TemplateError("template '" + id +
                                "' has a verdict slot but is not yes/no mode");
        }
        if (segments.empty() || segments.back().kind != Segment::Query) {
            throw TemplateError("template '" + id +
                                "' must end with {query} so the scored tokens "
                                "form a suffix");
        }
    } else {
        if (verdicts != 1 || segments.empty() ||
            segments.back().kind != Segment::Verdict) {
            throw TemplateError("template '" + id +
                                "' must end with the { Yes} verdict slot");
        }
    }
}

RenderedPrompt render_prompt(const PromptTemplate& tmpl, std::string_view doc,
                             std::string_view query, int max_len,
                             const OneShotExample* one_shot) {
    tmpl.validate();
    if (max_len < 1) throw InputError("max_len must be >= 1");
    const auto segments = parse_template(tmpl.text);

    std::vector<std::vector<int>> piece_ids(segments.size());
    std::size_t fixed = 0;
    std::size_t query_len = 0;
    std::size_t doc_segment = segments.size();
    for (std::size_t i = 0; i < segments.size(); ++i) {
        switch (segments[i].kind) {
            case Segment::Literal:
                piece_ids[i] = tokenize(segments[i].text).ids;
                fixed += piece_ids[i].size();
                break;
            case Segment::ShortDoc:
                piece_ids[i] = tokenize(one_shot ? one_shot->doc : "").ids;
                fixed += piece_ids[i].size();
                break;
            case Segment::ShortQuery:
                piece_ids[i] = tokenize(one_shot ? one_shot->query : "").ids;
                fixed += piece_ids[i].size();
                break;
            case Segment::Query:
                piece_ids[i] = tokenize(query).ids;
                query_len = piece_ids[i].size();
                break;
            case Segment::Doc:
                piece_ids[i] = tokenize(doc).ids;
                doc_segment = i;
                break;
            case Segment::Verdict:
                break;
        }
    }
    const std::size_t budget_used = fixed + query_len;
    if (budget_used > static_cast<std::size_t>(max_len)) {
        throw PromptOverflowError(
            "prompt '" + tmpl.id + "': fixed text plus query need " +
            std::to_string(budget_used) + " tokens, budget is " +
            std::to_string(max_len));
    }
    // Left-truncate the document: keep its rightmost tokens.
    auto& doc_ids = piece_ids[doc_segment];
    const std::size_t doc_budget = static_cast<std::size_t>(max_len) - budget_used;
    if (doc_ids.size() > doc_budget) {
        doc_ids.erase(doc_ids.begin(),
                      doc_ids.begin() + static_cast<std::ptrdiff_t>(
                                            doc_ids.size() - doc_budget));
    }

    RenderedPrompt out;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (segments[i].kind == Segment::Verdict) break;
        if (segments[i].kind == Segment::Query) {
            out.query_begin = out.ids.ids.size();
        }
        out.ids.ids.insert(out.ids.ids.end(), piece_ids[i].begin(),
                           piece_ids[i].end());
        if (segments[i].kind == Segment::Query) {
            out.query_end = out.ids.ids.size();
        }
    }
    return out;
}

namespace {

/// Log-softmax entry of one logits row, with the usual max shift.
double row_log_prob(std::span<const double> row, std::size_t id) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    return row[id] - mx - std::log(z);
}

}  // namespace

double score_pair(const DecoderModel& model, const PromptTemplate& tmpl,
                  std::string_view doc, std::string_view query, int max_len,
                  const OneShotExample* one_shot) {
    if (tmpl.mode != PromptMode::SumQueryLogProb) {
        throw ContractError("score_pair requires a sum_query_logprob template; "
                            "use score_pair_yes_no for '" + tmpl.id + "'");
    }
    if (max_len > model.config().max_seq_len) {
        throw ContractError("max_len " + std::to_string(max_len) +
                            " exceeds model max_seq_len " +
                            std::to_string(model.config().max_seq_len));
    }
    const RenderedPrompt prompt = render_prompt(tmpl, doc, query, max_len, one_shot);
    if (prompt.query_begin == 0) {
        throw ContractError("prompt '" + tmpl.id +
                            "' renders the query at position 0; the first "
                            "token has no conditioning context");
    }
    const ForwardOutput fwd = model.forward(prompt.ids);
    const std::size_t vocab = fwd.logits.dim(1);
    auto logits = fwd.logits.data();
    double total = 0.0;
    for (std::size_t p = prompt.query_begin; p < prompt.query_end; ++p) {
        const std::span<const double> row = logits.subspan((p - 1) * vocab, vocab);
        total += row_log_prob(row, static_cast<std::size_t>(prompt.ids.ids[p]));
    }
    return total;
}

double score_pair_yes_no(const DecoderModel& model, const PromptTemplate& tmpl,
                         std::string_view doc, std::string_view query,
                         int max_len) {
    if (tmpl.mode != PromptMode::YesNo) {
        throw TemplateError("template '" + tmpl.id + "' is not yes/no mode");
    }
    if (max_len == 0) max_len = model.config().max_seq_len;
    if (max_len > model.config().max_seq_len) {
        throw ContractError("max_len " + std::to_string(max_len) +
                            " exceeds model max_seq_len " +
                            std::to_string(model.config().max_seq_len));
    }
    const RenderedPrompt prompt = render_prompt(tmpl, doc, query, max_len, nullptr);
    if (prompt.ids.ids.empty()) {
        throw ContractError("prompt '" + tmpl.id + "' rendered empty");
    }
    const ForwardOutput fwd = model.forward(prompt.ids);
    const std::size_t vocab = fwd.logits.dim(1);
    const std::size_t last = prompt.ids.ids.size() - 1;
    auto logits = fwd.logits.data();
    // Byte-level vocabularies make "Yes"/"No" multi-token; the verdict
    // compares their first bytes.
    const double z_yes = logits[last * vocab + 'Y'];
    const double z_no = logits[last * vocab + 'N'];
    const double mx = std::max(z_yes, z_no);
    return (z_yes - mx) - std::log(std::exp(z_yes - mx) + std::exp(z_no - mx));
}

Ranking rerank(const DecoderModel& model, const PromptTemplate& tmpl,
               std::string_view query_text, const Ranking& candidates,
               const Corpus& corpus, int max_rerank, int max_len,
               const OneShotExample* one_shot) {
    if (max_rerank < 0) throw InputError("max_rerank must be >= 0");
    const std::size_t n = std::min(static_cast<std::size_t>(max_rerank),
                                   candidates.entries.size());
    if (n == 0) return candidates;
    std::vector<double> scores;
    scores.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const Document& doc = corpus.by_id(candidates.entries[i].doc_id);
        const double s =
            tmpl.mode == PromptMode::SumQueryLogProb
                ? score_pair(model, tmpl, doc.full_text(), query_text, max_len,
                             one_shot)
                : score_pair_yes_no(model, tmpl, doc.full_text(), query_text,
                                    max_len);
        scores.push_back(s);
    }
    return merge_rerank(candidates, scores);
}

}  // namespace sgpt
