#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sgpt/data.hpp"
#include "sgpt/model.hpp"
#include "sgpt/tokenizer.hpp"

namespace sgpt {

enum class PromptMode { SumQueryLogProb, YesNo };

const char* prompt_mode_name(PromptMode mode);
PromptMode prompt_mode_from_name(const std::string& name);

/// A scoring prompt with a {doc} slot, a {query} slot and optionally a
/// one-shot {shortdoc}/{shortquery} pair. In sum mode {query} must be the
/// final element so the scored tokens form a suffix; in yes/no mode the
/// template instead ends with the literal "{ Yes}" verdict slot and the
/// score compares the Yes/No continuations at that position.
struct PromptTemplate {
    std::string id;
    PromptMode mode = PromptMode::SumQueryLogProb;
    std::string text;

    /// Throws TemplateError unless the slot structure matches the mode.
    void validate() const;
};

/// Exemplar pair filled into {shortdoc}/{shortquery} slots; selection is the
/// caller's job.
struct OneShotExample {
    std::string doc;
    std::string query;
};

/// Token-level render of a prompt. query_begin/query_end delimit the query
/// tokens within ids; in sum mode query_end == ids.size() and the span
/// length depends only on the query, never on the document.
struct RenderedPrompt {
    TokenSequence ids;
    std::size_t query_begin = 0;
    std::size_t query_end = 0;
};

/// Fills the template, counting fixed text and query tokens against max_len
/// first and then truncating the document from the LEFT until the whole
/// render fits. The query is never shortened; if fixed text plus query alone
/// overflow, a PromptOverflowError is raised.
RenderedPrompt render_prompt(const PromptTemplate& tmpl, std::string_view doc,
                             std::string_view query, int max_len,
                             const OneShotExample* one_shot = nullptr);

/// Relevance score of (doc, query): the sum over the query span of the
/// next-token log probability of each query token. Higher is better. The
/// document prior is treated as uniform and dropped.
double score_pair(const DecoderModel& model, const PromptTemplate& tmpl,
                  std::string_view doc, std::string_view query, int max_len,
                  const OneShotExample* one_shot = nullptr);

/// Yes/No verdict score: softmax restricted to the first bytes of "Yes" and
/// "No" ('Y' vs 'N') at the verdict position; returns log p(Yes). max_len 0
/// selects the model's own sequence limit.
double score_pair_yes_no(const DecoderModel& model, const PromptTemplate& tmpl,
                         std::string_view doc, std::string_view query,
                         int max_len = 0);

/// Rescoring of the top max_rerank first-stage candidates with score_pair
/// (or the yes/no score for a yes/no template); the remainder keeps its
/// first-stage order below every rescored document. max_rerank 0 returns the
/// input unchanged. The output is always a permutation of the input ids.
Ranking rerank(const DecoderModel& model, const PromptTemplate& tmpl,
               std::string_view query_text, const Ranking& candidates,
               const Corpus& corpus, int max_rerank, int max_len,
               const OneShotExample* one_shot = nullptr);

/// Named prompt collection. The built-in registry ships the search prompts
/// A..L (G is the asymmetric default, L the Yes/No variant) and the
/// symmetric quoraA..quoraE set (quoraD is the symmetric default).
class PromptRegistry {
public:
    static PromptRegistry builtin();

    /// One template per line: id TAB mode TAB text, with \n, \t and \\
    /// escapes in the text column.
    static PromptRegistry load(const std::string& path);
    void save(const std::string& path) const;

    void add(PromptTemplate tmpl);
    bool contains(const std::string& id) const;
    const PromptTemplate& get(const std::string& id) const;
    std::vector<std::string> ids() const;
    const std::vector<PromptTemplate>& all() const { return templates_; }

    static constexpr const char* kDefaultAsymmetric = "G";
    static constexpr const char* kDefaultSymmetric = "quoraD";

private:
    std::vector<PromptTemplate> templates_;
};

}  // namespace sgpt
