#include <fstream>
#include <sstream>

#include "sgpt/crossencoder.hpp"
#include "sgpt/error.hpp"

namespace sgpt {

namespace {

std::string escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '\n': out += "\\n"; break;
            case '\t': out += "\\t"; break;
            case '\\': out += "\\\\"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string unescape(const std::string& s, std::size_t line_no) {
    std::string out;
    out.reserve(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out.push_back(s[i]);
            continue;
        }
        if (i + 1 >= s.size()) {
            throw ParseError("prompt registry line " + std::to_string(line_no) +
                             ": dangling escape");
        }
        switch (s[++i]) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case '\\': out.push_back('\\'); break;
            default:
                throw ParseError("prompt registry line " +
                                 std::to_string(line_no) + ": bad escape \\" +
                                 s[i]);
        }
    }
    return out;
}

}  // namespace

PromptRegistry PromptRegistry::builtin() {
    PromptRegistry r;
    const auto sum = PromptMode::SumQueryLogProb;
    r.add({"A", sum, "{doc} {query}"});
    r.add({"B", sum, "{doc}\n{query}"});
    r.add({"C", sum, "Document:\n{doc}\n\nQuery:\n{query}"});
    r.add({"D", sum, "Body:\n{doc}\n\nTitle:\n{query}"});
    r.add({"E", sum, "selected document:\n{doc}\n\nrelevant query:\n{query}"});
    r.add({"F", sum,
           "The selected text is:\n{doc}\n\nThe relevant title is:\n{query}"});
    r.add({"G", sum,
           "Documents are searched to find matches with the same content.\n"
           "The document \"{doc}\" is a good search result for \"{query}"});
    r.add({"H", sum,
           "Documents are searched to find matches with the same content.\n"
           "Document: \"{doc}\"\n\nThe above document is a good match for the "
           "query: \"{query}"});
    r.add({"I", sum,
           "# Get matching document and query with the same content\n"
           "get_document()\n{doc}\nget_query_matching_document()\n{query}"});
    r.add({"J", sum,
           "Documents are searched to find matches with the same content.\n"
           "The document \"{shortdoc}\" is a good search result for "
           "\"{shortquery}\"\nThe document \"{doc}\" is a good search result "
           "for \"{query}"});
    r.add({"K", sum,
           "Document:\n{shortdoc}\nQuery:\n{shortquery}\n "
           "Document:\n{doc}\nQuery:\n{query}"});
    r.add({"L", PromptMode::YesNo,
           "An intelligent, helpful bot is given. The bot responds \"Yes\" if "
           "the document is a fit to the query and \"No\" otherwise.\n###\n"
           "Document: {doc}\nQuery: {query}\nBot:{ Yes}"});
    r.add({"quoraA", sum,
           "Questions are searched to find matches with the same content.\n"
           "The question \"{doc}\" is a good search result for \"{query}"});
    r.add({"quoraB", sum,
           "Below are two similar questions asking the same thing.\n"
           "The question \"{doc}\" is similar to \"{query}"});
    r.add({"quoraC", sum, "These two questions are the same: 1. {doc} 2.{query}"});
    r.add({"quoraD", sum, "Question Body: {doc} Question Title:{query}"});
    r.add({"quoraE", sum,
           "Question Body: {shortdoc} Question Title: {shortquery}\n "
           "Question Body: {doc} Question Title: {query}"});
    return r;
}

void PromptRegistry::add(PromptTemplate tmpl) {
    tmpl.validate();
    if (contains(tmpl.id)) {
        throw InputError("duplicate prompt id: " + tmpl.id);
    }
    templates_.push_back(std::move(tmpl));
}

bool PromptRegistry::contains(const std::string& id) const {
    for (const auto& t : templates_) {
        if (t.id == id) return true;
    }
    return false;
}

const PromptTemplate& PromptRegistry::get(const std::string& id) const {
    for (const auto& t : templates_) {
        if (t.id == id) return t;
    }
    std::ostringstream os;
    os << "unknown prompt id '" << id << "'; known prompts:";
    for (const auto& t : templates_) os << ' ' << t.id;
    throw InputError(os.str());
}

std::vector<std::string> PromptRegistry::ids() const {
    std::vector<std::string> out;
    out.reserve(templates_.size());
    for (const auto& t : templates_) out.push_back(t.id);
    return out;
}

PromptRegistry PromptRegistry::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open prompt registry: " + path);
    PromptRegistry r;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#') continue;
        const auto tab1 = line.find('\t');
        const auto tab2 = tab1 == std::string::npos ? std::string::npos
                                                    : line.find('\t', tab1 + 1);
        if (tab2 == std::string::npos) {
            throw ParseError("prompt registry line " + std::to_string(line_no) +
                             ": expected id<TAB>mode<TAB>text");
        }
        PromptTemplate t;
        t.id = line.substr(0, tab1);
        t.mode = prompt_mode_from_name(line.substr(tab1 + 1, tab2 - tab1 - 1));
        t.text = unescape(line.substr(tab2 + 1), line_no);
        r.add(std::move(t));
    }
    return r;
}

void PromptRegistry::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open prompt registry for writing: " + path);
    for (const auto& t : templates_) {
        os << t.id << '\t' << prompt_mode_name(t.mode) << '\t' << escape(t.text)
           << '\n';
    }
    if (!os) throw IoError("prompt registry write failed: " + path);
}

}  // namespace sgpt
