#include "sgpt/biencoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binio.hpp"
#include "sgpt/error.hpp"

namespace sgpt {

EmbedSettings symmetric_preset() {
    EmbedSettings s;
    s.specb = false;
    s.max_len = 75;
    return s;
}

EmbedSettings asymmetric_preset() {
    EmbedSettings s;
    s.specb = true;
    s.max_len = 300;
    return s;
}

Tensor embed_on_tape(Tape& tape, const DecoderModel& model,
                     std::string_view text, Role role,
                     const PoolingSpec& pooling, bool specb, int max_len) {
    if (max_len < 1) throw InputError("max_len must be >= 1");
    if (max_len > model.config().max_seq_len) {
        throw ContractError("max_len " + std::to_string(max_len) +
                            " exceeds model max_seq_len " +
                            std::to_string(model.config().max_seq_len));
    }
    TokenSequence tokens = tokenize(text);
    if (specb && role != Role::Plain) tokens = apply_specb(tokens, role);
    if (tokens.ids.size() > static_cast<std::size_t>(max_len)) {
        tokens.ids.resize(static_cast<std::size_t>(max_len));
    }
    if (tokens.ids.empty()) {
        throw InputError("nothing to embed: empty input after truncation");
    }
    ForwardOutput fwd = model.forward(tokens, tape);
    const std::size_t layer =
        resolve_pooling_layer(pooling, model.config().n_layers);
    return pool(tape, fwd.hidden_states[layer], pooling);
}

std::vector<double> embed(const DecoderModel& model, std::string_view text,
                          Role role, const PoolingSpec& pooling, bool specb,
                          int max_len) {
    Tape tape;
    Tensor v = embed_on_tape(tape, model, text, role, pooling, specb, max_len);
    auto d = v.data();
    return {d.begin(), d.end()};
}

double cosine(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw ShapeError("cosine of vectors with lengths " +
                         std::to_string(u.size()) + " and " +
                         std::to_string(v.size()));
    }
    if (u.empty()) throw InputError("cosine of empty vectors");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw InputError("cosine of a zero vector");
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

void EmbeddingIndex::add(const std::string& doc_id, std::vector<double> vec) {
    if (doc_id.empty()) throw InputError("embedding index: empty doc id");
    if (vec.size() != dim_) {
        throw ShapeError("embedding for " + doc_id + " has dimension " +
                         std::to_string(vec.size()) + ", index expects " +
                         std::to_string(dim_));
    }
    auto [_, inserted] = entries_.emplace(doc_id, std::move(vec));
    if (!inserted) throw InputError("duplicate doc id in index: " + doc_id);
}

const std::vector<double>& EmbeddingIndex::vector_for(
    const std::string& doc_id) const {
    auto it = entries_.find(doc_id);
    if (it == entries_.end()) {
        throw InputError("doc id not in embedding index: " + doc_id);
    }
    return it->second;
}

namespace {

constexpr char kIndexMagic[4] = {'S', 'G', 'P', 'E'};
constexpr std::uint16_t kIndexVersion = 1;

std::uint32_t pack_flags(const EmbedSettings& s) {
    std::uint32_t flags = 0;
    if (!s.store_f32) flags |= 1u;  // bit 0: 64-bit payload
    if (s.specb) flags |= 2u;
    flags |= (static_cast<std::uint32_t>(s.pooling.method) & 0x3u) << 2;
    const std::uint32_t layer_code =
        s.pooling.layer < 0 ? 0u : static_cast<std::uint32_t>(s.pooling.layer) + 1u;
    if (layer_code > 0xFF) throw InputError("pooling layer too large to persist");
    flags |= layer_code << 8;
    if (s.max_len < 0 || s.max_len > 0xFFFF) {
        throw InputError("max_len too large to persist");
    }
    flags |= static_cast<std::uint32_t>(s.max_len) << 16;
    return flags;
}

EmbedSettings unpack_flags(std::uint32_t flags) {
    EmbedSettings s;
    s.store_f32 = (flags & 1u) == 0;
    s.specb = (flags & 2u) != 0;
    const std::uint32_t method = (flags >> 2) & 0x3u;
    if (method > 2) throw FormatError("embedding index: bad pooling method code");
    s.pooling.method = static_cast<PoolingMethod>(method);
    const std::uint32_t layer_code = (flags >> 8) & 0xFFu;
    s.pooling.layer = layer_code == 0 ? -1 : static_cast<int>(layer_code) - 1;
    s.max_len = static_cast<int>(flags >> 16);
    return s;
}

}  // namespace

void EmbeddingIndex::save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open embedding index for writing: " + path);
    binio::write_bytes(os, kIndexMagic, 4);
    binio::write_uint<std::uint16_t>(os, kIndexVersion);
    binio::write_uint<std::uint32_t>(os, pack_flags(settings_));
    binio::write_uint<std::uint32_t>(os, static_cast<std::uint32_t>(dim_));
    binio::write_uint<std::uint64_t>(os, entries_.size());
    for (const auto& [id, vec] : entries_) {
        binio::write_string16(os, id);
        if (settings_.store_f32) {
            for (double v : vec) binio::write_f32(os, static_cast<float>(v));
        } else {
            for (double v : vec) binio::write_f64(os, v);
        }
    }
    os.flush();
    if (!os) throw IoError("embedding index write failed: " + path);
}

EmbeddingIndex EmbeddingIndex::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open embedding index: " + path);
    binio::expect_magic(is, kIndexMagic, "embedding index");
    const std::uint16_t version = binio::read_uint<std::uint16_t>(is);
    if (version != kIndexVersion) {
        throw FormatError("unsupported embedding index version " +
                          std::to_string(version));
    }
    const EmbedSettings settings = unpack_flags(binio::read_uint<std::uint32_t>(is));
    const std::uint32_t dim = binio::read_uint<std::uint32_t>(is);
    const std::uint64_t count = binio::read_uint<std::uint64_t>(is);
    EmbeddingIndex index(dim, settings);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string id = binio::read_string16(is);
        std::vector<double> vec(dim);
        if (settings.store_f32) {
            for (double& v : vec) v = static_cast<double>(binio::read_f32(is));
        } else {
            for (double& v : vec) v = binio::read_f64(is);
        }
        index.add(id, std::move(vec));
    }
    binio::expect_eof(is, "embedding index");
    return index;
}

EmbeddingIndex build_embedding_index(const DecoderModel& model,
                                     const Corpus& corpus,
                                     const EmbedSettings& settings) {
    if (corpus.empty()) throw InputError("cannot index an empty corpus");
    EmbeddingIndex index(static_cast<std::size_t>(model.config().d_model),
                         settings);
    for (const Document& doc : corpus.docs()) {
        index.add(doc.id, embed(model, doc.full_text(), Role::Document,
                                settings.pooling, settings.specb,
                                settings.max_len));
    }
    return index;
}

Ranking bi_search(const DecoderModel& model, const std::string& query_id,
                  std::string_view query_text, const EmbeddingIndex& index,
                  int k) {
    if (k < 1) throw InputError("bi_search requires k >= 1");
    const EmbedSettings& s = index.settings();
    const std::vector<double> q =
        embed(model, query_text, Role::Query, s.pooling, s.specb, s.max_len);
    Ranking out;
    out.query_id = query_id;
    out.entries.reserve(index.size());
    for (const auto& [id, vec] : index.entries()) {
        out.entries.push_back({id, cosine(q, vec)});
    }
    out.normalize();
    out.truncate(static_cast<std::size_t>(k));
    return out;
}

Ranking merge_rerank(const Ranking& candidates,
                     std::span<const double> new_scores) {
    const std::size_t n = new_scores.size();
    if (n > candidates.entries.size()) {
        throw ContractError("more rescored entries than candidates");
    }
    if (n == 0) return candidates;
    Ranking out;
    out.query_id = candidates.query_id;
    Ranking top;
    top.query_id = candidates.query_id;
    for (std::size_t i = 0; i < n; ++i) {
        top.entries.push_back({candidates.entries[i].doc_id, new_scores[i]});
    }
    top.normalize();
    out.entries = std::move(top.entries);
    // The untouched tail keeps its first-stage order; its scores are
    // rewritten onto a strictly decreasing scale below every rescored entry
    // so the ranking invariant (and score-sorting consumers) stay coherent.
    double floor = out.entries.back().score;
    for (std::size_t i = n; i < candidates.entries.size(); ++i) {
        floor -= 1.0;
        out.entries.push_back({candidates.entries[i].doc_id, floor});
    }
    return out;
}

Ranking bi_rerank(const DecoderModel& model, std::string_view query_text,
                  const Ranking& candidates, const EmbeddingIndex& index,
                  int max_rerank) {
    if (max_rerank < 0) throw InputError("max_rerank must be >= 0");
    const std::size_t n = std::min(static_cast<std::size_t>(max_rerank),
                                   candidates.entries.size());
    if (n == 0) return candidates;
    const EmbedSettings& s = index.settings();
    const std::vector<double> q =
        embed(model, query_text, Role::Query, s.pooling, s.specb, s.max_len);
    std::vector<double> scores;
    scores.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        scores.push_back(cosine(q, index.vector_for(candidates.entries[i].doc_id)));
    }
    return merge_rerank(candidates, scores);
}

}  // namespace sgpt
