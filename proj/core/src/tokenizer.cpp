#include "sgpt/tokenizer.hpp"

#include "sgpt/error.hpp"

namespace sgpt {

TokenSequence tokenize(std::string_view text) {
    TokenSequence out;
    out.ids.reserve(text.size());
    for (unsigned char c : text) out.ids.push_back(static_cast<int>(c));
    return out;
}

TokenSequence apply_specb(const TokenSequence& tokens, Role role) {
    int open = 0, close = 0;
    switch (role) {
        case Role::Query:
            open = kTokQueryOpen;
            close = kTokQueryClose;
            break;
        case Role::Document:
            open = kTokDocOpen;
            close = kTokDocClose;
            break;
        case Role::Plain:
            throw ContractError("apply_specb requires a query or document role");
    }
    TokenSequence out;
    out.role = role;
    out.ids.reserve(tokens.ids.size() + 2);
    out.ids.push_back(open);
    out.ids.insert(out.ids.end(), tokens.ids.begin(), tokens.ids.end());
    out.ids.push_back(close);
    return out;
}

namespace {

// Expected continuation-byte count for a UTF-8 lead byte, or -1 if invalid.
int utf8_tail_len(unsigned char lead) {
    if (lead < 0x80) return 0;
    if (lead >= 0xC2 && lead <= 0xDF) return 1;
    if (lead >= 0xE0 && lead <= 0xEF) return 2;
    if (lead >= 0xF0 && lead <= 0xF4) return 3;
    return -1;
}

bool utf8_valid_at(const std::string& bytes, std::size_t i, int tail) {
    if (i + static_cast<std::size_t>(tail) >= bytes.size()) return false;
    const unsigned char lead = static_cast<unsigned char>(bytes[i]);
    for (int k = 1; k <= tail; ++k) {
        const unsigned char c = static_cast<unsigned char>(bytes[i + k]);
        if (c < 0x80 || c > 0xBF) return false;
        // Tightened second-byte ranges for E0/ED/F0/F4.
        if (k == 1) {
            if (lead == 0xE0 && c < 0xA0) return false;
            if (lead == 0xED && c > 0x9F) return false;
            if (lead == 0xF0 && c < 0x90) return false;
            if (lead == 0xF4 && c > 0x8F) return false;
        }
    }
    return true;
}

constexpr const char* kReplacement = "\xEF\xBF\xBD";

}  // namespace

std::string detokenize(const TokenSequence& tokens) {
    std::string bytes;
    bytes.reserve(tokens.ids.size());
    for (int id : tokens.ids) {
        if (id < 0 || id >= kVocabSize) {
            throw ContractError("detokenize: id " + std::to_string(id) +
                                " outside the vocabulary range [0, 260]");
        }
        switch (id) {
            case kTokQueryOpen: bytes.push_back('['); break;
            case kTokQueryClose: bytes.push_back(']'); break;
            case kTokDocOpen: bytes.push_back('{'); break;
            case kTokDocClose: bytes.push_back('}'); break;
            case kTokPad: break;
            default: bytes.push_back(static_cast<char>(id)); break;
        }
    }
    // Validate as UTF-8, replacing each undecodable byte with U+FFFD.
    std::string out;
    out.reserve(bytes.size());
    std::size_t i = 0;
    while (i < bytes.size()) {
        const unsigned char lead = static_cast<unsigned char>(bytes[i]);
        const int tail = utf8_tail_len(lead);
        if (tail == 0) {
            out.push_back(bytes[i]);
            ++i;
        } else if (tail > 0 && utf8_valid_at(bytes, i, tail)) {
            out.append(bytes, i, static_cast<std::size_t>(tail) + 1);
            i += static_cast<std::size_t>(tail) + 1;
        } else {
            out.append(kReplacement);
            ++i;
        }
    }
    return out;
}

}  // namespace sgpt
