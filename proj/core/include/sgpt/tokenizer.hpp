#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace sgpt {

/// Byte-level vocabulary: ids 0-255 are raw UTF-8 bytes, followed by four
/// marker ids spliced around already-tokenized text so they can never
/// collide with byte 91 '[' or byte 123 '{' appearing in content, plus a
/// padding id that the encoder never produces.
inline constexpr int kTokQueryOpen = 256;   // '['
inline constexpr int kTokQueryClose = 257;  // ']'
inline constexpr int kTokDocOpen = 258;     // '{'
inline constexpr int kTokDocClose = 259;    // '}'
inline constexpr int kTokPad = 260;
inline constexpr int kVocabSize = 261;

enum class Role { Plain, Query, Document };

struct TokenSequence {
    std::vector<int> ids;
    Role role = Role::Plain;
};

/// One id per byte; role is Plain. Deterministic and length-linear.
TokenSequence tokenize(std::string_view text);

/// Wraps the ids in role markers: query -> [256, ids..., 257],
/// document -> [258, ids..., 259]. Markers are spliced as ids, never
/// re-encoded text. Role::Plain is rejected.
TokenSequence apply_specb(const TokenSequence& tokens, Role role);

/// Inverse of tokenize. Marker ids render as their literal bracket
/// characters, padding renders as nothing, and invalid UTF-8 byte sequences
/// are replaced with U+FFFD. Ids above the vocabulary raise an error.
std::string detokenize(const TokenSequence& tokens);

}  // namespace sgpt
