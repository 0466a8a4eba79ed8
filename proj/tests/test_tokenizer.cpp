#include <doctest.h>

#include <random>
#include <string>

#include "sgpt/error.hpp"
#include "sgpt/tokenizer.hpp"

using namespace sgpt;

TEST_CASE("tokenize maps bytes to ids") {
    CHECK(tokenize("").ids.empty());
    CHECK(tokenize("A").ids == std::vector<int>{65});
    CHECK(tokenize("ab ").ids == std::vector<int>{97, 98, 32});
    CHECK(tokenize("x").role == Role::Plain);
}

TEST_CASE("tokenize is deterministic") {
    const std::string text = "same text, twice";
    CHECK(tokenize(text).ids == tokenize(text).ids);
}

TEST_CASE("apply_specb wraps queries and documents") {
    const TokenSequence q = apply_specb(tokenize("q"), Role::Query);
    CHECK(q.ids == std::vector<int>{256, 113, 257});
    CHECK(q.role == Role::Query);

    const TokenSequence d = apply_specb(tokenize("d"), Role::Document);
    CHECK(d.ids == std::vector<int>{258, 100, 259});
    CHECK(d.role == Role::Document);

    CHECK(apply_specb(tokenize(""), Role::Query).ids ==
          std::vector<int>{256, 257});

    CHECK_THROWS_AS(apply_specb(tokenize("x"), Role::Plain), ContractError);
}

TEST_CASE("specb adds exactly two ids and keeps content clean") {
    // Content bracket bytes stay below 256; the spliced markers never appear
    // inside the content span.
    const TokenSequence t = apply_specb(tokenize("[q]"), Role::Query);
    CHECK(t.ids.size() == 5);
    CHECK(t.ids.front() == 256);
    CHECK(t.ids.back() == 257);
    for (std::size_t i = 1; i + 1 < t.ids.size(); ++i) {
        CHECK(t.ids[i] < 256);
    }
    CHECK(t.ids[1] == 91);  // literal '[' byte, distinct from marker 256
}

TEST_CASE("detokenize renders markers and rejects bad ids") {
    CHECK(detokenize(tokenize("A")) == "A");
    TokenSequence markers;
    markers.ids = {256, 113, 257};
    CHECK(detokenize(markers) == "[q]");
    TokenSequence curly;
    curly.ids = {258, 100, 259, 260};
    CHECK(detokenize(curly) == "{d}");  // padding renders as nothing

    TokenSequence bad;
    bad.ids = {261};
    CHECK_THROWS_AS(detokenize(bad), ContractError);
}

TEST_CASE("detokenize replaces invalid utf-8") {
    TokenSequence t;
    t.ids = {0xC3, 0x28};  // truncated two-byte sequence
    const std::string out = detokenize(t);
    CHECK(out.find("\xEF\xBF\xBD") != std::string::npos);
    CHECK(out.back() == '(');
}

namespace {

// Random well-formed UTF-8 built from random scalar values.
std::string random_utf8(std::mt19937_64& rng, std::size_t max_points = 40) {
    std::uniform_int_distribution<std::size_t> len_dist(0, max_points);
    std::uniform_int_distribution<std::uint32_t> cp_dist(1, 0x10FFFF);
    std::string out;
    const std::size_t n = len_dist(rng);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t cp = cp_dist(rng);
        if (cp >= 0xD800 && cp <= 0xDFFF) cp = 0x20;  // skip surrogates
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }
    return out;
}

}  // namespace

TEST_CASE("round trip holds on random utf-8 strings") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 100; ++trial) {
        const std::string s = random_utf8(rng);
        CHECK(detokenize(tokenize(s)) == s);
    }
}
