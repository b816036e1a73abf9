#pragma once

// Closed 64-token vocabulary. Ids are frozen: checkpoints and datasets
// depend on this exact ordering.

#include <array>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mlr/common.hpp"

namespace mlr {

namespace tok {
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kStep = 3;
constexpr int kLatent = 4;
constexpr int kDigit0 = 5;   // "0".."9" at 5..14
constexpr int kLetterA = 15; // "A".."D" at 15..18
constexpr int kUp = 19;      // up/down/left/right at 19..22
constexpr int kRow0 = 23;    // "r0".."r3"
constexpr int kCol0 = 27;    // "c0".."c3"
constexpr int kStart = 31;   // "start"
constexpr int kCell0 = 40;   // "k00".."k33": one name per grid cell, row-major
constexpr int kPlain = 56;   // "plain" (unmarked grid cell)
}  // namespace tok

inline const std::array<std::string, 64>& vocab() {
    static const std::array<std::string, 64> v = {
        "<pad>", "<bos>", "<eos>", "<step>", "<latent>",
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
        "A", "B", "C", "D",
        "up", "down", "left", "right",
        "r0", "r1", "r2", "r3",
        "c0", "c1", "c2", "c3",
        "start", "go", "follow", "arrows", "sum", "visited", "digits", "?",
        "move",
        "k00", "k01", "k02", "k03", "k10", "k11", "k12", "k13",
        "k20", "k21", "k22", "k23", "k30", "k31", "k32", "k33",
        "plain",
        "<unused1>", "<unused2>", "<unused3>", "<unused4>",
        "<unused5>", "<unused6>", "<unused7>",
    };
    return v;
}

constexpr int kVocabSize = 64;

inline int token_id(std::string_view s) {
    static const std::unordered_map<std::string_view, int> map = [] {
        std::unordered_map<std::string_view, int> m;
        for (int i = 0; i < kVocabSize; ++i) m.emplace(vocab()[(size_t)i], i);
        return m;
    }();
    auto it = map.find(s);
    if (it == map.end()) throw DataError("unknown token: '" + std::string(s) + "'");
    return it->second;
}

inline const std::string& token_str(int id) {
    if (id < 0 || id >= kVocabSize)
        throw DataError("token id out of range: " + std::to_string(id));
    return vocab()[(size_t)id];
}

inline std::vector<std::string> tokens_to_strings(const std::vector<int>& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(token_str(id));
    return out;
}

inline std::vector<int> strings_to_tokens(const std::vector<std::string>& strs) {
    std::vector<int> out;
    out.reserve(strs.size());
    for (const auto& s : strs) out.push_back(token_id(s));
    return out;
}

// Non-negative integers render as their decimal digit tokens.
inline std::vector<int> number_tokens(int v) {
    if (v < 0) throw ContractError("number_tokens: negative value");
    std::string s = std::to_string(v);
    std::vector<int> out;
    for (char c : s) out.push_back(tok::kDigit0 + (c - '0'));
    return out;
}

}  // namespace mlr
