#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pcw {

using Token = int;
using TokenSeq = std::vector<Token>;

// Byte-level tokenizer: ids 0..255 are raw bytes (newline included, no
// special treatment), 256/257 are BOS/EOS. tokenize never emits specials,
// so detokenize(tokenize(s)) == s for every byte string.
namespace tokenizer {

inline constexpr Token kBos = 256;
inline constexpr Token kEos = 257;
inline constexpr int kVocabFloor = 258; // smallest model vocab that covers bytes + specials

inline TokenSeq tokenize(std::string_view text) {
    TokenSeq tokens;
    tokens.reserve(text.size());
    for (unsigned char c : text) tokens.push_back(Token(c));
    return tokens;
}

inline std::string detokenize(const TokenSeq& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (Token t : tokens)
        if (t >= 0 && t < 256) out.push_back(char(static_cast<unsigned char>(t)));
    return out;
}

} // namespace tokenizer
} // namespace pcw
