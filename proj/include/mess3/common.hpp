#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mess3 {

using Token = std::uint8_t;
using TokenSeq = std::vector<Token>;

inline constexpr int kVocab = 3;
inline constexpr int kNumStates = 3;
inline constexpr int kEnumerationCap = 12;  // 3^12 ~ 531k sequences

inline void check_tokens(const TokenSeq& seq) {
  for (Token t : seq) {
    if (t >= kVocab) {
      throw std::invalid_argument("token out of vocabulary: " + std::to_string(int(t)));
    }
  }
}

inline std::string seq_to_string(const TokenSeq& seq) {
  std::string s;
  s.reserve(seq.size());
  for (Token t : seq) s.push_back(char('0' + t));
  return s;
}

inline TokenSeq seq_from_string(const std::string& s) {
  TokenSeq seq;
  seq.reserve(s.size());
  for (char c : s) {
    if (c < '0' || c >= '0' + kVocab) {
      throw std::invalid_argument(std::string("bad token character '") + c + "' in sequence");
    }
    seq.push_back(Token(c - '0'));
  }
  return seq;
}

}  // namespace mess3
