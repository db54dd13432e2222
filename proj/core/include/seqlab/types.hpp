#pragma once

#include <cstdint>
#include <vector>

namespace seqlab {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Reserved vocabulary ids shared by the data generator, model and decoders.
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kFirstContentToken = 3;

}  // namespace seqlab

namespace seqlab {

// Corpus texts carry no EOS; the model's targets do.
inline TokenSeq with_eos(TokenSeq text) {
  text.push_back(kEos);
  return text;
}

inline TokenSeq strip_eos(TokenSeq seq) {
  if (!seq.empty() && seq.back() == kEos) seq.pop_back();
  return seq;
}

}  // namespace seqlab
