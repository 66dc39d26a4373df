#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace duplex {

// Token ids over a closed vocabulary. Id 0 is the reserved blank; transcripts
// never contain it.
using TokenSeq = std::vector<int>;

struct Vocabulary {
  static constexpr int kBlankId = 0;

  std::vector<std::string> tokens;  // tokens[id]; tokens[0] is the blank

  int size() const { return static_cast<int>(tokens.size()); }
  int num_labels() const { return size() - 1; }  // non-blank tokens

  const std::string& name(int id) const { return tokens.at(id); }

  void check_transcript(const TokenSeq& y) const {
    for (int id : y)
      if (id <= 0 || id >= size())
        throw std::out_of_range("transcript contains invalid token id " + std::to_string(id));
  }

  static Vocabulary synthetic(int vocab_size) {
    if (vocab_size < 2) throw std::invalid_argument("vocabulary needs blank plus one token");
    Vocabulary v;
    v.tokens.reserve(vocab_size);
    v.tokens.push_back("<blank>");
    for (int i = 1; i < vocab_size; ++i) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "tok%03d", i);
      v.tokens.push_back(buf);
    }
    return v;
  }
};

}  // namespace duplex
