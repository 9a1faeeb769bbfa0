// SPDX-License-Identifier: Apache-2.0
//
// Byte-level tokenization (exactly invertible), word/token alignment for
// surprisal, the binary corpus format, disjoint corpus splits, deterministic
// batch sampling and a seeded synthetic text generator.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "conlm/common.hpp"

namespace conlm {

inline constexpr TokenId kBosId = 256;
inline constexpr TokenId kEosId = 257;
inline constexpr TokenId kByteVocabSize = 258;  // 256 byte symbols + BOS + EOS

struct TokenizedCorpus {
  std::vector<TokenId> ids;
  TokenId vocab_size = kByteVocabSize;
  std::string provenance;  // e.g. "S", "L", "validation"

  void validate() const {
    if (ids.empty()) throw ConfigError("TokenizedCorpus: empty");
    for (TokenId t : ids)
      if (t >= vocab_size) throw ConfigError("TokenizedCorpus: token id out of range");
  }
};

// One whitespace-delimited word and its token span [begin, end). Separator
// tokens belong to no span.
struct WordSpan {
  std::string word;
  Index begin = 0;
  Index end = 0;
};

using WordAlignment = std::vector<WordSpan>;

std::pair<std::vector<TokenId>, WordAlignment> tokenize(std::string_view text);

// Exact byte reconstruction; BOS/EOS are skipped, ids >= vocab rejected.
std::string detokenize(std::span<const TokenId> ids);

struct SplitSizes {
  Index s = 0, l = 0, validation = 0;
};

struct CorpusSplits {
  TokenizedCorpus s, l, validation;
};

// Contiguous disjoint spans in order (S, L, validation).
CorpusSplits split_corpus(const TokenizedCorpus& corpus, const SplitSizes& sizes);

// batch_size sequences of seq_len+1 tokens at pseudorandom offsets that are a
// pure function of (seed, step).
std::vector<std::vector<TokenId>> sample_batch(const TokenizedCorpus& corpus, Index batch_size,
                                               Index seq_len, Index step, std::uint64_t seed);

// Binary corpus file ("CRPS").
void save_corpus(const TokenizedCorpus& corpus, const std::string& path);
TokenizedCorpus load_corpus(const std::string& path, std::string provenance = "");

// Deterministic Markov text over a fixed word vocabulary; exactly n_bytes long.
std::string synthetic_text(std::size_t n_bytes, std::uint64_t seed);

}  // namespace conlm
