// SPDX-License-Identifier: Apache-2.0
#include "conlm/corpus.hpp"

#include <array>
#include <cctype>
#include <filesystem>

#include "conlm/binio.hpp"
#include "conlm/rng.hpp"

namespace conlm {

namespace {

bool is_separator(unsigned char c) { return std::isspace(c) != 0; }

constexpr std::uint16_t kCorpusVersion = 1;

}  // namespace

std::pair<std::vector<TokenId>, WordAlignment> tokenize(std::string_view text) {
  std::vector<TokenId> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(static_cast<TokenId>(c));

  WordAlignment alignment;
  Index i = 0;
  const Index n = static_cast<Index>(text.size());
  while (i < n) {
    if (is_separator(static_cast<unsigned char>(text[static_cast<std::size_t>(i)]))) {
      ++i;
      continue;
    }
    Index begin = i;
    while (i < n && !is_separator(static_cast<unsigned char>(text[static_cast<std::size_t>(i)]))) ++i;
    alignment.push_back(
        {std::string(text.substr(static_cast<std::size_t>(begin), static_cast<std::size_t>(i - begin))),
         begin, i});
  }
  return {std::move(ids), std::move(alignment)};
}

std::string detokenize(std::span<const TokenId> ids) {
  std::string out;
  out.reserve(ids.size());
  for (TokenId t : ids) {
    if (t == kBosId || t == kEosId) continue;
    if (t >= kByteVocabSize) throw ConfigError("detokenize: id " + std::to_string(t) + " out of range");
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

CorpusSplits split_corpus(const TokenizedCorpus& corpus, const SplitSizes& sizes) {
  corpus.validate();
  if (sizes.s < 1 || sizes.l < 1 || sizes.validation < 1)
    throw ConfigError("split_corpus: all split sizes must be >= 1");
  const Index total = sizes.s + sizes.l + sizes.validation;
  if (total > static_cast<Index>(corpus.ids.size()))
    throw ConfigError("split_corpus: requested " + std::to_string(total) + " tokens from a corpus of " +
                      std::to_string(corpus.ids.size()));
  auto slice = [&](Index begin, Index len, const char* label) {
    TokenizedCorpus c;
    c.ids.assign(corpus.ids.begin() + begin, corpus.ids.begin() + begin + len);
    c.vocab_size = corpus.vocab_size;
    c.provenance = label;
    return c;
  };
  return {slice(0, sizes.s, "S"), slice(sizes.s, sizes.l, "L"),
          slice(sizes.s + sizes.l, sizes.validation, "validation")};
}

std::vector<std::vector<TokenId>> sample_batch(const TokenizedCorpus& corpus, Index batch_size,
                                               Index seq_len, Index step, std::uint64_t seed) {
  if (batch_size < 1 || seq_len < 1) throw ConfigError("sample_batch: bad batch_size/seq_len");
  const Index len = static_cast<Index>(corpus.ids.size());
  if (len <= seq_len) throw ConfigError("sample_batch: corpus shorter than seq_len + 1");
  const std::uint64_t range = static_cast<std::uint64_t>(len - seq_len);  // offsets [0, len-seq_len-1]
  std::vector<std::vector<TokenId>> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (Index i = 0; i < batch_size; ++i) {
    std::uint64_t h = mix64(seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i));
    Index offset = static_cast<Index>(h % range);
    batch.emplace_back(corpus.ids.begin() + offset, corpus.ids.begin() + offset + seq_len + 1);
  }
  return batch;
}

void save_corpus(const TokenizedCorpus& corpus, const std::string& path) {
  corpus.validate();
  BinWriter w(path);
  w.magic("CRPS");
  w.u16(kCorpusVersion);
  w.u32(corpus.vocab_size);
  w.u64(static_cast<std::uint64_t>(corpus.ids.size()));
  w.bytes(corpus.ids.data(), corpus.ids.size() * sizeof(TokenId));
  w.close();
}

TokenizedCorpus load_corpus(const std::string& path, std::string provenance) {
  BinReader r(path);
  r.expect_magic("CRPS", "corpus");
  const std::uint16_t version = r.u16();
  if (version != kCorpusVersion)
    throw IoError("corpus '" + path + "': unsupported version " + std::to_string(version));
  TokenizedCorpus c;
  c.vocab_size = r.u32();
  const std::uint64_t count = r.u64();
  c.ids.resize(count);
  r.bytes(c.ids.data(), count * sizeof(TokenId));
  r.expect_eof();
  c.provenance = provenance.empty() ? std::filesystem::path(path).stem().string() : std::move(provenance);
  c.validate();
  return c;
}

std::string synthetic_text(std::size_t n_bytes, std::uint64_t seed) {
  if (n_bytes == 0) return {};
  static constexpr std::array<const char*, 24> kSyllables = {
      "ba", "do", "ke", "lu", "mi", "no", "pa", "ri", "su", "ta", "ve", "zo",
      "chi", "fra", "gle", "hon", "jas", "kur", "lim", "mor", "nel", "ost", "pra", "qui"};

  Rng rng(mix64(seed, 0x535946));
  constexpr std::size_t kVocab = 48;
  std::vector<std::string> words(kVocab);
  for (auto& w : words) {
    const std::size_t n_syll = 2 + rng.next_below(2);  // 2-3 syllables
    for (std::size_t s = 0; s < n_syll; ++s)
      w += kSyllables[static_cast<std::size_t>(rng.next_below(kSyllables.size()))];
  }

  // Sparse first-order transitions: five candidate successors with a fixed
  // skewed distribution.
  constexpr std::size_t kFanOut = 5;
  static constexpr std::array<double, kFanOut> kCum = {0.40, 0.65, 0.80, 0.92, 1.0};
  std::vector<std::array<std::size_t, kFanOut>> successors(kVocab);
  for (auto& row : successors)
    for (auto& s : row) s = static_cast<std::size_t>(rng.next_below(kVocab));

  std::string text;
  text.reserve(n_bytes + 32);
  std::size_t word = rng.next_below(kVocab);
  std::size_t sentence_left = 5 + rng.next_below(8);
  bool first = true;
  while (text.size() < n_bytes) {
    if (!first) text += ' ';
    first = false;
    text += words[word];
    if (--sentence_left == 0) {
      text += '.';
      sentence_left = 5 + rng.next_below(8);
    }
    double u = rng.next_double();
    std::size_t pick = 0;
    while (pick + 1 < kFanOut && u > kCum[pick]) ++pick;
    word = successors[word][pick];
  }
  text.resize(n_bytes);
  return text;
}

}  // namespace conlm
