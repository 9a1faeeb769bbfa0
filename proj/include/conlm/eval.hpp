// SPDX-License-Identifier: Apache-2.0
//
// Measurement procedures: validation loss on held-out splits, multiple-choice
// scoring, per-word surprisal, behavioral alignment against reading times,
// ridge-regression encoding models with nested cross-validation, and
// localization of language-selective units.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "conlm/common.hpp"
#include "conlm/corpus.hpp"
#include "conlm/model.hpp"

namespace conlm {

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

struct SurprisalRecord {
  std::string word;
  double surprisal_bits = 0.0;  // -log2 p summed over the word's tokens
  std::string doc_id;
  Index word_index = 0;
};

struct ReadingTimeWord {
  std::string story_id;
  Index word_index = 0;
  std::string word;
  double rt_ms = 0.0;
};

using ReadingTimeDataset = std::vector<ReadingTimeWord>;

struct BrainDataset {
  std::vector<std::string> stimuli;
  Eigen::MatrixXd responses;  // [n_stimuli, n_targets]
  std::optional<Eigen::VectorXd> noise_ceiling;
};

struct AlignmentResult {
  std::string scope;
  Eigen::VectorXd per_target_r;
  double mean_r = 0.0;
  int n_folds = 0;
  std::vector<double> lambda_per_fold;
};

struct UnitId {
  Index layer = 0;    // residual stream after block `layer`, 1-based
  Index channel = 0;  // d_model coordinate
  auto operator<=>(const UnitId&) const = default;
};

struct McResult {
  int chosen = 0;
  std::vector<double> scores;
};

// ---------------------------------------------------------------------------
// Statistics (implemented in eval.cpp)
// ---------------------------------------------------------------------------

// Product-moment correlation; lengths must match and be >= 3.
double pearson(const Eigen::VectorXd& x, const Eigen::VectorXd& y);

// beta = argmin ||y - X beta||^2 + lambda ||beta||^2, via QR on the stacked
// system. Singular at lambda = 0 is signaled.
Eigen::VectorXd ridge_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda);
Eigen::MatrixXd ridge_fit_multi(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double lambda);

std::vector<double> default_lambda_grid();  // 1e-3 .. 1e5 in decade steps

// Contiguous k-fold split; per fold, lambda chosen by leave-one-fold-out CV on
// the training portion; features z-scored on the fitting rows; per-target r
// over the pooled held-out predictions.
AlignmentResult encoding_alignment(const Eigen::MatrixXd& features,
                                   const Eigen::MatrixXd& responses, int k_folds,
                                   const std::vector<double>& lambda_grid,
                                   std::string scope = "");

inline AlignmentResult encoding_alignment(const Eigen::MatrixXd& features, const BrainDataset& data,
                                          int k_folds, const std::vector<double>& lambda_grid,
                                          std::string scope = "") {
  return encoding_alignment(features, data.responses, k_folds, lambda_grid, std::move(scope));
}

// top_percent% of n_units rounded to the nearest integer, clamped to [1, n_units].
Index selected_unit_count(Index n_units, double top_percent);

// Welch t-statistic with an epsilon-floored denominator.
double welch_t(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

// Fixture generator: shuffles characters within each word, keeping separators.
std::vector<std::string> make_nonword_stimuli(const std::vector<std::string>& sentences,
                                              std::uint64_t seed);

// CSV / raw-matrix IO for eval inputs (implemented in eval_io.cpp).
std::vector<std::string> load_stimuli_csv(const std::string& path);
void save_stimuli_csv(const std::vector<std::string>& stimuli, const std::string& path);
ReadingTimeDataset load_reading_times_csv(const std::string& path);
void save_reading_times_csv(const ReadingTimeDataset& data, const std::string& path);
Eigen::MatrixXd load_response_matrix(const std::string& path, const std::string& sidecar_path);
void save_response_matrix(const Eigen::MatrixXd& m, const std::string& path,
                          const std::string& sidecar_path);

// ---------------------------------------------------------------------------
// Model-dependent measurements
// ---------------------------------------------------------------------------

// Mean cross-entropy (nats) over deterministic non-overlapping windows of
// seq_len+1 tokens. Refuses corpora labeled as training splits.
template <class Scalar>
double validation_loss(const TensorSet<Scalar>& p, const TokenizedCorpus& corpus, Index seq_len,
                       Index max_batches = 0) {
  if (corpus.provenance == "S" || corpus.provenance == "L")
    throw ConfigError("validation_loss: refusing to evaluate on training split '" +
                      corpus.provenance + "'");
  if (seq_len < 1 || seq_len > p.config.max_seq_len)
    throw ConfigError("validation_loss: bad seq_len");
  const Index window = seq_len + 1;
  const Index n_windows_avail = static_cast<Index>(corpus.ids.size()) / window;
  if (n_windows_avail < 1) throw ConfigError("validation_loss: corpus shorter than one window");
  const Index n_windows =
      (max_batches > 0) ? std::min(max_batches, n_windows_avail) : n_windows_avail;
  double total = 0.0;
  for (Index w = 0; w < n_windows; ++w) {
    std::span<const TokenId> chunk(corpus.ids.data() + w * window, static_cast<std::size_t>(window));
    total += loss(p, chunk);
  }
  return total / static_cast<double>(n_windows);
}

namespace detail {

// Per-token -log2 p(token | preceding context), first token scored against
// BOS. Long texts are processed in overlapping windows with at least half a
// window of context.
template <class Scalar>
std::vector<double> token_surprisal_bits(const TensorSet<Scalar>& p,
                                         const std::vector<TokenId>& doc_tokens) {
  const Index w_max = p.config.max_seq_len;
  if (w_max < 2) throw ConfigError("token surprisal needs max_seq_len >= 2");
  std::vector<TokenId> seq;
  seq.reserve(doc_tokens.size() + 1);
  seq.push_back(kBosId);
  seq.insert(seq.end(), doc_tokens.begin(), doc_tokens.end());
  const Index n_seq = static_cast<Index>(seq.size());
  const double inv_ln2 = 1.4426950408889634;

  std::vector<double> bits(doc_tokens.size(), 0.0);
  Index scored = 0;  // doc tokens scored so far
  Index start = 0;   // window start in seq coordinates
  while (scored < static_cast<Index>(doc_tokens.size())) {
    const Index end = std::min(start + w_max, n_seq);
    std::span<const TokenId> window(seq.data() + start, static_cast<std::size_t>(end - start));
    Mat<Scalar> logits = forward(p, window);
    // logits row r predicts seq[start+r+1] == doc token (start+r).
    for (Index j = scored; j < end - 1; ++j) {
      const Index r = j - start;
      double mx = static_cast<double>(logits.row(r).maxCoeff());
      double denom = 0.0;
      for (Index c = 0; c < logits.cols(); ++c)
        denom += std::exp(static_cast<double>(logits(r, c)) - mx);
      double lse = mx + std::log(denom);
      double lp = static_cast<double>(logits(r, static_cast<Index>(doc_tokens[static_cast<std::size_t>(j)]))) - lse;
      bits[static_cast<std::size_t>(j)] = -lp * inv_ln2;
    }
    scored = end - 1;
    if (end == n_seq) break;
    start = std::max(Index{0}, scored + 1 - w_max / 2);
  }
  return bits;
}

}  // namespace detail

struct SurprisalOptions {
  bool include_leading_separator = true;  // leading space counts with the following word
  std::string doc_id;
};

// Per word, -log2 p summed over the word's token span; first word scored
// against BOS context.
template <class Scalar>
std::vector<SurprisalRecord> word_surprisals(const TensorSet<Scalar>& p, std::string_view text,
                                             const SurprisalOptions& opts = {}) {
  auto [tokens, alignment] = tokenize(text);
  std::vector<SurprisalRecord> out;
  if (tokens.empty()) return out;
  std::vector<double> bits = detail::token_surprisal_bits(p, tokens);

  Index prev_end = 0;
  for (std::size_t wi = 0; wi < alignment.size(); ++wi) {
    const auto& span = alignment[wi];
    const Index from = opts.include_leading_separator ? prev_end : span.begin;
    double s = 0.0;
    for (Index j = from; j < span.end; ++j) s += bits[static_cast<std::size_t>(j)];
    out.push_back({span.word, s, opts.doc_id, static_cast<Index>(wi)});
    prev_end = span.end;
  }
  return out;
}

// score(option) = sum of token log p(option | context ++ prefix); optionally
// divided by the option's token count. Ties resolve to the lowest index.
template <class Scalar>
McResult multiple_choice(const TensorSet<Scalar>& p, std::string_view context,
                         const std::vector<std::string>& options, bool length_normalize) {
  if (options.size() < 2) throw ConfigError("multiple_choice: need at least 2 options");
  auto [ctx_tokens, ctx_align] = tokenize(context);
  McResult res;
  res.scores.reserve(options.size());
  for (const auto& opt : options) {
    auto [opt_tokens, opt_align] = tokenize(opt);
    if (opt_tokens.empty()) throw ConfigError("multiple_choice: empty option");
    std::vector<TokenId> seq;
    seq.reserve(1 + ctx_tokens.size() + opt_tokens.size());
    seq.push_back(kBosId);
    seq.insert(seq.end(), ctx_tokens.begin(), ctx_tokens.end());
    seq.insert(seq.end(), opt_tokens.begin(), opt_tokens.end());
    Mat<Scalar> logits = forward(p, std::span<const TokenId>(seq));
    double total = 0.0;
    const Index opt_start = static_cast<Index>(1 + ctx_tokens.size());
    for (Index pos = opt_start; pos < static_cast<Index>(seq.size()); ++pos) {
      const Index r = pos - 1;  // row predicting seq[pos]
      double mx = static_cast<double>(logits.row(r).maxCoeff());
      double denom = 0.0;
      for (Index c = 0; c < logits.cols(); ++c)
        denom += std::exp(static_cast<double>(logits(r, c)) - mx);
      total += static_cast<double>(logits(r, static_cast<Index>(seq[static_cast<std::size_t>(pos)]))) -
               (mx + std::log(denom));
    }
    res.scores.push_back(length_normalize ? total / static_cast<double>(opt_tokens.size()) : total);
  }
  res.chosen = 0;
  for (std::size_t i = 1; i < res.scores.size(); ++i)
    if (res.scores[i] > res.scores[static_cast<std::size_t>(res.chosen)])
      res.chosen = static_cast<int>(i);
  return res;
}

struct BehavioralOptions {
  double min_rt_ms = 0.0;
  double max_rt_ms = std::numeric_limits<double>::infinity();
  bool perplexity_scale = false;  // correlate 2^bits instead of bits
  bool include_leading_separator = true;
};

struct BehavioralResult {
  double r = 0.0;
  Index n_words = 0;
};

// Concatenates all words across stories and correlates model surprisal with
// reading time. Story text is the dataset's own words joined by single spaces.
template <class Scalar>
BehavioralResult behavioral_alignment(const TensorSet<Scalar>& p, const ReadingTimeDataset& data,
                                      const BehavioralOptions& opts = {}) {
  if (data.empty()) throw ConfigError("behavioral_alignment: empty dataset");
  // Group by story in first-appearance order.
  std::vector<std::string> story_order;
  std::vector<std::vector<const ReadingTimeWord*>> stories;
  for (const auto& w : data) {
    std::size_t si = 0;
    for (; si < story_order.size(); ++si)
      if (story_order[si] == w.story_id) break;
    if (si == story_order.size()) {
      story_order.push_back(w.story_id);
      stories.emplace_back();
    }
    stories[si].push_back(&w);
  }

  std::vector<double> xs, ys;
  for (std::size_t si = 0; si < stories.size(); ++si) {
    auto& rows = stories[si];
    std::stable_sort(rows.begin(), rows.end(),
                     [](const ReadingTimeWord* a, const ReadingTimeWord* b) {
                       return a->word_index < b->word_index;
                     });
    std::string text;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (i) text += ' ';
      text += rows[i]->word;
    }
    SurprisalOptions sopts;
    sopts.include_leading_separator = opts.include_leading_separator;
    sopts.doc_id = story_order[si];
    auto records = word_surprisals(p, text, sopts);
    if (records.size() != rows.size())
      throw Error("behavioral_alignment: story '" + story_order[si] + "' has " +
                  std::to_string(rows.size()) + " words but the model scored " +
                  std::to_string(records.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (records[i].word != rows[i]->word)
        throw Error("behavioral_alignment: story '" + story_order[si] + "' word " +
                    std::to_string(i) + ": dataset has '" + rows[i]->word +
                    "', model scored '" + records[i].word + "'");
      if (rows[i]->rt_ms < opts.min_rt_ms || rows[i]->rt_ms > opts.max_rt_ms) continue;
      double x = records[i].surprisal_bits;
      if (opts.perplexity_scale) x = std::exp2(x);
      xs.push_back(x);
      ys.push_back(rows[i]->rt_ms);
    }
  }
  if (xs.size() < 3) throw ConfigError("behavioral_alignment: fewer than 3 usable words");
  Eigen::VectorXd xv = Eigen::Map<Eigen::VectorXd>(xs.data(), static_cast<Index>(xs.size()));
  Eigen::VectorXd yv = Eigen::Map<Eigen::VectorXd>(ys.data(), static_cast<Index>(ys.size()));
  return {pearson(xv, yv), static_cast<Index>(xs.size())};
}

namespace detail {

// Residual streams 0..n_layers for BOS + sentence bytes; stream 0 is the
// embedding output, stream i the state after block i.
template <class Scalar>
std::vector<Mat<Scalar>> residual_streams(const TensorSet<Scalar>& p, std::string_view sentence) {
  auto [tokens, align] = tokenize(sentence);
  std::vector<TokenId> seq;
  seq.reserve(tokens.size() + 1);
  seq.push_back(kBosId);
  seq.insert(seq.end(), tokens.begin(), tokens.end());
  ForwardTrace<Scalar> tr;
  forward(p, std::span<const TokenId>(seq), &tr);
  std::vector<Mat<Scalar>> streams;
  streams.reserve(static_cast<std::size_t>(p.config.n_layers) + 1);
  streams.push_back(tr.x0);
  for (Index l = 1; l < p.config.n_layers; ++l)
    streams.push_back(tr.blocks[static_cast<std::size_t>(l)].x_in);
  streams.push_back(tr.x_last);
  return streams;
}

template <class Scalar>
Vec<Scalar> stream_summary(const Mat<Scalar>& stream, bool mean_pool) {
  if (mean_pool && stream.rows() > 1) {
    // Mean over the sentence's own tokens, excluding the BOS row.
    return stream.bottomRows(stream.rows() - 1).colwise().mean().transpose();
  }
  return stream.row(stream.rows() - 1).transpose();
}

}  // namespace detail

// Per sentence, the residual-stream activation at the chosen layer for the
// final token (or mean-pooled over the sentence's tokens).
template <class Scalar>
Mat<Scalar> extract_features(const TensorSet<Scalar>& p, const std::vector<std::string>& sentences,
                             Index layer, bool mean_pool = false) {
  if (layer < 0 || layer > p.config.n_layers)
    throw ConfigError("extract_features: layer out of range [0, n_layers]");
  Mat<Scalar> feats(static_cast<Index>(sentences.size()), p.config.d_model);
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    auto streams = detail::residual_streams(p, sentences[i]);
    feats.row(static_cast<Index>(i)) =
        detail::stream_summary(streams[static_cast<std::size_t>(layer)], mean_pool).transpose();
  }
  return feats;
}

// Ranks units (layer, channel) over all post-block residual streams by the
// Welch t-statistic of final-token activation, sentences vs non-words; returns
// the top selected_unit_count(n_units, top_percent), ties broken by (layer,
// channel).
template <class Scalar>
std::vector<UnitId> localize_units(const TensorSet<Scalar>& p,
                                   const std::vector<std::string>& sentence_stimuli,
                                   const std::vector<std::string>& nonword_stimuli,
                                   double top_percent) {
  if (sentence_stimuli.empty() || nonword_stimuli.empty())
    throw ConfigError("localize_units: both stimulus sets must be nonempty");
  const Index n_layers = p.config.n_layers;
  const Index d = p.config.d_model;
  const Index n_units = n_layers * d;
  const Index count = selected_unit_count(n_units, top_percent);

  auto collect = [&](const std::vector<std::string>& stims) {
    Eigen::MatrixXd acts(static_cast<Index>(stims.size()), n_units);
    for (std::size_t i = 0; i < stims.size(); ++i) {
      auto streams = detail::residual_streams(p, stims[i]);
      for (Index l = 1; l <= n_layers; ++l) {
        Mat<Scalar> last = streams[static_cast<std::size_t>(l)].row(
            streams[static_cast<std::size_t>(l)].rows() - 1);
        acts.row(static_cast<Index>(i)).segment((l - 1) * d, d) =
            last.template cast<double>().row(0);
      }
    }
    return acts;
  };
  Eigen::MatrixXd a_sent = collect(sentence_stimuli);
  Eigen::MatrixXd a_non = collect(nonword_stimuli);

  std::vector<std::pair<double, Index>> ranked(static_cast<std::size_t>(n_units));
  for (Index u = 0; u < n_units; ++u)
    ranked[static_cast<std::size_t>(u)] = {welch_t(a_sent.col(u), a_non.col(u)), u};
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  std::vector<UnitId> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) {
    Index u = ranked[static_cast<std::size_t>(i)].second;
    out.push_back({u / d + 1, u % d});
  }
  return out;
}

// Features restricted to the selected units (canonically ordered), then the
// same encoding procedure as encoding_alignment.
template <class Scalar>
AlignmentResult localized_alignment(const TensorSet<Scalar>& p, std::vector<UnitId> units,
                                    const std::vector<std::string>& stimuli,
                                    const Eigen::MatrixXd& responses, int k_folds,
                                    const std::vector<double>& lambda_grid) {
  if (units.empty()) throw ConfigError("localized_alignment: empty unit set");
  std::sort(units.begin(), units.end());
  const Index d = p.config.d_model;
  for (const auto& u : units)
    if (u.layer < 1 || u.layer > p.config.n_layers || u.channel < 0 || u.channel >= d)
      throw ConfigError("localized_alignment: unit out of range");

  Eigen::MatrixXd feats(static_cast<Index>(stimuli.size()), static_cast<Index>(units.size()));
  for (std::size_t i = 0; i < stimuli.size(); ++i) {
    auto streams = detail::residual_streams(p, stimuli[i]);
    for (std::size_t j = 0; j < units.size(); ++j) {
      const auto& st = streams[static_cast<std::size_t>(units[j].layer)];
      feats(static_cast<Index>(i), static_cast<Index>(j)) =
          static_cast<double>(st(st.rows() - 1, units[j].channel));
    }
  }
  return encoding_alignment(feats, responses, k_folds, lambda_grid,
                            "units:" + std::to_string(units.size()));
}

}  // namespace conlm
