// SPDX-License-Identifier: Apache-2.0
//
// Masked AdamW training with the warmup-hold-decay schedule, plus the two
// drivers: evolve (generational pruning loop over the large corpus, producing
// a connectome) and develop (one training from a chosen initialization on the
// small corpus).
#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "conlm/connectome.hpp"
#include "conlm/corpus.hpp"
#include "conlm/model.hpp"
#include "conlm/schedule.hpp"

namespace conlm {

struct TrainConfig {
  Index batch_size = 8;
  Index seq_len = 64;
  LRSchedule schedule;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate(const ModelConfig& m) const {
    if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
    if (seq_len < 1) throw ConfigError("TrainConfig: seq_len must be >= 1");
    if (seq_len > m.max_seq_len) throw ConfigError("TrainConfig: seq_len exceeds max_seq_len");
    schedule.validate();
  }
};

struct GenerationPlan {
  Index n_generations = 6;
  double prune_fraction = 0.2;
  Index iters_per_generation = 7000;

  void validate() const {
    if (n_generations < 1) throw ConfigError("GenerationPlan: n_generations must be >= 1");
    if (!(prune_fraction > 0.0 && prune_fraction < 1.0))
      throw ConfigError("GenerationPlan: prune_fraction must be in (0,1)");
    if (iters_per_generation < 1)
      throw ConfigError("GenerationPlan: iters_per_generation must be >= 1");
  }
};

struct TrainResult {
  TensorSet<float> params;
  std::vector<double> losses;  // one finite entry per step
  std::vector<double> lrs;
};

using StepCallback = std::function<void(Index step, const TensorSet<float>& params, double loss)>;

// Runs schedule.total_steps() iterations of sample -> forward/backward ->
// adamw_step. With a mask, masked weights are exactly zero after every step.
TrainResult train(TensorSet<float> init, const TokenizedCorpus& corpus, const TrainConfig& cfg,
                  const Connectome* mask = nullptr, const StepCallback& on_step = {});

struct EvolveResult {
  Connectome connectome;
  std::vector<std::vector<double>> losses_per_generation;
  std::vector<std::vector<Index>> alive_per_generation;  // per tensor, after each prune
  std::vector<std::string> tensor_names;
};

// Called at the start of each generation with the initialization about to be
// trained and the connectome it came from (dense at g = 0).
using GenerationCallback =
    std::function<void(Index g, const TensorSet<float>& init, const Connectome& mask)>;

// Dense normal init, then n_generations cycles of train -> derive -> binarize.
EvolveResult evolve(const GenerationPlan& plan, const TokenizedCorpus& corpus_l,
                    const TrainConfig& cfg, const ModelConfig& model_cfg, std::uint64_t seed,
                    const GenerationCallback& on_generation = {});

enum class InitSource { kConnectome, kRandomConnectome, kDense };

std::string init_source_label(InitSource s);  // "Connectome" / "RandomConnectome" / "NoConnectome"

struct DevelopResult {
  TensorSet<float> params;
  std::vector<double> losses;
  std::vector<double> lrs;
  std::optional<Connectome> mask;  // the mask actually trained under, if any
  std::string label;
};

// base supplies the connectome for kConnectome (used directly) and
// kRandomConnectome (matched-density resample); it is ignored for kDense.
DevelopResult develop(InitSource source, const Connectome* base, const TokenizedCorpus& corpus_s,
                      const TrainConfig& cfg, const ModelConfig& model_cfg, std::uint64_t seed,
                      const StepCallback& on_step = {});

}  // namespace conlm
