// SPDX-License-Identifier: Apache-2.0
#include "conlm/training.hpp"

#include <cmath>

#include "conlm/optimizer.hpp"
#include "conlm/rng.hpp"

namespace conlm {

namespace {

// Substream tags so that init, masks and batch order draw from independent
// deterministic streams of one master seed.
constexpr std::uint64_t kTagInit = 0x1;
constexpr std::uint64_t kTagData = 0x2;
constexpr std::uint64_t kTagMask = 0x3;
constexpr std::uint64_t kTagGen = 0x10;

}  // namespace

TrainResult train(TensorSet<float> init, const TokenizedCorpus& corpus, const TrainConfig& cfg,
                  const Connectome* mask, const StepCallback& on_step) {
  cfg.validate(init.config);
  corpus.validate();
  if (corpus.vocab_size > static_cast<TokenId>(init.config.vocab_size))
    throw ConfigError("train: corpus vocab exceeds model vocab");
  if (mask && !mask_respected(init, *mask))
    throw ConfigError("train: initialization has nonzero weights at masked positions");

  TrainResult res;
  res.params = std::move(init);
  const Index total = cfg.schedule.total_steps();
  res.losses.reserve(static_cast<std::size_t>(total));
  res.lrs.reserve(static_cast<std::size_t>(total));

  AdamState<float> state = AdamState<float>::zeros_like(res.params);
  TensorSet<float> grads = TensorSet<float>::zeros(res.params.config);
  const double inv_batch = 1.0 / static_cast<double>(cfg.batch_size);

  for (Index step = 0; step < total; ++step) {
    auto batch = sample_batch(corpus, cfg.batch_size, cfg.seq_len, step, cfg.seed);
    grads.set_zero();
    double batch_loss = 0.0;
    for (const auto& seq : batch)
      batch_loss += grad_accumulate(res.params, std::span<const TokenId>(seq), grads, inv_batch);
    batch_loss *= inv_batch;
    if (!std::isfinite(batch_loss))
      throw NumericError("train: non-finite loss at step " + std::to_string(step));

    const double lr = lr_at(cfg.schedule, step);
    adamw_step(res.params, grads, state, lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps,
               mask);
    res.losses.push_back(batch_loss);
    res.lrs.push_back(lr);
    if (on_step) on_step(step, res.params, batch_loss);
  }
  return res;
}

EvolveResult evolve(const GenerationPlan& plan, const TokenizedCorpus& corpus_l,
                    const TrainConfig& cfg, const ModelConfig& model_cfg, std::uint64_t seed,
                    const GenerationCallback& on_generation) {
  plan.validate();
  model_cfg.validate();
  if (cfg.schedule.total_steps() != plan.iters_per_generation)
    throw ConfigError("evolve: schedule total_steps must equal plan.iters_per_generation");

  EvolveResult res;
  TensorSet<float> params = TensorSet<float>::normal_init(model_cfg, mix64(seed, kTagInit));
  Connectome conn = dense_connectome(model_cfg);
  params.for_each_tensor(
      [&](const std::string& name, const Mat<float>&) { res.tensor_names.push_back(name); });

  for (Index g = 0; g < plan.n_generations; ++g) {
    if (on_generation) on_generation(g, params, conn);
    TrainConfig gen_cfg = cfg;
    gen_cfg.seed = mix64(seed, kTagGen, static_cast<std::uint64_t>(g));
    TrainResult tr = train(std::move(params), corpus_l, gen_cfg, g == 0 ? nullptr : &conn);
    res.losses_per_generation.push_back(std::move(tr.losses));
    conn = derive(tr.params, conn, plan.prune_fraction);
    res.alive_per_generation.push_back(conn.alive_per_tensor());
    params = to_init<float>(conn, model_cfg);
  }
  res.connectome = std::move(conn);
  return res;
}

std::string init_source_label(InitSource s) {
  switch (s) {
    case InitSource::kConnectome: return "Connectome";
    case InitSource::kRandomConnectome: return "RandomConnectome";
    case InitSource::kDense: return "NoConnectome";
  }
  throw ConfigError("init_source_label: bad source");
}

DevelopResult develop(InitSource source, const Connectome* base, const TokenizedCorpus& corpus_s,
                      const TrainConfig& cfg, const ModelConfig& model_cfg, std::uint64_t seed,
                      const StepCallback& on_step) {
  model_cfg.validate();
  DevelopResult res;
  res.label = init_source_label(source);

  TensorSet<float> init;
  const Connectome* mask = nullptr;
  switch (source) {
    case InitSource::kConnectome: {
      if (!base) throw ConfigError("develop: Connectome source requires a connectome");
      init = to_init<float>(*base, model_cfg);
      res.mask = *base;
      mask = &*res.mask;
      break;
    }
    case InitSource::kRandomConnectome: {
      if (!base) throw ConfigError("develop: RandomConnectome source requires a connectome");
      res.mask = random_like(*base, mix64(seed, kTagMask));
      init = to_init<float>(*res.mask, model_cfg);
      mask = &*res.mask;
      break;
    }
    case InitSource::kDense: {
      init = TensorSet<float>::normal_init(model_cfg, mix64(seed, kTagInit));
      break;
    }
  }

  TrainConfig run_cfg = cfg;
  run_cfg.seed = mix64(seed, kTagData);
  TrainResult tr = train(std::move(init), corpus_s, run_cfg, mask, on_step);
  res.params = std::move(tr.params);
  res.losses = std::move(tr.losses);
  res.lrs = std::move(tr.lrs);
  return res;
}

}  // namespace conlm
