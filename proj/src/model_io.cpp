// SPDX-License-Identifier: Apache-2.0
#include "conlm/model.hpp"

#include "conlm/binio.hpp"

namespace conlm {

namespace {

constexpr std::uint16_t kCheckpointVersion = 1;

void write_config(BinWriter& w, const ModelConfig& cfg) {
  w.u32(static_cast<std::uint32_t>(cfg.n_layers));
  w.u32(static_cast<std::uint32_t>(cfg.d_model));
  w.u32(static_cast<std::uint32_t>(cfg.n_heads));
  w.u32(static_cast<std::uint32_t>(cfg.vocab_size));
  w.u32(static_cast<std::uint32_t>(cfg.max_seq_len));
  w.f64(cfg.rope_base);
  w.f64(cfg.rms_eps);
  w.f64(cfg.init_std);
  w.pod<std::uint8_t>(cfg.tied_embeddings ? 1 : 0);
}

ModelConfig read_config(BinReader& r) {
  ModelConfig cfg;
  cfg.n_layers = r.u32();
  cfg.d_model = r.u32();
  cfg.n_heads = r.u32();
  cfg.vocab_size = r.u32();
  cfg.max_seq_len = r.u32();
  cfg.rope_base = r.f64();
  cfg.rms_eps = r.f64();
  cfg.init_std = r.f64();
  cfg.tied_embeddings = r.pod<std::uint8_t>() != 0;
  cfg.validate();
  return cfg;
}

}  // namespace

// File layout: magic "CNFG", version u16, serialized ModelConfig, tensor
// count u32; per tensor: name (u32 length + bytes), rank u32, dims u64 each,
// row-major float32 payload.
void save_checkpoint(const TensorSet<float>& params, const std::string& path) {
  BinWriter w(path);
  w.magic("CNFG");
  w.u16(kCheckpointVersion);
  write_config(w, params.config);
  auto list = params.tensor_list();
  w.u32(static_cast<std::uint32_t>(list.size()));
  for (const auto& [name, m] : list) {
    w.str(name);
    w.u32(2);
    w.u64(static_cast<std::uint64_t>(m->rows()));
    w.u64(static_cast<std::uint64_t>(m->cols()));
    w.bytes(m->data(), static_cast<std::size_t>(m->size()) * sizeof(float));
  }
  w.close();
}

TensorSet<float> load_checkpoint(const std::string& path) {
  BinReader r(path);
  r.expect_magic("CNFG", "checkpoint");
  const std::uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw IoError("checkpoint '" + path + "': unsupported version " + std::to_string(version));
  ModelConfig cfg = read_config(r);
  TensorSet<float> params = TensorSet<float>::zeros(cfg);
  auto list = params.tensor_list();
  const std::uint32_t n_tensors = r.u32();
  if (n_tensors != list.size())
    throw IoError("checkpoint '" + path + "': expected " + std::to_string(list.size()) +
                  " tensors, found " + std::to_string(n_tensors));
  for (auto& [name, m] : list) {
    const std::string got = r.str();
    if (got != name)
      throw IoError("checkpoint '" + path + "': expected tensor '" + name + "', found '" + got + "'");
    const std::uint32_t rank = r.u32();
    if (rank != 2) throw IoError("checkpoint '" + path + "': tensor '" + name + "' has rank != 2");
    const std::uint64_t rows = r.u64();
    const std::uint64_t cols = r.u64();
    if (rows != static_cast<std::uint64_t>(m->rows()) || cols != static_cast<std::uint64_t>(m->cols()))
      throw IoError("checkpoint '" + path + "': tensor '" + name + "' shape mismatch");
    r.bytes(m->data(), static_cast<std::size_t>(m->size()) * sizeof(float));
  }
  r.expect_eof();
  return params;
}

}  // namespace conlm
