// SPDX-License-Identifier: Apache-2.0
#include "experiment.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "conlm/corpus.hpp"

#ifndef CONLM_BUILD_ID
#define CONLM_BUILD_ID "unknown"
#endif

namespace conlm::cli {

json default_config() {
  return json{
      {"model",
       {{"n_layers", 4},
        {"d_model", 128},
        {"n_heads", 4},
        {"vocab_size", 258},
        {"max_seq_len", 128},
        {"rope_base", 10000.0},
        {"rms_eps", 1e-6},
        {"init_std", 0.02},
        {"tied_embeddings", false}}},
      // Desk-scale defaults keep the full-scale schedule proportions (1/28 warmup,
      // 5/7 hold, 1/4 decay outer; 1/8 warmup inner) at a much smaller step
      // count. The 0.0018 peak rate was tuned for 124M-scale models; it works
      // for these tiny configs but is deliberately exposed here.
      {"outer",
       {{"batch_size", 8},
        {"seq_len", 64},
        {"warmup_steps", 12},
        {"hold_steps", 240},
        {"decay_steps", 84},
        {"max_lr", 1.8e-3},
        {"weight_decay", 0.1},
        {"beta1", 0.9},
        {"beta2", 0.95},
        {"adam_eps", 1e-8}}},
      {"inner",
       {{"batch_size", 8},
        {"seq_len", 64},
        {"warmup_steps", 75},
        {"hold_steps", 0},
        {"decay_steps", 525},
        {"max_lr", 1.8e-3},
        {"weight_decay", 0.1},
        {"beta1", 0.9},
        {"beta2", 0.95},
        {"adam_eps", 1e-8}}},
      {"plan", {{"n_generations", 6}, {"prune_fraction", 0.2}}},
      {"data",
       {{"dir", "data"},
        {"source", "synthetic"},
        {"text_path", ""},
        {"s_tokens", 50000},
        {"l_tokens", 2000000},
        {"val_tokens", 50000},
        {"seed", 1234}}},
      {"eval", {{"every", 100}, {"seq_len", 64}, {"max_batches", 64}}},
      {"out_dir", "runs"},
      {"seeds", {0, 1, 2, 3}},
  };
}

namespace {

void deep_merge(json& base, const json& over) {
  if (!over.is_object() || !base.is_object()) {
    base = over;
    return;
  }
  for (auto it = over.begin(); it != over.end(); ++it) {
    if (base.contains(it.key()))
      deep_merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

json load_with_includes(const std::filesystem::path& path, int depth) {
  if (depth > 8) throw ConfigError("config include chain too deep at '" + path.string() + "'");
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  json doc = json::parse(in, nullptr, true, true);
  if (doc.contains("include")) {
    std::filesystem::path inc = doc["include"].get<std::string>();
    if (inc.is_relative()) inc = path.parent_path() / inc;
    json base = load_with_includes(inc, depth + 1);
    doc.erase("include");
    deep_merge(base, doc);
    return base;
  }
  return doc;
}

}  // namespace

json load_config(const std::string& path) {
  json cfg = default_config();
  if (!path.empty()) {
    json file = load_with_includes(path, 0);
    deep_merge(cfg, file);
  }
  return cfg;
}

void apply_overrides(json& cfg, const std::vector<std::string>& overrides) {
  for (const auto& ov : overrides) {
    auto eq = ov.find('=');
    if (eq == std::string::npos)
      throw ConfigError("override '" + ov + "' is not of the form path=value");
    std::string dotted = ov.substr(0, eq);
    std::string value = ov.substr(eq + 1);
    json* node = &cfg;
    std::stringstream ss(dotted);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    if (parts.empty()) throw ConfigError("override '" + ov + "' has an empty path");
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) node = &(*node)[parts[i]];
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::parse_error&) {
      parsed = value;
    }
    (*node)[parts.back()] = parsed;
  }
}

std::string config_hash(const json& cfg) {
  const std::string dump = cfg.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string bytes_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for hashing");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
    if (in.eof()) break;
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

ModelConfig model_config_from(const json& cfg) {
  const json& m = cfg.at("model");
  ModelConfig mc;
  mc.n_layers = m.at("n_layers").get<Index>();
  mc.d_model = m.at("d_model").get<Index>();
  mc.n_heads = m.at("n_heads").get<Index>();
  mc.vocab_size = m.at("vocab_size").get<Index>();
  mc.max_seq_len = m.at("max_seq_len").get<Index>();
  mc.rope_base = m.at("rope_base").get<double>();
  mc.rms_eps = m.at("rms_eps").get<double>();
  mc.init_std = m.at("init_std").get<double>();
  mc.tied_embeddings = m.at("tied_embeddings").get<bool>();
  mc.validate();
  return mc;
}

TrainConfig train_config_from(const json& cfg, const std::string& section) {
  const json& t = cfg.at(section);
  TrainConfig tc;
  tc.batch_size = t.at("batch_size").get<Index>();
  tc.seq_len = t.at("seq_len").get<Index>();
  tc.schedule.warmup_steps = t.at("warmup_steps").get<Index>();
  tc.schedule.hold_steps = t.at("hold_steps").get<Index>();
  tc.schedule.decay_steps = t.at("decay_steps").get<Index>();
  tc.schedule.max_lr = t.at("max_lr").get<double>();
  tc.weight_decay = t.at("weight_decay").get<double>();
  tc.beta1 = t.at("beta1").get<double>();
  tc.beta2 = t.at("beta2").get<double>();
  tc.adam_eps = t.at("adam_eps").get<double>();
  return tc;
}

GenerationPlan plan_from(const json& cfg) {
  GenerationPlan p;
  p.n_generations = cfg.at("plan").at("n_generations").get<Index>();
  p.prune_fraction = cfg.at("plan").at("prune_fraction").get<double>();
  TrainConfig outer = train_config_from(cfg, "outer");
  p.iters_per_generation = outer.schedule.total_steps();
  p.validate();
  return p;
}

std::filesystem::path data_dir(const json& cfg) {
  return std::filesystem::path(cfg.at("data").at("dir").get<std::string>());
}

std::filesystem::path out_dir(const json& cfg) {
  return std::filesystem::path(cfg.at("out_dir").get<std::string>());
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
}

void append_jsonl(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << j.dump() << "\n";
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<double>& losses,
                     const std::vector<double>& lrs, const std::string& config_hash,
                     std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "# config_hash=" << config_hash << " seed=" << seed << "\n";
  out << "step,lr,loss\n";
  out.precision(10);
  for (std::size_t i = 0; i < losses.size(); ++i)
    out << i << ',' << lrs[i] << ',' << losses[i] << "\n";
}

std::string build_id() { return CONLM_BUILD_ID; }

}  // namespace conlm::cli
