// SPDX-License-Identifier: Apache-2.0
//
// conlm: generational connectome training and evaluation for tiny byte-level
// GPT models. Subcommands wire the library into the full pipeline: data
// preparation, the generational outer loop, developmental training from a
// connectome (or its controls), and the measurement suite.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "conlm/connectome.hpp"
#include "conlm/corpus.hpp"
#include "conlm/eval.hpp"
#include "conlm/model.hpp"
#include "conlm/training.hpp"
#include "experiment.hpp"

namespace fs = std::filesystem;
using conlm::cli::json;

namespace conlm {

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

json resolve_config(const CommonOpts& c) {
  json cfg = cli::load_config(c.config_path);
  cli::apply_overrides(cfg, c.overrides);
  // Cross-field sanity shared by every command.
  if (cfg.at("seeds").empty()) throw ConfigError("config: seeds must be nonempty");
  if (cli::data_dir(cfg) == cli::out_dir(cfg))
    throw ConfigError("config: data.dir and out_dir must be distinct paths");
  return cfg;
}

std::vector<std::uint64_t> config_seeds(const json& cfg) {
  return cfg.at("seeds").get<std::vector<std::uint64_t>>();
}

json manifest_base(const json& cfg, const std::string& command, std::uint64_t seed) {
  return json{{"command", command},
              {"config", cfg},
              {"config_hash", cli::config_hash(cfg)},
              {"seed", seed},
              {"build_id", cli::build_id()}};
}

void write_eval_series_csv(const fs::path& path,
                           const std::vector<std::pair<Index, double>>& series,
                           const std::string& hash, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "# config_hash=" << hash << " seed=" << seed << "\n";
  out << "step,val_loss\n";
  out.precision(10);
  for (auto& [step, v] : series) out << step << ',' << v << "\n";
}

// ---------------------------------------------------------------------------

int cmd_prepare_data(const CommonOpts& common) {
  json cfg = resolve_config(common);
  const json& d = cfg.at("data");
  const Index s = d.at("s_tokens").get<Index>();
  const Index l = d.at("l_tokens").get<Index>();
  const Index val = d.at("val_tokens").get<Index>();
  const std::uint64_t seed = d.at("seed").get<std::uint64_t>();
  const fs::path dir = cli::data_dir(cfg);
  fs::create_directories(dir);

  std::string text;
  const std::string source = d.at("source").get<std::string>();
  if (source == "synthetic") {
    text = synthetic_text(static_cast<std::size_t>(s + l + val), seed);
  } else if (source == "text") {
    std::ifstream in(d.at("text_path").get<std::string>(), std::ios::binary);
    if (!in) throw IoError("cannot open text file '" + d.at("text_path").get<std::string>() + "'");
    text.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  } else {
    throw ConfigError("data.source must be 'synthetic' or 'text'");
  }

  TokenizedCorpus all;
  all.ids = tokenize(text).first;
  all.provenance = "raw";
  CorpusSplits splits = split_corpus(all, {s, l, val});
  save_corpus(splits.s, (dir / "S.bin").string());
  save_corpus(splits.l, (dir / "L.bin").string());
  save_corpus(splits.validation, (dir / "validation.bin").string());

  json manifest = manifest_base(cfg, "prepare-data", seed);
  manifest["tokenizer"] = {{"scheme", "byte-level"},
                           {"vocab_size", kByteVocabSize},
                           {"bos_id", kBosId},
                           {"eos_id", kEosId},
                           {"word_alignment", "whitespace-delimited words; leading separator "
                                              "attaches to the following word"}};
  manifest["splits"] = {{"S", s}, {"L", l}, {"validation", val}};
  manifest["outputs"] = {{"S.bin", cli::bytes_hash_hex((dir / "S.bin").string())},
                         {"L.bin", cli::bytes_hash_hex((dir / "L.bin").string())},
                         {"validation.bin", cli::bytes_hash_hex((dir / "validation.bin").string())}};
  cli::write_json(manifest, dir / "data_manifest.json");
  std::cout << "prepared " << (s + l + val) << " tokens under " << dir << "\n";
  return 0;
}

int cmd_evolve(const CommonOpts& common, std::optional<std::uint64_t> seed_opt) {
  json cfg = resolve_config(common);
  const ModelConfig model_cfg = cli::model_config_from(cfg);
  TrainConfig outer = cli::train_config_from(cfg, "outer");
  const GenerationPlan plan = cli::plan_from(cfg);
  const std::string hash = cli::config_hash(cfg);

  TokenizedCorpus corpus_l = load_corpus((cli::data_dir(cfg) / "L.bin").string(), "L");

  std::vector<std::uint64_t> seeds =
      seed_opt ? std::vector<std::uint64_t>{*seed_opt} : config_seeds(cfg);
  for (std::uint64_t seed : seeds) {
    const fs::path run_dir = cli::out_dir(cfg) / ("evolve-seed" + std::to_string(seed));
    fs::create_directories(run_dir);

    EvolveResult res = evolve(plan, corpus_l, outer, model_cfg, seed);
    const fs::path conn_path = run_dir / "connectome.bin";
    save_connectome(res.connectome, conn_path.string());

    json manifest = manifest_base(cfg, "evolve", seed);
    manifest["label"] = "evolve";
    manifest["tensor_names"] = res.tensor_names;
    json alive = json::array();
    for (const auto& gen : res.alive_per_generation) {
      Index total = 0;
      for (Index a : gen) total += a;
      alive.push_back({{"per_tensor", gen}, {"total", total}});
    }
    manifest["alive_per_generation"] = alive;
    manifest["generation"] = res.connectome.generation;
    manifest["final_density"] = res.connectome.global_density();
    json traces = json::array();
    for (std::size_t g = 0; g < res.losses_per_generation.size(); ++g) {
      const fs::path trace = run_dir / ("gen" + std::to_string(g) + "_trace.csv");
      std::vector<double> lrs(res.losses_per_generation[g].size());
      for (std::size_t i = 0; i < lrs.size(); ++i)
        lrs[i] = lr_at(outer.schedule, static_cast<Index>(i));
      cli::write_trace_csv(trace, res.losses_per_generation[g], lrs, hash, seed);
      traces.push_back(trace.filename().string());
      manifest["metrics"]["final_train_loss_gen" + std::to_string(g)] =
          res.losses_per_generation[g].back();
    }
    manifest["traces"] = traces;
    manifest["outputs"] = {{"connectome.bin", cli::bytes_hash_hex(conn_path.string())}};
    cli::write_json(manifest, run_dir / "manifest.json");
    std::cout << "evolve seed " << seed << ": density " << res.connectome.global_density()
              << " -> " << conn_path << "\n";
  }
  return 0;
}

int cmd_develop(const CommonOpts& common, const std::string& source_name, std::uint64_t seed,
                std::string connectome_path) {
  json cfg = resolve_config(common);
  const ModelConfig model_cfg = cli::model_config_from(cfg);
  TrainConfig inner = cli::train_config_from(cfg, "inner");
  const std::string hash = cli::config_hash(cfg);

  InitSource source;
  if (source_name == "connectome")
    source = InitSource::kConnectome;
  else if (source_name == "random")
    source = InitSource::kRandomConnectome;
  else if (source_name == "dense")
    source = InitSource::kDense;
  else
    throw ConfigError("develop: source must be connectome|random|dense");

  std::optional<Connectome> base;
  if (source != InitSource::kDense) {
    if (connectome_path.empty())
      connectome_path =
          (cli::out_dir(cfg) / ("evolve-seed" + std::to_string(seed)) / "connectome.bin").string();
    base = load_connectome(connectome_path);
  }

  TokenizedCorpus corpus_s = load_corpus((cli::data_dir(cfg) / "S.bin").string(), "S");
  TokenizedCorpus corpus_val =
      load_corpus((cli::data_dir(cfg) / "validation.bin").string(), "validation");

  const Index eval_every = cfg.at("eval").at("every").get<Index>();
  const Index eval_seq = cfg.at("eval").at("seq_len").get<Index>();
  const Index eval_batches = cfg.at("eval").at("max_batches").get<Index>();

  std::vector<std::pair<Index, double>> val_series;
  const Index total_steps = inner.schedule.total_steps();
  StepCallback on_step = [&](Index step, const TensorSet<float>& params, double) {
    if ((step + 1) % eval_every == 0 || step + 1 == total_steps) {
      val_series.emplace_back(step + 1, validation_loss(params, corpus_val, eval_seq, eval_batches));
    }
  };

  DevelopResult res =
      develop(source, base ? &*base : nullptr, corpus_s, inner, model_cfg, seed, on_step);

  const fs::path run_dir =
      cli::out_dir(cfg) / ("develop-" + res.label + "-seed" + std::to_string(seed));
  fs::create_directories(run_dir);
  const fs::path ckpt = run_dir / "checkpoint.bin";
  save_checkpoint(res.params, ckpt.string());
  cli::write_trace_csv(run_dir / "trace.csv", res.losses, res.lrs, hash, seed);
  write_eval_series_csv(run_dir / "eval_loss.csv", val_series, hash, seed);

  json manifest = manifest_base(cfg, "develop", seed);
  manifest["label"] = res.label;
  manifest["source"] = source_name;
  if (source != InitSource::kDense) {
    manifest["connectome"] = connectome_path;
    manifest["connectome_hash"] = cli::bytes_hash_hex(connectome_path);
  }
  if (res.mask) manifest["mask_density"] = res.mask->global_density();
  manifest["metrics"] = {{"final_train_loss", res.losses.back()},
                         {"final_val_loss", val_series.empty() ? json() : json(val_series.back().second)}};
  manifest["outputs"] = {{"checkpoint.bin", cli::bytes_hash_hex(ckpt.string())}};
  cli::write_json(manifest, run_dir / "manifest.json");
  std::cout << res.label << " seed " << seed << ": final train loss " << res.losses.back();
  if (!val_series.empty()) std::cout << ", final val loss " << val_series.back().second;
  std::cout << " -> " << run_dir << "\n";
  return 0;
}

int cmd_eval_loss(const CommonOpts& common, const std::string& checkpoint,
                  const std::string& corpus_path, std::string label, Index seq_len,
                  Index max_batches, const std::string& out_path) {
  json cfg = resolve_config(common);
  TensorSet<float> params = load_checkpoint(checkpoint);
  TokenizedCorpus corpus = load_corpus(corpus_path, label);
  const double v = validation_loss(params, corpus, seq_len, max_batches);
  json rec = {{"analysis", "validation_loss"}, {"config_hash", cli::config_hash(cfg)},
              {"checkpoint", checkpoint},      {"corpus", corpus_path},
              {"provenance", corpus.provenance}, {"seq_len", seq_len},
              {"max_batches", max_batches},    {"units", "nats"},
              {"loss", v}};
  if (out_path.empty())
    std::cout << rec.dump() << "\n";
  else
    cli::append_jsonl(rec, out_path);
  return 0;
}

int cmd_eval_mc(const CommonOpts& common, const std::string& checkpoint,
                const std::string& tasks_path, bool normalize, const std::string& out_path) {
  json cfg = resolve_config(common);
  TensorSet<float> params = load_checkpoint(checkpoint);
  std::ifstream in(tasks_path);
  if (!in) throw IoError("cannot open tasks '" + tasks_path + "'");
  std::string line;
  Index n = 0, n_correct = 0, n_scored = 0;
  json results = json::array();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json task = json::parse(line);
    McResult r = multiple_choice(params, task.at("context").get<std::string>(),
                                 task.at("options").get<std::vector<std::string>>(), normalize);
    json rec = {{"chosen", r.chosen}, {"scores", r.scores}};
    if (task.contains("answer")) {
      const bool ok = r.chosen == task.at("answer").get<int>();
      rec["correct"] = ok;
      n_correct += ok ? 1 : 0;
      ++n_scored;
    }
    results.push_back(rec);
    ++n;
  }
  json summary = {{"analysis", "multiple_choice"},
                  {"config_hash", cli::config_hash(cfg)},
                  {"checkpoint", checkpoint},
                  {"tasks", tasks_path},
                  {"length_normalize", normalize},
                  {"n_tasks", n},
                  {"n_scored", n_scored},
                  {"accuracy", n_scored ? static_cast<double>(n_correct) / n_scored : 0.0},
                  {"results", results}};
  if (out_path.empty())
    std::cout << summary.dump() << "\n";
  else
    cli::append_jsonl(summary, out_path);
  return 0;
}

int cmd_surprisal(const CommonOpts& common, const std::string& checkpoint,
                  const std::string& text_path, const std::string& doc_id,
                  const std::string& out_path) {
  json cfg = resolve_config(common);
  TensorSet<float> params = load_checkpoint(checkpoint);
  std::ifstream in(text_path, std::ios::binary);
  if (!in) throw IoError("cannot open text '" + text_path + "'");
  std::string text(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
  SurprisalOptions opts;
  opts.doc_id = doc_id.empty() ? fs::path(text_path).stem().string() : doc_id;
  auto records = word_surprisals(params, text, opts);
  const std::string hash = cli::config_hash(cfg);
  for (const auto& r : records) {
    json rec = {{"analysis", "surprisal"}, {"config_hash", hash},
                {"doc_id", r.doc_id},      {"word_index", r.word_index},
                {"word", r.word},          {"surprisal_bits", r.surprisal_bits}};
    if (out_path.empty())
      std::cout << rec.dump() << "\n";
    else
      cli::append_jsonl(rec, out_path);
  }
  return 0;
}

int cmd_align_behavior(const CommonOpts& common, const std::string& checkpoint,
                       const std::string& rt_path, double min_rt, double max_rt, bool perplexity,
                       const std::string& out_path) {
  json cfg = resolve_config(common);
  TensorSet<float> params = load_checkpoint(checkpoint);
  ReadingTimeDataset data = load_reading_times_csv(rt_path);
  BehavioralOptions opts;
  opts.min_rt_ms = min_rt;
  opts.max_rt_ms = max_rt;
  opts.perplexity_scale = perplexity;
  BehavioralResult res = behavioral_alignment(params, data, opts);
  json rec = {{"analysis", "behavioral_alignment"},
              {"config_hash", cli::config_hash(cfg)},
              {"checkpoint", checkpoint},
              {"reading_times", rt_path},
              {"surprisal_scale", perplexity ? "perplexity" : "bits"},
              {"rt_filter_ms", {{"min", min_rt}, {"max", max_rt}}},
              {"n_words", res.n_words},
              {"r", res.r}};
  if (out_path.empty())
    std::cout << rec.dump() << "\n";
  else
    cli::append_jsonl(rec, out_path);
  return 0;
}

std::vector<double> parse_lambda_grid(const std::string& spec) {
  if (spec.empty()) return default_lambda_grid();
  std::vector<double> grid;
  std::stringstream ss(spec);
  std::string tok;
  while (std::getline(ss, tok, ',')) grid.push_back(std::stod(tok));
  return grid;
}

int cmd_align_brain(const CommonOpts& common, const std::string& checkpoint,
                    const std::string& stimuli_path, const std::string& responses_path,
                    std::string sidecar_path, Index layer, bool all_layers, int folds,
                    const std::string& lambda_spec, bool mean_pool, const std::string& units_path,
                    const std::string& ceiling_path, const std::string& out_path) {
  json cfg = resolve_config(common);
  TensorSet<float> params = load_checkpoint(checkpoint);
  auto stimuli = load_stimuli_csv(stimuli_path);
  if (sidecar_path.empty()) sidecar_path = responses_path + ".json";
  Eigen::MatrixXd responses = load_response_matrix(responses_path, sidecar_path);
  if (responses.rows() != static_cast<Index>(stimuli.size()))
    throw ShapeError("align-brain: response rows do not match stimulus count");
  const std::vector<double> grid = parse_lambda_grid(lambda_spec);
  const std::string hash = cli::config_hash(cfg);

  // Optional per-target noise ceiling (JSON array); accepted as input only.
  std::vector<double> ceiling;
  if (!ceiling_path.empty()) {
    std::ifstream cin_(ceiling_path);
    if (!cin_) throw IoError("cannot open noise ceiling '" + ceiling_path + "'");
    ceiling = json::parse(cin_).get<std::vector<double>>();
    if (ceiling.size() != static_cast<std::size_t>(responses.cols()))
      throw ShapeError("align-brain: noise ceiling length must match target count");
  }

  auto emit = [&](const AlignmentResult& res) {
    json rec = {{"analysis", "encoding_alignment"},
                {"config_hash", hash},
                {"checkpoint", checkpoint},
                {"stimuli", stimuli_path},
                {"responses", responses_path},
                {"scope", res.scope},
                {"k_folds", res.n_folds},
                {"lambda_per_fold", res.lambda_per_fold},
                {"mean_pool", mean_pool},
                {"mean_r", res.mean_r},
                {"per_target_r", std::vector<double>(res.per_target_r.data(),
                                                     res.per_target_r.data() + res.per_target_r.size())}};
    if (!ceiling.empty()) {
      double ceiling_mean = 0.0;
      for (double v : ceiling) ceiling_mean += v;
      ceiling_mean /= static_cast<double>(ceiling.size());
      rec["noise_ceiling_mean"] = ceiling_mean;
      rec["fraction_of_ceiling"] = ceiling_mean != 0.0 ? res.mean_r / ceiling_mean : 0.0;
    }
    if (out_path.empty())
      std::cout << rec.dump() << "\n";
    else
      cli::append_jsonl(rec, out_path);
  };

  if (!units_path.empty()) {
    std::ifstream uin(units_path);
    if (!uin) throw IoError("cannot open units '" + units_path + "'");
    json udoc = json::parse(uin);
    std::vector<UnitId> units;
    for (const auto& u : udoc.at("units"))
      units.push_back({u.at("layer").get<Index>(), u.at("channel").get<Index>()});
    emit(localized_alignment(params, units, stimuli, responses, folds, grid));
    return 0;
  }

  std::vector<Index> layers;
  if (all_layers)
    for (Index l = 0; l <= params.config.n_layers; ++l) layers.push_back(l);
  else
    layers.push_back(layer);
  for (Index l : layers) {
    Eigen::MatrixXd feats = extract_features(params, stimuli, l, mean_pool).cast<double>();
    emit(encoding_alignment(feats, responses, folds, grid, "layer:" + std::to_string(l)));
  }
  return 0;
}

int cmd_localize(const CommonOpts& common, const std::string& checkpoint,
                 const std::string& sentences_path, std::string nonwords_path,
                 std::uint64_t shuffle_seed, double top_percent, const std::string& out_path) {
  json cfg = resolve_config(common);
  TensorSet<float> params = load_checkpoint(checkpoint);
  auto sentences = load_stimuli_csv(sentences_path);
  std::vector<std::string> nonwords;
  if (!nonwords_path.empty()) {
    nonwords = load_stimuli_csv(nonwords_path);
  } else {
    nonwords = make_nonword_stimuli(sentences, shuffle_seed);
  }
  auto units = localize_units(params, sentences, nonwords, top_percent);
  json ulist = json::array();
  for (const auto& u : units) ulist.push_back({{"layer", u.layer}, {"channel", u.channel}});
  json rec = {{"analysis", "localize_units"},
              {"config_hash", cli::config_hash(cfg)},
              {"checkpoint", checkpoint},
              {"sentences", sentences_path},
              {"nonwords", nonwords_path.empty() ? ("shuffled(seed=" + std::to_string(shuffle_seed) + ")")
                                                 : nonwords_path},
              {"top_percent", top_percent},
              {"n_units", params.config.n_layers * params.config.d_model},
              {"count", units.size()},
              {"units", ulist}};
  if (out_path.empty())
    std::cout << rec.dump() << "\n";
  else
    cli::write_json(rec, out_path);
  return 0;
}

int cmd_connectome_stats(const std::string& connectome_path, const std::string& out_path) {
  Connectome c = load_connectome(connectome_path);
  ConnectomeStats s = stats(c);
  json per_tensor = json::array();
  for (const auto& [name, d] : s.per_tensor)
    per_tensor.push_back(
        {{"name", name}, {"p_zero", d.p_zero}, {"p_minus", d.p_minus}, {"p_plus", d.p_plus}});
  json rec = {{"analysis", "connectome_stats"},
              {"connectome", connectome_path},
              {"generation", c.generation},
              {"init_scale", c.init_scale},
              {"n_weights", c.n_weights()},
              {"n_alive", c.n_alive()},
              {"global_density", c.global_density()},
              {"global", {{"p_zero", s.global.p_zero},
                          {"p_minus", s.global.p_minus},
                          {"p_plus", s.global.p_plus}}},
              {"entropy_bits_per_weight", s.entropy_bits_per_weight},
              {"estimated_compressed_bytes", s.estimated_compressed_bytes},
              {"per_tensor", per_tensor}};
  if (out_path.empty())
    std::cout << rec.dump(2) << "\n";
  else
    cli::write_json(rec, out_path);
  return 0;
}

struct SeriesPoint {
  double sum = 0.0, sum_sq = 0.0;
  int n = 0;
};

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir_path) {
  if (run_dirs.empty()) throw ConfigError("report: need at least one run directory");
  struct Run {
    std::string label;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::map<std::string, double> metrics;
    std::vector<std::pair<Index, double>> series;
  };
  std::vector<Run> runs;
  std::vector<std::string> missing;
  for (const auto& dir : run_dirs) {
    const fs::path mpath = fs::path(dir) / "manifest.json";
    std::ifstream in(mpath);
    if (!in) {
      missing.push_back(mpath.string());
      continue;
    }
    json m = json::parse(in);
    Run r;
    r.label = m.value("label", "unlabeled");
    r.seed = m.value("seed", 0ull);
    r.config_hash = m.value("config_hash", "");
    if (m.contains("metrics"))
      for (auto it = m["metrics"].begin(); it != m["metrics"].end(); ++it)
        if (it.value().is_number()) r.metrics[it.key()] = it.value().get<double>();
    const fs::path spath = fs::path(dir) / "eval_loss.csv";
    std::ifstream sin(spath);
    if (sin) {
      std::string line;
      while (std::getline(sin, line)) {
        if (line.empty() || line[0] == '#' || line[0] == 's') continue;
        auto comma = line.find(',');
        r.series.emplace_back(std::stoll(line.substr(0, comma)), std::stod(line.substr(comma + 1)));
      }
    }
    runs.push_back(std::move(r));
  }
  if (!missing.empty()) {
    std::string msg = "report: missing metrics files:";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }
  std::sort(runs.begin(), runs.end(), [](const Run& a, const Run& b) {
    if (a.label != b.label) return a.label < b.label;
    return a.seed < b.seed;
  });

  // (label, metric) -> per-seed values; (label, step) -> series stats.
  std::map<std::string, std::map<std::string, std::vector<double>>> table;
  std::map<std::string, std::map<Index, SeriesPoint>> curves;
  std::map<std::string, std::vector<std::string>> hashes;
  for (const auto& r : runs) {
    hashes[r.label].push_back(r.config_hash);
    for (const auto& [k, v] : r.metrics) table[r.label][k].push_back(v);
    for (const auto& [step, v] : r.series) {
      auto& pt = curves[r.label][step];
      pt.sum += v;
      pt.sum_sq += v * v;
      pt.n += 1;
    }
  }

  auto mean_se = [](const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var = xs.size() > 1 ? var / (n - 1.0) : 0.0;  // sample variance
    return std::pair<double, double>(mean, std::sqrt(var) / std::sqrt(n));
  };

  const fs::path out_dir(out_dir_path);
  fs::create_directories(out_dir);

  json report = {{"analysis", "report"}, {"runs", json::array()}};
  for (const auto& r : runs)
    report["runs"].push_back(
        {{"label", r.label}, {"seed", r.seed}, {"config_hash", r.config_hash}});

  std::ofstream summary(out_dir / "summary.csv");
  summary << "label,metric,mean,se,n\n";
  summary.precision(10);
  for (const auto& [label, metrics] : table) {
    for (const auto& [metric, values] : metrics) {
      auto [mean, se] = mean_se(values);
      summary << label << ',' << metric << ',' << mean << ',' << se << ',' << values.size() << "\n";
      report["summary"][label][metric] = {{"mean", mean}, {"se", se}, {"n", values.size()},
                                          {"values", values}};
    }
  }

  std::ofstream curve_csv(out_dir / "curves.csv");
  curve_csv << "label,step,mean,se,n\n";
  curve_csv.precision(10);
  for (const auto& [label, steps] : curves) {
    for (const auto& [step, pt] : steps) {
      const double n = static_cast<double>(pt.n);
      const double mean = pt.sum / n;
      const double var = pt.n > 1 ? std::max(0.0, (pt.sum_sq - n * mean * mean) / (n - 1.0)) : 0.0;
      const double se = std::sqrt(var) / std::sqrt(n);
      curve_csv << label << ',' << step << ',' << mean << ',' << se << ',' << pt.n << "\n";
      report["curves"][label].push_back(
          {{"step", step}, {"mean", mean}, {"se", se}, {"n", pt.n}});
    }
  }
  cli::write_json(report, out_dir / "report.json");
  std::cout << "report over " << runs.size() << " runs -> " << out_dir << "\n";
  return 0;
}

const char* error_kind(const std::exception& e) {
  if (dynamic_cast<const ZeroVarianceError*>(&e)) return "zero_variance";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const ShapeError*>(&e)) return "shape";
  if (dynamic_cast<const IoError*>(&e)) return "io";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  return "error";
}

}  // namespace

}  // namespace conlm

int main(int argc, char** argv) {
  using namespace conlm;
  CLI::App app{"generational connectome training and evaluation for tiny byte-level GPT models"};
  app.require_subcommand(1);

  CommonOpts common;
  int rc = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config_path, "experiment config JSON (merged over defaults)");
    sub->add_option("--set", common.overrides, "override config fields, dotted.path=value")
        ->take_all();
  };

  // prepare-data
  {
    auto* sub = app.add_subcommand("prepare-data", "tokenize a corpus and write the S/L/validation splits");
    add_common(sub);
    sub->callback([&] { rc = cmd_prepare_data(common); });
  }
  // evolve
  {
    auto* sub = app.add_subcommand("evolve", "run the generational pruning loop on L");
    add_common(sub);
    static std::int64_t seed = -1;
    sub->add_option("--seed", seed, "single seed (default: every seed in the config)");
    sub->callback([&] {
      rc = cmd_evolve(common, seed >= 0 ? std::optional<std::uint64_t>(seed) : std::nullopt);
    });
  }
  // develop
  {
    auto* sub = app.add_subcommand("develop", "train on S from a connectome, random control, or dense init");
    add_common(sub);
    static std::string source = "connectome", conn_path;
    static std::uint64_t seed = 0;
    sub->add_option("--source", source, "connectome|random|dense")->required();
    sub->add_option("--seed", seed, "model seed")->required();
    sub->add_option("--connectome", conn_path, "connectome file (default: evolve output for this seed)");
    sub->callback([&] { rc = cmd_develop(common, source, seed, conn_path); });
  }
  // eval-loss
  {
    auto* sub = app.add_subcommand("eval-loss", "validation loss of a checkpoint on a corpus");
    add_common(sub);
    static std::string ckpt, corpus, label, out;
    static Index seq_len = 64, max_batches = 0;
    sub->add_option("--checkpoint", ckpt)->required();
    sub->add_option("--corpus", corpus)->required();
    sub->add_option("--label", label, "provenance override (defaults to the file stem)");
    sub->add_option("--seq-len", seq_len);
    sub->add_option("--max-batches", max_batches, "0 = every full window");
    sub->add_option("--out", out, "JSONL output path (default: stdout)");
    sub->callback([&] { rc = cmd_eval_loss(common, ckpt, corpus, label, seq_len, max_batches, out); });
  }
  // eval-mc
  {
    auto* sub = app.add_subcommand("eval-mc", "multiple-choice scoring over a JSONL task file");
    add_common(sub);
    static std::string ckpt, tasks, out;
    static bool normalize = false;
    sub->add_option("--checkpoint", ckpt)->required();
    sub->add_option("--tasks", tasks, "JSONL: {context, options, answer?}")->required();
    sub->add_flag("--normalize", normalize, "length-normalize option scores");
    sub->add_option("--out", out);
    sub->callback([&] { rc = cmd_eval_mc(common, ckpt, tasks, normalize, out); });
  }
  // surprisal
  {
    auto* sub = app.add_subcommand("surprisal", "per-word surprisal of a text file");
    add_common(sub);
    static std::string ckpt, text, doc_id, out;
    sub->add_option("--checkpoint", ckpt)->required();
    sub->add_option("--text", text)->required();
    sub->add_option("--doc-id", doc_id);
    sub->add_option("--out", out);
    sub->callback([&] { rc = cmd_surprisal(common, ckpt, text, doc_id, out); });
  }
  // align-behavior
  {
    auto* sub = app.add_subcommand("align-behavior", "correlate per-word surprisal with reading times");
    add_common(sub);
    static std::string ckpt, rt, out;
    static double min_rt = 0.0, max_rt = std::numeric_limits<double>::infinity();
    static bool perplexity = false;
    sub->add_option("--checkpoint", ckpt)->required();
    sub->add_option("--rt", rt, "CSV: story_id,word_index,word,rt_ms")->required();
    sub->add_option("--min-rt", min_rt, "exclude words read faster than this (ms)");
    sub->add_option("--max-rt", max_rt, "exclude words read slower than this (ms)");
    sub->add_flag("--perplexity", perplexity, "correlate 2^bits instead of bits");
    sub->add_option("--out", out);
    sub->callback([&] { rc = cmd_align_behavior(common, ckpt, rt, min_rt, max_rt, perplexity, out); });
  }
  // align-brain
  {
    auto* sub = app.add_subcommand("align-brain", "ridge encoding model from layer features to responses");
    add_common(sub);
    static std::string ckpt, stimuli, responses, sidecar, lambdas, units, ceiling, out;
    static Index layer = 0;
    static bool all_layers = false, mean_pool = false;
    static int folds = 5;
    sub->add_option("--checkpoint", ckpt)->required();
    sub->add_option("--stimuli", stimuli, "CSV with a 'sentence' column")->required();
    sub->add_option("--responses", responses, "raw float32 matrix")->required();
    sub->add_option("--sidecar", sidecar, "JSON sidecar (default: <responses>.json)");
    sub->add_option("--layer", layer, "residual stream index, 0..n_layers");
    sub->add_flag("--all-layers", all_layers);
    sub->add_option("--folds", folds);
    sub->add_option("--lambda-grid", lambdas, "comma-separated (default 1e-3..1e5 decades)");
    sub->add_flag("--mean-pool", mean_pool);
    sub->add_option("--units", units, "units JSON from localize: restrict features to these units");
    sub->add_option("--noise-ceiling", ceiling, "JSON array of per-target ceilings (reported, not estimated)");
    sub->add_option("--out", out);
    sub->callback([&] {
      rc = cmd_align_brain(common, ckpt, stimuli, responses, sidecar, layer, all_layers, folds,
                           lambdas, mean_pool, units, ceiling, out);
    });
  }
  // localize
  {
    auto* sub = app.add_subcommand("localize", "rank language-selective units (sentences vs non-words)");
    add_common(sub);
    static std::string ckpt, sentences, nonwords, out;
    static double top_percent = 1.0;
    static std::uint64_t shuffle_seed = 0;
    sub->add_option("--checkpoint", ckpt)->required();
    sub->add_option("--sentences", sentences)->required();
    sub->add_option("--nonwords", nonwords, "non-word stimuli CSV (default: shuffled sentences)");
    sub->add_option("--shuffle-seed", shuffle_seed, "seed for the generated non-words");
    sub->add_option("--top-percent", top_percent);
    sub->add_option("--out", out, "units JSON output");
    sub->callback([&] {
      rc = cmd_localize(common, ckpt, sentences, nonwords, shuffle_seed, top_percent, out);
    });
  }
  // connectome-stats
  {
    auto* sub = app.add_subcommand("connectome-stats", "density, ternary distribution, entropy, size estimate");
    static std::string conn, out;
    sub->add_option("--connectome", conn)->required();
    sub->add_option("--out", out);
    sub->callback([&] { rc = cmd_connectome_stats(conn, out); });
  }
  // report
  {
    auto* sub = app.add_subcommand("report", "aggregate run directories into mean +- SE tables");
    static std::vector<std::string> dirs;
    static std::string out = "report";
    sub->add_option("--runs", dirs, "run directories")->required()->take_all();
    sub->add_option("--out", out, "output directory");
    sub->callback([&] { rc = cmd_report(dirs, out); });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    nlohmann::json err = {{"error", {{"type", "usage"}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return e.get_exit_code();
  } catch (const std::exception& e) {
    nlohmann::json err = {{"error", {{"type", error_kind(e)}, {"message", e.what()}}}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return rc;
}
