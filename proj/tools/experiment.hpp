// SPDX-License-Identifier: Apache-2.0
//
// Experiment configuration: one JSON document with an include mechanism and
// dotted-path overrides, plus run manifest helpers.
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "conlm/model.hpp"
#include "conlm/training.hpp"

namespace conlm::cli {

using nlohmann::json;

json default_config();

// Loads path (resolving nested "include" keys relative to the including file)
// and deep-merges over the defaults.
json load_config(const std::string& path);

// Applies "dotted.path=value" overrides; values parse as JSON when possible,
// else as strings.
void apply_overrides(json& cfg, const std::vector<std::string>& overrides);

// FNV-1a 64 over the canonical dump; stable across runs.
std::string config_hash(const json& cfg);
std::string bytes_hash_hex(const std::string& path);

ModelConfig model_config_from(const json& cfg);
TrainConfig train_config_from(const json& cfg, const std::string& section);
GenerationPlan plan_from(const json& cfg);

std::filesystem::path data_dir(const json& cfg);
std::filesystem::path out_dir(const json& cfg);

void write_json(const json& j, const std::filesystem::path& path);
void append_jsonl(const json& j, const std::filesystem::path& path);

// step,lr,loss rows behind a comment header carrying provenance.
void write_trace_csv(const std::filesystem::path& path, const std::vector<double>& losses,
                     const std::vector<double>& lrs, const std::string& config_hash,
                     std::uint64_t seed);

std::string build_id();

}  // namespace conlm::cli
