#pragma once

#include "tribench/cut.hpp"
#include "tribench/embed.hpp"
#include "tribench/ppo.hpp"

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace tribench {

struct DatasetConfig {
  int count_source = 500;
  int count_target = 150;
  int max_pulls = 3;  // random grasp-pulls applied to each sampled state
  StyleParams style{1.4, 0.35, 6.0, 1, 0};

  void validate() const;
};

struct SelectionConfig {
  int feature_dim = 16;
  int feature_epochs = 30;
  int feature_batch = 16;
  double feature_lr = 1e-3;
  int is_splits = 4;
  int top_n = 5;

  void validate() const;
};

struct ExperimentConfig {
  std::vector<Variant> variants{Variant::Original, Variant::Translated, Variant::Embedded};
  std::filesystem::path translator_checkpoint;  // empty: taken from a selection directory
  bool virtual_clock = false;                   // work-based timestamps, reproducible logs

  void validate() const;
};

// Every tunable of the pipeline, grouped by [section] in the config file.
struct WorkbenchConfig {
  std::uint64_t seed = 0;
  double scale = 1.0;
  EnvConfig env;
  DatasetConfig dataset;
  CutConfig cut;
  SelectionConfig selection;
  EmbedConfig embed;
  PolicyConfig policy;
  TrainCfg train;
  ExperimentConfig experiment;

  void validate() const;
};

// `key = value` lines under `[section]` headers, `#` comments. Unknown
// sections or keys and malformed values raise ConfigError naming the line.
WorkbenchConfig parse_config(std::string_view text, const std::string& origin = "<config>");
WorkbenchConfig load_config(const std::filesystem::path& path);

// Canonical text listing every key; parse_config(dump_config(c)) == c.
std::string dump_config(const WorkbenchConfig& cfg);

}  // namespace tribench
