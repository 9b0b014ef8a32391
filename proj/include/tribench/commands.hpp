#pragma once

#include "tribench/config.hpp"
#include "tribench/experiment.hpp"
#include "tribench/metrics.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tribench {

struct CommandContext {
  WorkbenchConfig cfg;
  std::vector<std::string> argv;
  bool dry_run = false;
  bool force = false;
  std::ostream* log = nullptr;  // progress messages; null for silence
};

struct DatasetResult {
  int source = 0;
  int target = 0;
};

// source/ and target/ PGM frames plus labels.csv (file,bucket) in each.
DatasetResult cmd_gen_dataset(const CommandContext& ctx, const std::filesystem::path& out_dir);

std::vector<TranslatorCheckpoint> cmd_train_translator(const CommandContext& ctx,
                                                       const std::filesystem::path& data_dir,
                                                       const std::filesystem::path& out_dir);

struct CheckpointScore {
  int epoch = 0;
  std::filesystem::path path;
  InceptionScore is;
  double fid = 0.0;
  int rank_sum = 0;
  bool selected = false;
};

struct SelectionResult {
  std::vector<CheckpointScore> scores;  // checkpoint order
  std::filesystem::path best;            // first of the rank-sum order
};

// Scores every translator checkpoint with IS/FID and writes scores.csv and
// selected.txt (path of the best checkpoint).
SelectionResult cmd_select_translator(const CommandContext& ctx, const std::filesystem::path& data_dir,
                                      const std::filesystem::path& translator_dir,
                                      const std::filesystem::path& out_dir);

// Runs the experiment protocol for the configured variants. The translator
// comes from `translator` when given, else from the config.
ExperimentReport cmd_train_policy(const CommandContext& ctx, const std::filesystem::path& out_dir,
                                  const std::filesystem::path& translator = {});

EvalResult cmd_evaluate(const CommandContext& ctx, const std::filesystem::path& checkpoint,
                        Variant variant, const std::filesystem::path& translator,
                        const std::filesystem::path& out_dir);

// fig7_loss.csv, fig8_reward.csv, fig9_success.csv, fig10_steps.csv and
// summary.csv from an experiment directory.
std::vector<VariantSummary> cmd_report(const CommandContext& ctx,
                                       const std::filesystem::path& experiment_dir,
                                       const std::filesystem::path& out_dir);

// One-shot reward of a frame and a pose file, as a CSV row.
std::string cmd_reward(const CommandContext& ctx, const std::filesystem::path& frame,
                       const std::filesystem::path& pose);

std::filesystem::path read_selection(const std::filesystem::path& selection_dir);
ExperimentSpec experiment_spec(const WorkbenchConfig& cfg, const std::filesystem::path& translator);

}  // namespace tribench
