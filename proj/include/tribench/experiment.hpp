#pragma once

#include "tribench/ppo.hpp"

#include "json.hpp"

#include <filesystem>
#include <vector>

namespace tribench {

struct ExperimentSpec {
  std::vector<InputConfig> variants;
  EnvConfig env;
  PolicyConfig policy;
  TrainCfg train;
  double scale = 1.0;
  std::uint64_t master_seed = 0;
};

struct PlannedRun {
  Variant variant = Variant::Original;
  int run = 0;
  long total_steps = 0;
  std::uint64_t seed = 0;
  std::filesystem::path dir;  // relative to the experiment directory
};

struct PlannedEvaluation {
  Variant variant = Variant::Original;
  int run = 0;
  int checkpoint = 0;
  int episodes = 0;
};

struct ExperimentPlan {
  std::vector<PlannedRun> runs;
  std::vector<PlannedEvaluation> evaluations;
  std::uint64_t eval_master = 0;
};

// Pure enumeration of the protocol; no training.
ExperimentPlan plan_experiment(const ExperimentSpec& spec);
nlohmann::json plan_to_json(const ExperimentPlan& plan);

struct RunSummary {
  int run = 0;
  int best_checkpoint = 0;
  double best_success = 0.0;
  double best_steps = 0.0;
  bool best_steps_flagged = false;
  double loss_at_half = 0.0;    // LOWESS-smoothed loss at 50% of the run's wall-clock
  double reward_at_half = 0.0;  // same for mean reward
};

struct VariantSummary {
  Variant variant = Variant::Original;
  std::vector<RunSummary> runs;
  double median_best_success = 0.0;
  double median_best_steps = 0.0;
  double median_loss_at_half = 0.0;
};

struct ExperimentReport {
  ExperimentPlan plan;
  std::vector<VariantSummary> variants;
};

// Trains and evaluates every planned run under out_dir/<variant>/run_NN, then
// writes report.json. Missing artifacts are reported before any training.
ExperimentReport run_experiment(const ExperimentSpec& spec, const std::filesystem::path& out_dir,
                                bool virtual_clock = false);

// Smoothed curve value at a fraction of the final wall-clock time.
double smoothed_at_fraction(const std::vector<double>& t, const std::vector<double>& y,
                            double fraction, double lowess_frac = 0.3);

RunSummary summarize_run(int run, const std::vector<TrainLogRow>& log,
                         const std::vector<EvalResult>& evals);
VariantSummary summarize_variant(Variant v, std::vector<RunSummary> runs);
double median(std::vector<double> v);

std::vector<EvalResult> read_eval_csv(const std::filesystem::path& path);

nlohmann::json report_to_json(const ExperimentReport& r, const ExperimentSpec& spec);

}  // namespace tribench
