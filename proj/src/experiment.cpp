#include "tribench/experiment.hpp"

#include "tribench/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace tribench {

namespace fs = std::filesystem;

ExperimentPlan plan_experiment(const ExperimentSpec& spec) {
  spec.train.validate();
  if (spec.variants.empty()) throw ConfigError("experiment: no variants");
  if (!(spec.scale > 0.0)) throw ConfigError("experiment: scale must be > 0");
  const SeedStreams streams(spec.master_seed);
  ExperimentPlan plan;
  plan.eval_master = streams.seed("eval");
  const int runs = spec.train.runs(spec.scale);
  for (const InputConfig& ic : spec.variants) {
    for (int r = 0; r < runs; ++r) {
      PlannedRun pr;
      pr.variant = ic.variant;
      pr.run = r;
      pr.total_steps = spec.train.total_steps(ic.variant, spec.scale);
      // Run r of every variant shares its seed, so variants are compared on common randomness.
      pr.seed = streams.seed("policy", static_cast<std::uint64_t>(r));
      char name[16];
      std::snprintf(name, sizeof name, "run_%02d", r);
      pr.dir = fs::path(variant_name(ic.variant)) / name;
      plan.runs.push_back(pr);
      for (int c = 0; c < spec.train.checkpoints_per_run; ++c)
        plan.evaluations.push_back({ic.variant, r, c, spec.train.test_episodes});
    }
  }
  return plan;
}

nlohmann::json plan_to_json(const ExperimentPlan& plan) {
  nlohmann::json runs = nlohmann::json::array();
  for (const PlannedRun& r : plan.runs)
    runs.push_back({{"variant", variant_name(r.variant)},
                    {"run", r.run},
                    {"total_steps", r.total_steps},
                    {"seed", r.seed},
                    {"dir", r.dir.generic_string()}});
  nlohmann::json evals = nlohmann::json::array();
  for (const PlannedEvaluation& e : plan.evaluations)
    evals.push_back({{"variant", variant_name(e.variant)},
                     {"run", e.run},
                     {"checkpoint", e.checkpoint},
                     {"episodes", e.episodes}});
  return {{"runs", runs},
          {"evaluations", evals},
          {"planned_runs", plan.runs.size()},
          {"evaluated_checkpoints", plan.evaluations.size()},
          {"eval_master_seed", plan.eval_master}};
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double smoothed_at_fraction(const std::vector<double>& t, const std::vector<double>& y,
                            double fraction, double lowess_frac) {
  if (t.empty() || t.size() != y.size()) throw ContractError("smoothed_at_fraction: empty or ragged curve");
  if (t.size() == 1) return y[0];
  const std::vector<double> s = lowess(t, y, lowess_frac);
  const double at = fraction * t.back();
  if (at <= t.front()) return s.front();
  const auto hi = static_cast<std::size_t>(std::lower_bound(t.begin(), t.end(), at) - t.begin());
  if (hi >= t.size()) return s.back();
  const std::size_t lo = hi - 1;
  const double w = (at - t[lo]) / (t[hi] - t[lo]);
  return (1.0 - w) * s[lo] + w * s[hi];
}

RunSummary summarize_run(int run, const std::vector<TrainLogRow>& log,
                         const std::vector<EvalResult>& evals) {
  RunSummary s;
  s.run = run;
  s.best_checkpoint = best_checkpoint(evals);
  const EvalResult& b = evals[static_cast<std::size_t>(s.best_checkpoint)];
  s.best_success = b.success_rate;
  s.best_steps = b.mean_steps;
  s.best_steps_flagged = b.steps_flagged;
  std::vector<double> t, loss, rew;
  for (const TrainLogRow& r : log) {
    t.push_back(r.wall_seconds);
    loss.push_back(r.loss);
    rew.push_back(r.mean_reward);
  }
  s.loss_at_half = smoothed_at_fraction(t, loss, 0.5);
  s.reward_at_half = smoothed_at_fraction(t, rew, 0.5);
  return s;
}

VariantSummary summarize_variant(Variant v, std::vector<RunSummary> runs) {
  VariantSummary vs;
  vs.variant = v;
  std::vector<double> succ, steps, loss;
  for (const RunSummary& r : runs) {
    succ.push_back(r.best_success);
    steps.push_back(r.best_steps);
    loss.push_back(r.loss_at_half);
  }
  vs.median_best_success = median(succ);
  vs.median_best_steps = median(steps);
  vs.median_loss_at_half = median(loss);
  vs.runs = std::move(runs);
  return vs;
}

std::vector<EvalResult> read_eval_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line.rfind("checkpoint_idx,success_rate,mean_steps", 0) != 0)
    throw IoError(path.string() + ": not an evaluation table");
  std::vector<EvalResult> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw IoError(path.string() + ": malformed row '" + line + "'");
    EvalResult e;
    try {
      e.success_rate = std::stod(cells[1]);
      e.mean_steps = std::stod(cells[2]);
      e.steps_flagged = cells[3] == "1";
      e.mean_reward = std::stod(cells[4]);
    } catch (const std::exception&) {
      throw IoError(path.string() + ": malformed row '" + line + "'");
    }
    out.push_back(e);
  }
  return out;
}

nlohmann::json report_to_json(const ExperimentReport& r, const ExperimentSpec& spec) {
  nlohmann::json vars = nlohmann::json::array();
  for (const VariantSummary& v : r.variants) {
    nlohmann::json runs = nlohmann::json::array();
    for (const RunSummary& s : v.runs)
      runs.push_back({{"run", s.run},
                      {"best_checkpoint", s.best_checkpoint},
                      {"best_success_rate", s.best_success},
                      {"best_mean_steps", s.best_steps},
                      {"best_steps_flagged", s.best_steps_flagged},
                      {"loss_at_half_time", s.loss_at_half},
                      {"reward_at_half_time", s.reward_at_half}});
    vars.push_back({{"variant", variant_name(v.variant)},
                    {"median_best_success_rate", v.median_best_success},
                    {"median_best_mean_steps", v.median_best_steps},
                    {"median_loss_at_half_time", v.median_loss_at_half},
                    {"runs", runs}});
  }
  return {{"master_seed", spec.master_seed},
          {"scale", spec.scale},
          {"planned_runs", r.plan.runs.size()},
          {"evaluated_checkpoints", r.plan.evaluations.size()},
          {"variants", vars}};
}

ExperimentReport run_experiment(const ExperimentSpec& spec, const fs::path& out_dir,
                                bool virtual_clock) {
  ExperimentReport rep;
  rep.plan = plan_experiment(spec);
  spec.env.validate();
  spec.policy.validate();
  // Load every observer first: a missing translator fails before any training.
  std::vector<std::unique_ptr<Observer>> observers;
  for (const InputConfig& ic : spec.variants) observers.push_back(std::make_unique<Observer>(ic));

  std::vector<std::vector<RunSummary>> per_variant(spec.variants.size());
  for (const PlannedRun& pr : rep.plan.runs) {
    std::size_t vi = 0;
    while (spec.variants[vi].variant != pr.variant) ++vi;
    SteadyClock steady;
    VirtualClock virt;
    Clock& clock = virtual_clock ? static_cast<Clock&>(virt) : steady;
    const RunResult rr = train_policy_run(*observers[vi], spec.env, spec.policy, spec.train,
                                          pr.total_steps, pr.seed, rep.plan.eval_master,
                                          out_dir / pr.dir, clock);
    per_variant[vi].push_back(summarize_run(pr.run, rr.log, rr.evals));
  }
  for (std::size_t vi = 0; vi < spec.variants.size(); ++vi)
    rep.variants.push_back(summarize_variant(spec.variants[vi].variant, std::move(per_variant[vi])));

  std::ofstream out(out_dir / "report.json", std::ios::binary);
  if (!out) throw IoError("cannot write " + (out_dir / "report.json").string());
  out << report_to_json(rep, spec).dump(2) << '\n';
  return rep;
}

}  // namespace tribench
