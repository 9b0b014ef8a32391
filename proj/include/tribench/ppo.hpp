#pragma once

#include "tribench/policy.hpp"

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <vector>

namespace tribench {

struct TrainCfg {
  int batch_size = 64;
  double lr = 3e-4;
  double entropy_coef = 0.0;
  int epochs = 128;
  double clip = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double value_coef = 0.5;
  int n_envs = 10;          // parallel environment instances ("number of training data")
  int rollout_steps = 128;  // transitions per update
  long total_steps_image = 12800;
  long total_steps_embedded = 128000;
  int runs_per_condition = 10;
  int checkpoints_per_run = 10;
  int test_episodes = 10;

  long total_steps(Variant v, double scale) const;
  int runs(double scale) const;
  void validate() const;
};

// Work-based or wall-clock time source for training logs.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual void start() = 0;
  virtual double seconds() const = 0;
  virtual void record_work(long env_steps, long grad_steps) = 0;
};

class SteadyClock : public Clock {
 public:
  void start() override { t0_ = std::chrono::steady_clock::now(); }
  double seconds() const override {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }
  void record_work(long, long) override {}

 private:
  std::chrono::steady_clock::time_point t0_ = std::chrono::steady_clock::now();
};

// Deterministic clock charging a fixed cost per environment and gradient step.
class VirtualClock : public Clock {
 public:
  explicit VirtualClock(double per_env_step = 5e-3, double per_grad_step = 2e-3)
      : per_env_(per_env_step), per_grad_(per_grad_step) {}
  void start() override { t_ = 0.0; }
  double seconds() const override { return t_; }
  void record_work(long env_steps, long grad_steps) override {
    t_ += per_env_ * static_cast<double>(env_steps) + per_grad_ * static_cast<double>(grad_steps);
  }

 private:
  double per_env_, per_grad_;
  double t_ = 0.0;
};

// Environments stepped in a fixed round-robin order, each with its own
// episode stream; state carries over between rollout collections.
class EnvPool {
 public:
  EnvPool(const EnvConfig& cfg, int n_envs, std::uint64_t seed);

  int size() const { return static_cast<int>(envs_.size()); }
  TissueEnv& env(int i) { return envs_[static_cast<std::size_t>(i)]; }
  // Current observation of env i, computed on first use after a reset/step.
  const Eigen::VectorXd& observation(int i, const Observer& obs);
  std::uint64_t episode(int i) const { return episode_[static_cast<std::size_t>(i)]; }
  void next_episode(int i);
  void invalidate(int i) { have_obs_[static_cast<std::size_t>(i)] = false; }
  long episodes_started() const { return started_; }

 private:
  std::vector<TissueEnv> envs_;
  std::vector<Eigen::VectorXd> obs_;
  std::vector<bool> have_obs_;
  std::vector<std::uint64_t> episode_;
  std::uint64_t seed_;
  long started_ = 0;
};

struct RolloutBuffer {
  std::vector<Eigen::VectorXd> obs;
  std::vector<ActionVec> u;  // pre-squash actions
  std::vector<double> logp;  // squash-corrected
  std::vector<double> reward;
  std::vector<double> value;
  std::vector<double> next_value;  // V(s') if the episode continues, else 0
  std::vector<char> done;
  std::vector<char> diverged;
  std::vector<int> env_index;
  std::vector<double> advantages;
  std::vector<double> returns;
  int horizon = 0;

  std::size_t size() const { return obs.size(); }
  // GAE along each environment's own sequence of transitions.
  void compute_advantages(double gamma, double lambda);
  double mean_reward() const;
};

RolloutBuffer collect_rollouts(EnvPool& pool, const PolicyNet& policy, const Observer& obs,
                               int n_steps, Rng& rng);

struct UpdateStats {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  long grad_steps = 0;
};

UpdateStats ppo_update(PolicyNet& policy, RolloutBuffer& buf, const TrainCfg& cfg, Rng& rng);

struct EpisodeRecord {
  int episode = 0;
  std::uint64_t seed = 0;
  int steps = 0;
  bool success = false;
  bool diverged = false;
  double episode_return = 0.0;
};

struct EvalResult {
  double success_rate = 0.0;
  double mean_steps = 0.0;  // over successes; horizon (flagged) when there are none
  bool steps_flagged = false;
  double mean_reward = 0.0;
  std::vector<EpisodeRecord> episodes;
};

// Deterministic (mean-action) evaluation on a fixed list of reset seeds.
EvalResult evaluate(const PolicyNet& policy, const Observer& obs, const EnvConfig& env_cfg,
                    const std::vector<std::uint64_t>& seeds);

std::vector<std::uint64_t> evaluation_seeds(std::uint64_t master, int episodes);

struct TrainLogRow {
  double wall_seconds = 0.0;
  int update_idx = 0;
  double loss = 0.0;
  double mean_reward = 0.0;
};

struct RunResult {
  std::vector<TrainLogRow> log;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<EvalResult> evals;  // one per checkpoint
  int best_checkpoint = 0;        // highest success rate, then fewest steps, then earliest
};

// Trains one run, saving checkpoints_per_run evenly spaced checkpoints, then
// evaluates each. Writes train_log.csv, eval.csv, episodes.csv and
// ckpt_NN.bin into out_dir.
RunResult train_policy_run(const Observer& obs, const EnvConfig& env_cfg, const PolicyConfig& pcfg,
                           const TrainCfg& cfg, long total_steps, std::uint64_t seed,
                           std::uint64_t eval_master, const std::filesystem::path& out_dir,
                           Clock& clock);

int best_checkpoint(const std::vector<EvalResult>& evals);

void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& rows);
std::vector<TrainLogRow> read_train_log(const std::filesystem::path& path);
void write_eval_csv(std::ostream& os, const std::vector<EvalResult>& evals);

}  // namespace tribench
