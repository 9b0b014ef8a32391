#include "tribench/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace tribench {

using ad::Tape;
using ad::Tensor;
using ad::Var;

long TrainCfg::total_steps(Variant v, double scale) const {
  const long base = v == Variant::Embedded ? total_steps_embedded : total_steps_image;
  return std::max(1L, std::lround(static_cast<double>(base) * scale));
}

int TrainCfg::runs(double scale) const {
  return std::max(1, static_cast<int>(std::lround(runs_per_condition * scale)));
}

void TrainCfg::validate() const {
  if (batch_size < 1 || epochs < 1 || n_envs < 1 || rollout_steps < 1 || runs_per_condition < 1 ||
      checkpoints_per_run < 1 || test_episodes < 1 || total_steps_image < 1 ||
      total_steps_embedded < 1)
    throw ConfigError("train: counts must be positive");
  if (!(lr > 0.0)) throw ConfigError("train: lr must be > 0");
  if (entropy_coef < 0.0) throw ConfigError("train: entropy_coef must be >= 0");
  if (clip < 0.0) throw ConfigError("train: clip must be >= 0");
  if (!(gamma > 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw ConfigError("train: gamma in (0,1], gae_lambda in [0,1]");
  if (value_coef < 0.0) throw ConfigError("train: value_coef must be >= 0");
}

// ------------------------------------------------------------------ EnvPool

EnvPool::EnvPool(const EnvConfig& cfg, int n_envs, std::uint64_t seed) : seed_(seed) {
  if (n_envs < 1) throw ConfigError("env pool: need at least one environment");
  envs_.reserve(static_cast<std::size_t>(n_envs));
  for (int i = 0; i < n_envs; ++i) envs_.emplace_back(cfg);
  obs_.resize(static_cast<std::size_t>(n_envs));
  have_obs_.assign(static_cast<std::size_t>(n_envs), false);
  episode_.assign(static_cast<std::size_t>(n_envs), 0);
  for (int i = 0; i < n_envs; ++i) next_episode(i);
}

void EnvPool::next_episode(int i) {
  const auto k = static_cast<std::size_t>(i);
  const auto id = static_cast<std::uint64_t>(started_++);
  episode_[k] = id;
  envs_[k].reset(splitmix64(seed_ ^ splitmix64(id + 1)));
  have_obs_[k] = false;
}

const Eigen::VectorXd& EnvPool::observation(int i, const Observer& obs) {
  const auto k = static_cast<std::size_t>(i);
  if (!have_obs_[k]) {
    obs_[k] = obs(envs_[k].frame(), episode_[k]);
    have_obs_[k] = true;
  }
  return obs_[k];
}

// ------------------------------------------------------------------ rollouts

namespace {

double gaussian_logp(const ActionVec& u, const Eigen::VectorXd& mu, const Eigen::VectorXd& log_std) {
  double lp = 0.0;
  for (int j = 0; j < 6; ++j) {
    const double z = (u[j] - mu[j]) * std::exp(-log_std[j]);
    lp += -0.5 * z * z - log_std[j] - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  return lp;
}

ActionVec squash(const ActionVec& u) { return u.array().tanh().matrix(); }

}  // namespace

void RolloutBuffer::compute_advantages(double gamma, double lambda) {
  const std::size_t n = size();
  advantages.assign(n, 0.0);
  returns.assign(n, 0.0);
  // Walk backwards; carry[e] is the advantage of env e's following transition.
  int envs = 0;
  for (int e : env_index) envs = std::max(envs, e + 1);
  std::vector<double> carry(static_cast<std::size_t>(envs), 0.0);
  for (std::size_t k = n; k-- > 0;) {
    const auto e = static_cast<std::size_t>(env_index[k]);
    const double cont = done[k] ? 0.0 : 1.0;
    const double delta = reward[k] + gamma * cont * next_value[k] - value[k];
    advantages[k] = delta + gamma * lambda * cont * carry[e];
    carry[e] = advantages[k];
    returns[k] = advantages[k] + value[k];
  }
}

double RolloutBuffer::mean_reward() const {
  if (reward.empty()) return 0.0;
  return std::accumulate(reward.begin(), reward.end(), 0.0) / static_cast<double>(reward.size());
}

RolloutBuffer collect_rollouts(EnvPool& pool, const PolicyNet& policy, const Observer& obs,
                               int n_steps, Rng& rng) {
  if (n_steps < 1) throw ContractError("collect_rollouts: n_steps must be >= 1");
  RolloutBuffer buf;
  buf.horizon = pool.env(0).config().horizon;
  const int n_envs = pool.size();
  std::vector<long> pending(static_cast<std::size_t>(n_envs), -1);
  std::normal_distribution<double> normal(0.0, 1.0);

  auto forward = [&](const std::vector<int>& ids) {
    std::vector<const Eigen::VectorXd*> rows;
    for (int i : ids) rows.push_back(&pool.observation(i, obs));
    Tape t(false);
    const PolicyNet::Output out = policy.forward(t, stack_observations(rows));
    return std::tuple{out.mu.value(), out.log_std.value(), out.value.value()};
  };

  while (static_cast<int>(buf.size()) < n_steps) {
    const int active = std::min(n_envs, n_steps - static_cast<int>(buf.size()));
    std::vector<int> ids(static_cast<std::size_t>(active));
    std::iota(ids.begin(), ids.end(), 0);
    const auto [mu, log_std, value] = forward(ids);
    for (int i = 0; i < active; ++i) {
      const auto k = static_cast<std::size_t>(i);
      if (pending[k] >= 0) buf.next_value[static_cast<std::size_t>(pending[k])] = value.data[i];
      pending[k] = -1;

      const Eigen::VectorXd m = mu.data.segment(static_cast<Eigen::Index>(i) * 6, 6);
      ActionVec u;
      for (int j = 0; j < 6; ++j) u[j] = m[j] + std::exp(log_std.data[j]) * normal(rng);

      TissueEnv& env = pool.env(i);
      buf.obs.push_back(pool.observation(i, obs));
      const StepResult r = env.step(env.action_from_unit(squash(u)));
      buf.u.push_back(u);
      buf.logp.push_back(gaussian_logp(u, m, log_std.data) - squash_correction(u));
      buf.reward.push_back(r.reward);
      buf.value.push_back(value.data[i]);
      buf.next_value.push_back(0.0);
      buf.done.push_back(r.done);
      buf.diverged.push_back(r.diverged);
      buf.env_index.push_back(i);
      if (r.done) {
        pool.next_episode(i);
      } else {
        pool.invalidate(i);
        pending[k] = static_cast<long>(buf.size()) - 1;
      }
    }
  }
  // Episodes cut by the buffer end bootstrap from the value of their next state.
  std::vector<int> open;
  for (int i = 0; i < n_envs; ++i)
    if (pending[static_cast<std::size_t>(i)] >= 0) open.push_back(i);
  if (!open.empty()) {
    const auto [mu, log_std, value] = forward(open);
    for (std::size_t j = 0; j < open.size(); ++j)
      buf.next_value[static_cast<std::size_t>(pending[static_cast<std::size_t>(open[j])])] =
          value.data[static_cast<Eigen::Index>(j)];
  }
  return buf;
}

// ------------------------------------------------------------------- update

UpdateStats ppo_update(PolicyNet& policy, RolloutBuffer& buf, const TrainCfg& cfg, Rng& rng) {
  const std::size_t n = buf.size();
  if (n == 0) throw ContractError("ppo_update: empty buffer");
  buf.compute_advantages(cfg.gamma, cfg.gae_lambda);
  const ad::AdamConfig adam{cfg.lr, 0.9, 0.999, 1e-8};
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  UpdateStats st;
  const auto bs = static_cast<std::size_t>(cfg.batch_size);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t s = 0; s < n; s += bs) {
      const std::size_t m = std::min(bs, n - s);
      std::vector<const Eigen::VectorXd*> rows;
      Tensor U({static_cast<int>(m), 6});
      Tensor corr({static_cast<int>(m)});
      Tensor ret({static_cast<int>(m)});
      Eigen::VectorXd old_logp(m), adv(m);
      for (std::size_t r = 0; r < m; ++r) {
        const std::size_t k = order[s + r];
        const auto ri = static_cast<Eigen::Index>(r);
        rows.push_back(&buf.obs[k]);
        U.data.segment(ri * 6, 6) = buf.u[k];
        corr.data[ri] = squash_correction(buf.u[k]);
        ret.data[ri] = buf.returns[k];
        old_logp[ri] = buf.logp[k];
        adv[ri] = buf.advantages[k];
      }
      if (m > 1) {
        const double mean = adv.mean();
        const double sd = std::sqrt((adv.array() - mean).square().sum() / static_cast<double>(m));
        adv = ((adv.array() - mean) / (sd + 1e-8)).matrix();
      }

      Tape t;
      const PolicyNet::Output out = policy.forward(t, stack_observations(rows));
      const Var logp = ad::sub(ad::gaussian_log_prob(out.mu, out.log_std, U), t.constant(corr));
      const Var pl = ad::ppo_clip_loss(logp, old_logp, adv, cfg.clip);
      const Var vl = ad::mse(out.value, ret);
      Var total = ad::add(pl, ad::scale(vl, cfg.value_coef));
      const Var ent = ad::gaussian_entropy(out.log_std);
      if (cfg.entropy_coef > 0.0) total = ad::sub(total, ad::scale(ent, cfg.entropy_coef));
      if (!std::isfinite(total.item()))
        throw TrainingDiverged("ppo_update: non-finite loss at epoch " + std::to_string(epoch) +
                               " (policy " + std::to_string(pl.item()) + ", value " +
                               std::to_string(vl.item()) + ")");
      policy.store.zero_grad();
      t.backward(total);
      policy.store.adam_step(adam);
      policy.clamp_log_std();

      st.loss += total.item();
      st.policy_loss += pl.item();
      st.value_loss += vl.item();
      st.entropy += ent.item();
      ++st.grad_steps;
    }
  }
  const double g = static_cast<double>(st.grad_steps);
  st.loss /= g;
  st.policy_loss /= g;
  st.value_loss /= g;
  st.entropy /= g;
  return st;
}

// --------------------------------------------------------------- evaluation

std::vector<std::uint64_t> evaluation_seeds(std::uint64_t master, int episodes) {
  const SeedStreams streams(master);
  std::vector<std::uint64_t> out;
  for (int i = 0; i < episodes; ++i) out.push_back(streams.seed("eval", static_cast<std::uint64_t>(i)));
  return out;
}

EvalResult evaluate(const PolicyNet& policy, const Observer& obs, const EnvConfig& env_cfg,
                    const std::vector<std::uint64_t>& seeds) {
  EvalResult res;
  if (seeds.empty()) return res;
  TissueEnv env(env_cfg);
  double steps_sum = 0.0, reward_sum = 0.0;
  int successes = 0;
  long total_steps = 0;
  for (std::size_t e = 0; e < seeds.size(); ++e) {
    env.reset(seeds[e]);
    EpisodeRecord rec;
    rec.episode = static_cast<int>(e);
    rec.seed = seeds[e];
    while (!env.done()) {
      const Eigen::VectorXd o = obs(env.frame(), e);
      Tape t(false);
      const PolicyNet::Output out = policy.forward(t, stack_observations({&o}));
      const ActionVec u = out.mu.value().data.head<6>();
      const StepResult r = env.step(env.action_from_unit(squash(u)));
      ++rec.steps;
      rec.episode_return += r.reward;
      rec.success = rec.success || r.success;
      rec.diverged = rec.diverged || r.diverged;
    }
    reward_sum += rec.episode_return;
    total_steps += rec.steps;
    if (rec.success) {
      ++successes;
      steps_sum += rec.steps;
    }
    res.episodes.push_back(rec);
  }
  const double n = static_cast<double>(seeds.size());
  res.success_rate = successes / n;
  res.mean_reward = reward_sum / static_cast<double>(total_steps);
  if (successes > 0) {
    res.mean_steps = steps_sum / successes;
  } else {
    res.mean_steps = env_cfg.horizon;
    res.steps_flagged = true;
  }
  return res;
}

int best_checkpoint(const std::vector<EvalResult>& evals) {
  if (evals.empty()) throw ContractError("best_checkpoint: no evaluations");
  int best = 0;
  for (int i = 1; i < static_cast<int>(evals.size()); ++i) {
    const EvalResult& a = evals[static_cast<std::size_t>(i)];
    const EvalResult& b = evals[static_cast<std::size_t>(best)];
    if (a.success_rate > b.success_rate ||
        (a.success_rate == b.success_rate && a.mean_steps < b.mean_steps))
      best = i;
  }
  return best;
}

// ---------------------------------------------------------------- training

void write_train_log(std::ostream& os, const std::vector<TrainLogRow>& rows) {
  os.precision(12);
  os << "wall_seconds,update_idx,loss,mean_reward\n";
  for (const TrainLogRow& r : rows)
    os << r.wall_seconds << ',' << r.update_idx << ',' << r.loss << ',' << r.mean_reward << '\n';
}

std::vector<TrainLogRow> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "wall_seconds,update_idx,loss,mean_reward")
    throw IoError(path.string() + ": not a training log");
  std::vector<TrainLogRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    TrainLogRow r;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> r.wall_seconds >> c1 >> r.update_idx >> c2 >> r.loss >> c3 >> r.mean_reward) ||
        c1 != ',' || c2 != ',' || c3 != ',')
      throw IoError(path.string() + ": malformed row '" + line + "'");
    rows.push_back(r);
  }
  return rows;
}

void write_eval_csv(std::ostream& os, const std::vector<EvalResult>& evals) {
  os.precision(12);
  os << "checkpoint_idx,success_rate,mean_steps,steps_flagged,mean_reward\n";
  for (std::size_t i = 0; i < evals.size(); ++i)
    os << i << ',' << evals[i].success_rate << ',' << evals[i].mean_steps << ','
       << (evals[i].steps_flagged ? 1 : 0) << ',' << evals[i].mean_reward << '\n';
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace

RunResult train_policy_run(const Observer& obs, const EnvConfig& env_cfg, const PolicyConfig& pcfg,
                           const TrainCfg& cfg, long total_steps, std::uint64_t seed,
                           std::uint64_t eval_master, const std::filesystem::path& out_dir,
                           Clock& clock) {
  cfg.validate();
  if (total_steps < 1) throw ConfigError("train: total_steps must be >= 1");
  std::filesystem::create_directories(out_dir);
  const SeedStreams streams(seed);
  const Variant v = obs.config().variant;
  const int w = env_cfg.camera.width, h = env_cfg.camera.height;
  const int len = obs.length(w, h);
  PolicyNet policy(v, w, h, len, pcfg, streams.seed("policy"));
  EnvPool pool(env_cfg, cfg.n_envs, streams.seed("env"));
  Rng rng = streams.stream("ppo");

  const int K = cfg.checkpoints_per_run;
  std::vector<long> marks;
  for (int k = 1; k <= K; ++k)
    marks.push_back(static_cast<long>(std::ceil(static_cast<double>(total_steps) * k / K)));

  RunResult res;
  clock.start();
  long steps = 0;
  int next_mark = 0;
  for (int update = 0; steps < total_steps; ++update) {
    const int n = static_cast<int>(std::min<long>(cfg.rollout_steps, total_steps - steps));
    RolloutBuffer buf = collect_rollouts(pool, policy, obs, n, rng);
    steps += n;
    const UpdateStats st = ppo_update(policy, buf, cfg, rng);
    clock.record_work(n, st.grad_steps);
    res.log.push_back({clock.seconds(), update, st.loss, buf.mean_reward()});
    while (next_mark < K && steps >= marks[static_cast<std::size_t>(next_mark)]) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%02d.bin", next_mark);
      res.checkpoints.push_back(out_dir / name);
      policy.save(res.checkpoints.back());
      ++next_mark;
    }
  }
  std::ostringstream log;
  write_train_log(log, res.log);
  write_file(out_dir / "train_log.csv", log.str());

  const std::vector<std::uint64_t> seeds = evaluation_seeds(eval_master, cfg.test_episodes);
  std::ostringstream eps;
  eps << "checkpoint_idx,episode,seed,steps,success,diverged,return\n";
  for (std::size_t c = 0; c < res.checkpoints.size(); ++c) {
    PolicyNet p(v, w, h, len, pcfg, 0);
    p.load(res.checkpoints[c]);
    res.evals.push_back(evaluate(p, obs, env_cfg, seeds));
    for (const EpisodeRecord& r : res.evals.back().episodes)
      eps << c << ',' << r.episode << ',' << r.seed << ',' << r.steps << ',' << r.success << ','
          << r.diverged << ',' << r.episode_return << '\n';
  }
  std::ostringstream ev;
  write_eval_csv(ev, res.evals);
  write_file(out_dir / "eval.csv", ev.str());
  write_file(out_dir / "episodes.csv", eps.str());
  res.best_checkpoint = best_checkpoint(res.evals);
  return res;
}

}  // namespace tribench
