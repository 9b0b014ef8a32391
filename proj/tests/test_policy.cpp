#include "doctest.h"

#include "tribench/ppo.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

using namespace tribench;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tribench_policy_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// Small translator checkpoint for the image-to-image variants.
fs::path translator_checkpoint() {
  static const fs::path path = [] {
    const fs::path dir = scratch("translator");
    CutConfig cfg;
    Translator tr(cfg, 11);
    tr.save(dir / "ckpt.bin");
    return dir / "ckpt.bin";
  }();
  return path;
}

InputConfig input(Variant v) {
  InputConfig ic;
  ic.variant = v;
  if (v != Variant::Original) ic.translator_checkpoint = translator_checkpoint();
  return ic;
}

// Pins the policy to one action: zero mean weights, bias at atanh(unit), minimum spread.
void pin_action(PolicyNet& p, const ActionVec& unit) {
  p.store.get("P.mu.weight").value.data.setZero();
  for (int j = 0; j < 6; ++j) p.store.get("P.mu.bias").value.data[j] = std::atanh(unit[j]);
  p.store.get("P.log_std").value.data.setConstant(-5.0);
}

ActionVec to_unit(const EnvConfig& cfg, const Vec3& grasp, const Vec3& target) {
  const Aabb& w = cfg.sim.workspace;
  ActionVec a;
  a.head<3>() = (2.0 * (grasp - w.min).array() / w.extent().array() - 1.0).matrix();
  a.tail<3>() = (2.0 * (target - w.min).array() / w.extent().array() - 1.0).matrix();
  return a;
}

// Flat sheet whose far edge, pulled a little further out, spans the gripper
// triangle over the visible line: reward 1 on the first action.
EnvConfig easy_env() {
  EnvConfig c = desk_env_config(64);
  c.sim.fold_row = 2.0;
  c.reset_jitter = 0.0;
  return c;
}

ActionVec easy_action(const EnvConfig& c) {
  const TissueState s = init_tissue(c.sim);
  const Vec3 far = s.position(s.index(s.nx / 2, s.ny - 1));
  const Vec3 near = s.position(s.index(s.nx / 2, 0));
  const Vec3 out = (far - near).normalized();
  return to_unit(c, far, far + 0.01 * out);
}

RolloutBuffer zero_signal_buffer(const PolicyNet& p, int n) {
  RolloutBuffer b;
  Rng rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd o(p.obs_length());
    for (auto& x : o) x = u(rng);
    ActionVec a;
    for (int j = 0; j < 6; ++j) a[j] = g(rng);
    b.obs.push_back(o);
    b.u.push_back(a);
    b.logp.push_back(-4.0);
    b.reward.push_back(0.0);
    b.value.push_back(0.0);
    b.next_value.push_back(0.0);
    b.done.push_back(i % 5 == 4);
    b.diverged.push_back(0);
    b.env_index.push_back(i % 4);
  }
  return b;
}

double kl_diag(const Eigen::VectorXd& mu0, const Eigen::VectorXd& ls0, const Eigen::VectorXd& mu1,
               const Eigen::VectorXd& ls1) {
  double kl = 0.0;
  for (Eigen::Index j = 0; j < mu0.size(); ++j) {
    const double v0 = std::exp(2 * ls0[j]), v1 = std::exp(2 * ls1[j]);
    kl += ls1[j] - ls0[j] + (v0 + (mu0[j] - mu1[j]) * (mu0[j] - mu1[j])) / (2 * v1) - 0.5;
  }
  return kl;
}

}  // namespace

TEST_CASE("observation lengths and ranges per variant") {
  const EnvConfig ec = desk_env_config(64);
  const TissueState s = init_tissue(ec.sim);

  Observer orig(input(Variant::Original));
  const Eigen::VectorXd o = make_observation(s, ec.camera, ec.style, orig);
  CHECK(o.size() == 4096);
  CHECK(o.minCoeff() >= 0.0);
  CHECK(o.maxCoeff() <= 1.0);

  Observer trans(input(Variant::Translated));
  const Eigen::VectorXd t = make_observation(s, ec.camera, ec.style, trans);
  CHECK(t.size() == o.size());
  CHECK(t.minCoeff() >= 0.0);
  CHECK(t.maxCoeff() <= 1.0);

  Observer emb(input(Variant::Embedded));
  const Eigen::VectorXd e = make_observation(s, ec.camera, ec.style, emb);
  CHECK(e.size() == 5120);
  CHECK(emb.length(64, 64) == 5120);
  CHECK(e.cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  CHECK(e.allFinite());
}

TEST_CASE("translator-based variants need an existing checkpoint") {
  InputConfig ic;
  ic.variant = Variant::Embedded;
  CHECK_THROWS_AS(Observer{ic}, ConfigError);
  ic.translator_checkpoint = "/nonexistent/ckpt.bin";
  CHECK_THROWS_AS(Observer{ic}, ConfigError);
  ic.variant = Variant::Original;
  CHECK_NOTHROW(Observer{ic});
  CHECK(parse_variant("embedded") == Variant::Embedded);
  CHECK_THROWS_AS(parse_variant("raw"), ConfigError);
}

TEST_CASE("squash correction matches log(1 - tanh^2)") {
  Rng rng(2);
  std::normal_distribution<double> g(0.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    ActionVec u;
    for (int j = 0; j < 6; ++j) u[j] = g(rng);
    double ref = 0.0;
    for (int j = 0; j < 6; ++j) ref += std::log(1.0 - std::tanh(u[j]) * std::tanh(u[j]));
    CHECK(squash_correction(u) == doctest::Approx(ref).epsilon(1e-9));
  }
  ActionVec big = ActionVec::Constant(40.0);
  CHECK(std::isfinite(squash_correction(big)));
}

TEST_CASE("policy heads: shapes, log-std bounds, unit actions stay in the workspace") {
  const EnvConfig ec = desk_env_config(64);
  PolicyNet p(Variant::Original, 64, 64, 4096, PolicyConfig{}, 3);
  ad::Tensor obs({3, 4096});
  obs.data.setConstant(0.5);
  ad::Tape t(false);
  const auto out = p.forward(t, obs);
  CHECK(out.mu.shape() == ad::Shape{3, 6});
  CHECK(out.log_std.shape() == ad::Shape{6});
  CHECK(out.value.shape() == ad::Shape{3});
  CHECK_THROWS_AS(p.forward(t, ad::Tensor({1, 100})), ShapeError);
  CHECK_THROWS_AS(PolicyNet(Variant::Original, 60, 60, 3600, PolicyConfig{}, 0), ConfigError);

  p.store.get("P.log_std").value.data << 9, -9, 0, 1, -1, 2.5;
  p.clamp_log_std();
  CHECK(p.store.get("P.log_std").value.data.maxCoeff() == 2.0);
  CHECK(p.store.get("P.log_std").value.data.minCoeff() == -5.0);

  TissueEnv env(ec);
  ActionVec huge;
  huge << 5, -5, 0.3, 1e9, -1e9, 0;
  const Action a = env.action_from_unit(huge);
  CHECK(ec.sim.workspace.contains(a.grasp));
  CHECK(ec.sim.workspace.contains(a.target));
}

TEST_CASE("GAE follows each environment's own transitions") {
  RolloutBuffer b;
  // env 0: r=1 (cont), r=0 (done); env 1: r=0.5 (cont, cut by buffer end)
  b.obs.assign(3, Eigen::VectorXd());
  b.reward = {1.0, 0.5, 0.0};
  b.value = {0.2, 0.1, 0.4};
  b.next_value = {0.4, 0.7, 0.0};
  b.done = {0, 0, 1};
  b.env_index = {0, 1, 0};
  const double g = 0.9, l = 0.8;
  b.compute_advantages(g, l);
  const double d2 = 0.0 - 0.4;
  const double d0 = 1.0 + g * 0.4 - 0.2;
  const double d1 = 0.5 + g * 0.7 - 0.1;
  CHECK(b.advantages[2] == doctest::Approx(d2).epsilon(1e-14));
  CHECK(b.advantages[1] == doctest::Approx(d1).epsilon(1e-14));
  CHECK(b.advantages[0] == doctest::Approx(d0 + g * l * d2).epsilon(1e-14));
  for (int k = 0; k < 3; ++k) CHECK(b.returns[k] == doctest::Approx(b.advantages[k] + b.value[k]));
}

TEST_CASE("collect_rollouts: exact length, bootstrap values, bounded rewards, determinism") {
  const EnvConfig ec = desk_env_config(64);
  Observer ob(input(Variant::Original));
  PolicyNet p(Variant::Original, 64, 64, 4096, PolicyConfig{}, 4);

  auto run = [&] {
    EnvPool pool(ec, 4, 77);
    Rng rng(9);
    return collect_rollouts(pool, p, ob, 13, rng);
  };
  const RolloutBuffer a = run();
  const RolloutBuffer b = run();
  REQUIRE(a.size() == 13);
  CHECK(a.horizon == ec.horizon);
  for (std::size_t k = 0; k < a.size(); ++k) {
    CHECK((a.reward[k] == 0.0 || a.reward[k] == 0.5 || a.reward[k] == 1.0));
    CHECK(a.obs[k] == b.obs[k]);
    CHECK(a.u[k] == b.u[k]);
    CHECK(a.logp[k] == b.logp[k]);
    CHECK(a.reward[k] == b.reward[k]);
    CHECK(a.next_value[k] == b.next_value[k]);
    if (a.done[k]) CHECK(a.next_value[k] == 0.0);
    else CHECK(a.next_value[k] != 0.0);
  }
}

TEST_CASE("episodes that reach reward 1 at the first action have length 1") {
  const EnvConfig ec = easy_env();
  const ActionVec unit = easy_action(ec);
  REQUIRE(unit.cwiseAbs().maxCoeff() < 1.0);
  {
    TissueEnv env(ec);
    env.reset(0);
    const StepResult r = env.step(env.action_from_unit(unit));
    REQUIRE(r.reward == 1.0);
    CHECK(r.done);
    CHECK_THROWS_AS(env.step(env.action_from_unit(unit)), ContractError);
  }
  Observer ob(input(Variant::Original));
  PolicyNet p(Variant::Original, 64, 64, 4096, PolicyConfig{}, 4);
  pin_action(p, unit);
  EnvPool pool(ec, 3, 1);
  Rng rng(1);
  const RolloutBuffer buf = collect_rollouts(pool, p, ob, 9, rng);
  for (std::size_t k = 0; k < buf.size(); ++k) {
    CHECK(buf.done[k]);
    CHECK(buf.reward[k] == 1.0);
  }
  CHECK(pool.episodes_started() == 3 + 9);

  const EvalResult ev = evaluate(p, ob, ec, evaluation_seeds(3, 10));
  CHECK(ev.success_rate == 1.0);
  CHECK(ev.mean_steps == 1.0);
  CHECK_FALSE(ev.steps_flagged);
  CHECK(ev.episodes.size() == 10);
}

TEST_CASE("a policy that never exposes the line scores zero with flagged steps") {
  const EnvConfig ec = desk_env_config(64);
  Observer ob(input(Variant::Original));
  PolicyNet p(Variant::Original, 64, 64, 4096, PolicyConfig{}, 4);
  pin_action(p, ActionVec::Constant(-0.999));  // grasps empty space at the workspace corner
  const std::vector<std::uint64_t> seeds = evaluation_seeds(8, 10);
  const EvalResult ev = evaluate(p, ob, ec, seeds);
  CHECK(ev.success_rate == 0.0);
  CHECK(ev.steps_flagged);
  CHECK(ev.mean_steps == ec.horizon);
  CHECK(ev.mean_reward == 0.0);
  REQUIRE(ev.episodes.size() == 10);
  for (const auto& e : ev.episodes) CHECK(e.steps == ec.horizon);

  // Pure function of parameters and seeds.
  PolicyNet q(Variant::Original, 64, 64, 4096, PolicyConfig{}, 12);
  const EvalResult r1 = evaluate(q, ob, ec, seeds);
  const EvalResult r2 = evaluate(q, ob, ec, seeds);
  CHECK(r1.success_rate == r2.success_rate);
  CHECK(r1.mean_reward == r2.mean_reward);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    CHECK(r1.episodes[i].steps == r2.episodes[i].steps);
    CHECK(r1.episodes[i].episode_return <= ec.horizon);
  }
}

TEST_CASE("zero advantages leave the action distribution unchanged") {
  PolicyNet p(Variant::Embedded, 64, 64, 160, PolicyConfig{}, 21);
  RolloutBuffer b = zero_signal_buffer(p, 40);
  auto heads = [&](const RolloutBuffer& buf) {
    std::vector<const Eigen::VectorXd*> rows;
    for (const auto& o : buf.obs) rows.push_back(&o);
    ad::Tape t(false);
    const auto out = p.forward(t, stack_observations(rows));
    return std::pair{out.mu.value().data, out.log_std.value().data};
  };
  const auto before = heads(b);
  const auto params_before = p.store.snapshot();
  TrainCfg cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  Rng rng(3);
  ppo_update(p, b, cfg, rng);
  for (double a : b.advantages) CHECK(a == 0.0);
  const auto after = heads(b);
  for (std::size_t i = 0; i < b.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i) * 6;
    const double kl = kl_diag(before.first.segment(r, 6), before.second, after.first.segment(r, 6),
                              after.second);
    CHECK(kl < 1e-10);
  }
  const auto params_after = p.store.snapshot();
  for (const auto& [name, t] : params_before) {
    const bool value_head = name.rfind("P.v", 0) == 0;
    if (value_head) CHECK(params_after.at(name).data != t.data);
    else CHECK(params_after.at(name).data == t.data);
  }
}

TEST_CASE("clip 0 at ratio 1 gives the plain policy-gradient direction") {
  PolicyNet p(Variant::Embedded, 64, 64, 96, PolicyConfig{}, 8);
  RolloutBuffer b = zero_signal_buffer(p, 12);
  Rng rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd adv(12);
  for (auto& a : adv) a = g(rng);
  std::vector<const Eigen::VectorXd*> rows;
  ad::Tensor U({12, 6});
  for (int i = 0; i < 12; ++i) {
    rows.push_back(&b.obs[static_cast<std::size_t>(i)]);
    U.data.segment(i * 6, 6) = b.u[static_cast<std::size_t>(i)];
  }
  auto grads = [&](bool clipped) {
    p.store.zero_grad();
    ad::Tape t;
    const auto out = p.forward(t, stack_observations(rows));
    const ad::Var logp = ad::gaussian_log_prob(out.mu, out.log_std, U);
    ad::Var loss;
    if (clipped) {
      loss = ad::ppo_clip_loss(logp, logp.value().data, adv, 0.0);
    } else {
      ad::Tensor a({12}, adv);
      loss = ad::scale(ad::mean(ad::mul(t.constant(a), logp)), -1.0);
    }
    t.backward(loss);
    std::vector<Eigen::VectorXd> out_g;
    for (std::size_t i = 0; i < p.store.size(); ++i) out_g.push_back(p.store[i].grad);
    return out_g;
  };
  const auto gc = grads(true);
  const auto gp = grads(false);
  double norm = 0.0;
  for (std::size_t i = 0; i < gc.size(); ++i) {
    CHECK((gc[i] - gp[i]).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + gp[i].cwiseAbs().maxCoeff()));
    norm += gp[i].squaredNorm();
  }
  CHECK(norm > 0.0);
}

TEST_CASE("entropy coefficient 0 drops the entropy term exactly") {
  auto run = [](double coef) {
    PolicyNet p(Variant::Embedded, 64, 64, 64, PolicyConfig{}, 2);
    RolloutBuffer b = zero_signal_buffer(p, 32);
    for (std::size_t i = 0; i < b.size(); ++i) b.reward[i] = (i % 3 == 0) ? 0.5 : 0.0;
    TrainCfg cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.entropy_coef = coef;
    Rng rng(6);
    const UpdateStats st = ppo_update(p, b, cfg, rng);
    return std::pair{p.store.get("P.log_std").value.data, st};
  };
  const auto [ls0, st0] = run(0.0);
  const auto [ls1, st1] = run(1e-9);
  CHECK(ls0 != ls1);
  CHECK(st0.loss == doctest::Approx(st0.policy_loss + 0.5 * st0.value_loss).epsilon(1e-12));
  CHECK(st1.loss != doctest::Approx(st1.policy_loss + 0.5 * st1.value_loss).epsilon(1e-15));
}

TEST_CASE("NaN observations abort the update with a diagnostic") {
  PolicyNet p(Variant::Embedded, 64, 64, 32, PolicyConfig{}, 2);
  RolloutBuffer b = zero_signal_buffer(p, 8);
  b.obs[3][0] = std::nan("");
  TrainCfg cfg;
  cfg.epochs = 1;
  Rng rng(1);
  CHECK_THROWS_AS(ppo_update(p, b, cfg, rng), TrainingDiverged);
}

TEST_CASE("step budgets and run counts scale with the desk factor") {
  TrainCfg cfg;
  CHECK(cfg.total_steps(Variant::Original, 1.0) == 12800);
  CHECK(cfg.total_steps(Variant::Translated, 1.0) == 12800);
  CHECK(cfg.total_steps(Variant::Embedded, 1.0) == 128000);
  CHECK(cfg.total_steps(Variant::Original, 0.1) == 1280);
  CHECK(cfg.total_steps(Variant::Embedded, 0.1) == 12800);
  CHECK(cfg.runs(1.0) == 10);
  CHECK(cfg.runs(0.1) == 1);
  CHECK(cfg.runs(0.01) == 1);
  TrainCfg bad;
  bad.entropy_coef = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("train_policy_run writes logs, checkpoints and one record per test episode") {
  const fs::path dir = scratch("run");
  const EnvConfig ec = desk_env_config(64);
  Observer ob(input(Variant::Original));
  TrainCfg cfg;
  cfg.epochs = 2;
  cfg.rollout_steps = 10;
  cfg.checkpoints_per_run = 4;
  cfg.test_episodes = 3;
  VirtualClock clock;
  const RunResult r = train_policy_run(ob, ec, PolicyConfig{}, cfg, 40, 5, 6, dir, clock);
  CHECK(r.log.size() == 4);
  CHECK(r.checkpoints.size() == 4);
  CHECK(r.evals.size() == 4);
  for (const auto& e : r.evals) CHECK(e.episodes.size() == 3);
  for (const auto& c : r.checkpoints) CHECK(fs::exists(c));
  const auto back = read_train_log(dir / "train_log.csv");
  REQUIRE(back.size() == r.log.size());
  CHECK(back[3].update_idx == 3);
  CHECK(back[3].wall_seconds == doctest::Approx(r.log[3].wall_seconds).epsilon(1e-10));
  CHECK(r.log[0].wall_seconds > 0.0);

  std::ifstream ev(dir / "eval.csv");
  std::string line;
  int rows = 0;
  while (std::getline(ev, line)) ++rows;
  CHECK(rows == 5);

  // Same seed, same virtual clock: identical artifacts.
  const fs::path dir2 = scratch("run2");
  VirtualClock clock2;
  train_policy_run(ob, ec, PolicyConfig{}, cfg, 40, 5, 6, dir2, clock2);
  for (const char* f : {"train_log.csv", "eval.csv", "episodes.csv"}) {
    std::ifstream a(dir / f), b(dir2 / f);
    const std::string sa((std::istreambuf_iterator<char>(a)), {});
    const std::string sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
  }
}
