#include "tribench/env.hpp"

#include "tribench/rng.hpp"

#include <random>

namespace tribench {

void EnvConfig::validate() const {
  sim.validate();
  camera.validate();
  reward.validate();
  if (horizon < 1) throw ConfigError("env: horizon must be >= 1");
  if (reset_jitter < 0.0) throw ConfigError("env: reset_jitter must be >= 0");
}

EnvConfig desk_env_config(int side) {
  EnvConfig c;
  c.sim.grid_nx = 9;
  c.sim.grid_ny = 11;
  c.sim.pull_substeps = 15;
  c.sim.settle_steps = 15;
  c.camera.width = side;
  c.camera.height = side;
  return c;
}

TissueEnv::TissueEnv(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

void TissueEnv::reset(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-cfg_.reset_jitter, cfg_.reset_jitter);
  SimConfig sc = cfg_.sim;
  sc.origin.x() += u(rng);
  sc.origin.z() += u(rng);
  state_ = init_tissue(sc);
  frame_ = render(state_, cfg_.camera, cfg_.style);
  steps_ = 0;
  done_ = false;
}

Action TissueEnv::action_from_unit(const ActionVec& a) const {
  const Aabb& w = cfg_.sim.workspace;
  auto map = [&](const Vec3& v) {
    const Vec3 t = (v.cwiseMax(-1.0).cwiseMin(1.0).array() + 1.0) * 0.5;
    return Vec3(w.min.array() + t.array() * w.extent().array());
  };
  return {map(a.head<3>()), map(a.tail<3>())};
}

GoalReport TissueEnv::evaluate() const {
  const std::array<Vec3, 3> grippers{state_.grippers[0].position, state_.grippers[1].position,
                                     state_.grippers[2].position};
  return evaluate_reward(frame_, state_.line_endpoints(), grippers, cfg_.reward);
}

StepResult TissueEnv::step(const Action& a) {
  if (done_) throw ContractError("env: step after the episode ended; call reset");
  StepResult r;
  ++steps_;
  try {
    state_ = apply_action(state_, a, cfg_.sim);
    frame_ = render(state_, cfg_.camera, cfg_.style);
    r.report = evaluate();
    r.reward = r.report.reward;
  } catch (const SimulationDiverged&) {
    r.diverged = true;
    r.reward = 0.0;
  }
  r.success = r.reward == 1.0;
  r.done = r.success || r.diverged || steps_ >= cfg_.horizon;
  done_ = r.done;
  return r;
}

}  // namespace tribench
