#pragma once

#include "tribench/raster.hpp"
#include "tribench/reward.hpp"
#include "tribench/sim.hpp"

namespace tribench {

using ActionVec = Eigen::Matrix<double, 6, 1>;

struct EnvConfig {
  SimConfig sim;
  Camera camera;
  RenderStyle style;
  RewardConfig reward;
  int horizon = 5;            // grasp-pull actions per episode
  double reset_jitter = 0.01;  // uniform +- offset of the sheet origin in x and z

  void validate() const;
};

struct StepResult {
  double reward = 0.0;
  bool done = false;
  bool success = false;
  bool diverged = false;
  GoalReport report;
};

// Reduced-cost setup used for desk-scale experiments: 9x11 particle grid,
// shorter pull/settle phases, square frames of the given side.
EnvConfig desk_env_config(int side = 64);

// One triangulation episode: grasp-pull actions on a freshly jittered sheet,
// reward from the rendered frame after every action.
class TissueEnv {
 public:
  explicit TissueEnv(EnvConfig cfg);

  void reset(std::uint64_t seed);
  StepResult step(const Action& a);

  const TissueState& state() const { return state_; }
  const ImageBuffer& frame() const { return frame_; }
  const EnvConfig& config() const { return cfg_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }

  // a in [-1,1]^6 (grasp xyz, target xyz) mapped affinely onto the workspace.
  Action action_from_unit(const ActionVec& a) const;
  GoalReport evaluate() const;

 private:
  EnvConfig cfg_;
  TissueState state_;
  ImageBuffer frame_;
  int steps_ = 0;
  bool done_ = true;
};

}  // namespace tribench
