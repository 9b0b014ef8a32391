#pragma once

#include "tribench/core.hpp"

#include <array>
#include <iosfwd>
#include <vector>

namespace tribench {

struct DistanceConstraint {
  int i = 0;
  int j = 0;
  double rest_length = 0.0;
  double stiffness = 1.0;
};

enum class GripperId { A, B, C };

struct GripperState {
  GripperId id = GripperId::A;
  Vec3 position = Vec3::Zero();
  bool controlled = false;
};

struct Aabb {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Zero();

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
  Vec3 extent() const { return max - min; }
};

// One grasp-and-pull: grasp at `grasp`, drag the grasped patch to `target`.
struct Action {
  Vec3 grasp = Vec3::Zero();
  Vec3 target = Vec3::Zero();
};

struct SimConfig {
  int grid_nx = 17;
  int grid_ny = 21;
  Eigen::Vector2d sheet_size{0.08, 0.10};
  Vec3 origin{0.335, 0.102, 0.465};
  double dt = 1.0 / 60.0;
  int solver_iters = 20;
  Vec3 gravity = Vec3::Zero();
  double damping = 0.02;
  double stiffness = 1.0;
  double tissue_mass = 0.02;  // kg, spread evenly over the free particles
  double grasp_radius = 0.008;
  int pull_substeps = 30;
  int settle_steps = 30;
  Aabb workspace{Vec3{0.275, 0.097, 0.405}, Vec3{0.395, 0.132, 0.545}};

  // Sheet layout, as fractions of the grid. Rows run along the 10 cm side,
  // row 0 is the edge held by the two fixed grippers.
  double pin_left = 0.0;
  double pin_right = 1.0;
  double line_row = 0.2;
  double line_span_lo = 0.25;
  double line_span_hi = 0.75;
  double fold_row = 0.5;  // >= 1 disables the initial fold
  double fold_radius = 0.005;
  Vec3 gripper_home{0.335, 0.150, 0.465};

  void validate() const;
};

struct ResectionLine {
  std::vector<int> path;         // particle row carrying the colored line
  std::vector<int> strip_next;   // matching particles of the next row (line width)
  std::array<int, 2> endpoints{0, 0};
};

struct TissueState {
  int nx = 0;
  int ny = 0;
  Eigen::Matrix3Xd positions;
  Eigen::Matrix3Xd velocities;
  Eigen::VectorXd inv_mass;
  std::vector<int> pinned;
  std::vector<DistanceConstraint> constraints;
  ResectionLine line;
  std::array<GripperState, 3> grippers;

  // Grasp bookkeeping: attached particles follow the controlled gripper rigidly.
  std::vector<int> attached;
  std::vector<Vec3> attach_offsets;

  bool last_action_noop = false;
  int last_attached_count = 0;

  int particle_count() const { return static_cast<int>(positions.cols()); }
  int index(int i, int j) const { return j * nx + i; }
  Vec3 position(int k) const { return positions.col(k); }
  const GripperState& controlled_gripper() const { return grippers[2]; }
  std::array<Vec3, 2> line_endpoints() const {
    return {position(line.endpoints[0]), position(line.endpoints[1])};
  }
  void check_invariants() const;
};

TissueState init_tissue(const SimConfig& cfg);

// One PBD step: predict, project constraints, update velocities.
TissueState step(const TissueState& state, const SimConfig& cfg);
void step_in_place(TissueState& state, const SimConfig& cfg);

TissueState apply_action(const TissueState& state, const Action& a, const SimConfig& cfg);

void settle(TissueState& state, const SimConfig& cfg, int steps);

// Closed-form projection of a single distance constraint. Returns the
// constraint residual |xi - xj| - rest before projection.
double project_distance(Vec3& xi, Vec3& xj, double wi, double wj, double rest,
                        double stiffness);

double max_strain(const TissueState& state);
double kinetic_energy(const TissueState& state);

void write_trajectory_header(std::ostream& os);
void write_trajectory_rows(std::ostream& os, int step_index, const TissueState& state);

}  // namespace tribench
