#include <doctest.h>

#include "tribench/sim.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace tribench;

namespace {

SimConfig flat_config(int nx = 9, int ny = 11) {
  SimConfig cfg;
  cfg.grid_nx = nx;
  cfg.grid_ny = ny;
  cfg.fold_row = 1.0;
  cfg.workspace = {Vec3::Constant(-10.0), Vec3::Constant(10.0)};
  return cfg;
}

// Two-particle projection solved through the inverse-mass-weighted centre:
// the centre is invariant and the particles end `rest` apart on the same axis.
std::pair<Vec3, Vec3> projection_oracle(const Vec3& xi, const Vec3& xj, double wi, double wj,
                                        double rest, double k) {
  const double mi = 1.0 / wi, mj = 1.0 / wj;
  const Vec3 centre = (mi * xi + mj * xj) / (mi + mj);
  const Vec3 n = (xi - xj).normalized();
  const Vec3 xi_full = centre + n * rest * (mj / (mi + mj));
  const Vec3 xj_full = centre - n * rest * (mi / (mi + mj));
  return {xi + k * (xi_full - xi), xj + k * (xj_full - xj)};
}

TissueState two_particles(double stretch) {
  TissueState s;
  s.nx = 2;
  s.ny = 1;
  s.positions = Eigen::Matrix3Xd::Zero(3, 2);
  s.positions(0, 1) = 0.01 * (1.0 + stretch);
  s.velocities = Eigen::Matrix3Xd::Zero(3, 2);
  s.inv_mass = Eigen::VectorXd::Constant(2, 100.0);
  s.constraints = {{0, 1, 0.01, 1.0}};
  s.line.path = {0, 1};
  s.line.endpoints = {0, 1};
  return s;
}

}  // namespace

TEST_CASE("init_tissue builds the grid from rest geometry") {
  SimConfig cfg = flat_config(9, 11);
  const TissueState s = init_tissue(cfg);
  CHECK(s.particle_count() == 99);
  for (const auto& c : s.constraints) {
    const bool row = c.j == c.i + 1 && c.i / 9 == c.j / 9;
    const bool col = c.j == c.i + 9;
    if (row || col) CHECK(c.rest_length == doctest::Approx(0.01).epsilon(1e-12));
  }
  CHECK(s.constraints.size() == static_cast<std::size_t>(8 * 11 + 9 * 10 + 2 * 8 * 10));
}

TEST_CASE("initial centroid sits at the configured origin") {
  for (double fold : {1.0, 0.5}) {
    SimConfig cfg;
    cfg.fold_row = fold;
    const TissueState s = init_tissue(cfg);
    const Vec3 mean = s.positions.rowwise().mean();
    CHECK((mean - Vec3(0.335, 0.102, 0.465)).norm() < 1e-9);
  }
}

TEST_CASE("pinned particles carry zero inverse mass and sit on the fixed grippers") {
  const TissueState s = init_tissue(SimConfig{});
  REQUIRE(s.pinned.size() == 2);
  for (int k : s.pinned) CHECK(s.inv_mass[k] == 0.0);
  CHECK(s.grippers[0].position == s.position(s.pinned[0]));
  CHECK(s.grippers[1].position == s.position(s.pinned[1]));
  CHECK(s.grippers[2].controlled);
  CHECK_FALSE(s.grippers[0].controlled);
  CHECK_FALSE(s.grippers[1].controlled);
}

TEST_CASE("invalid configuration is rejected") {
  SimConfig cfg;
  cfg.grid_nx = 1;
  CHECK_THROWS_AS(init_tissue(cfg), ConfigError);
  cfg = SimConfig{};
  cfg.dt = 0.0;
  CHECK_THROWS_AS(init_tissue(cfg), ConfigError);
  cfg = SimConfig{};
  cfg.solver_iters = 0;
  CHECK_THROWS_AS(init_tissue(cfg), ConfigError);
  cfg = SimConfig{};
  cfg.grasp_radius = -1.0;
  CHECK_THROWS_AS(init_tissue(cfg), ConfigError);
}

TEST_CASE("satisfied sheet at rest is a fixed point") {
  SimConfig cfg = flat_config();
  const TissueState s0 = init_tissue(cfg);
  const TissueState s1 = step(s0, cfg);
  CHECK((s1.positions - s0.positions).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("pinned particles do not move under gravity") {
  SimConfig cfg = flat_config();
  cfg.gravity = {0.0, -9.81, 0.0};
  TissueState s = init_tissue(cfg);
  const Eigen::Matrix3Xd start = s.positions;
  for (int i = 0; i < 100; ++i) step_in_place(s, cfg);
  for (int k : s.pinned) CHECK((s.positions.col(k) - start.col(k)).norm() == 0.0);
  CHECK((s.positions - start).norm() > 0.0);
}

TEST_CASE("projection of a stretched constraint reduces its residual") {
  SimConfig cfg = flat_config();
  cfg.solver_iters = 1;
  TissueState s = two_particles(0.10);
  const double before = max_strain(s);
  step_in_place(s, cfg);
  CHECK(max_strain(s) < before);
}

TEST_CASE("project_distance matches the centre-of-mass closed form") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0), w(0.1, 10.0), k(0.05, 1.0), len(0.01, 2.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Vec3 xi(u(rng), u(rng), u(rng)), xj(u(rng), u(rng), u(rng));
    const double wi = w(rng), wj = w(rng), rest = len(rng), stiff = k(rng);
    const auto [oi, oj] = projection_oracle(xi, xj, wi, wj, rest, stiff);
    project_distance(xi, xj, wi, wj, rest, stiff);
    CHECK((xi - oi).norm() < 1e-12);
    CHECK((xj - oj).norm() < 1e-12);
  }
}

TEST_CASE("grasped corner follows the pull target") {
  SimConfig cfg = flat_config();
  cfg.settle_steps = 0;
  const TissueState s0 = init_tissue(cfg);
  const int corner = s0.index(0, s0.ny - 1);
  const Vec3 p = s0.position(corner);
  const Vec3 d = p + Vec3(0.0, 0.0, 0.02);
  const TissueState s1 = apply_action(s0, {p, d}, cfg);
  CHECK_FALSE(s1.last_action_noop);
  CHECK(std::abs(s1.position(corner).z() - d.z()) < 0.005);
  CHECK(s1.controlled_gripper().position == d);
  CHECK(s1.attached.empty());
}

TEST_CASE("grasping empty space is a flagged no-op") {
  SimConfig cfg = flat_config();
  const TissueState s0 = init_tissue(cfg);
  const Vec3 far = s0.position(0) + Vec3(0.0, 1.0, 0.0);
  const TissueState s1 = apply_action(s0, {far, far + Vec3(0.0, 0.0, 0.01)}, cfg);
  CHECK(s1.last_action_noop);
  CHECK((s1.positions - s0.positions).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("zero-length pull equals holding the grasp while the sheet settles") {
  SimConfig cfg;
  cfg.workspace = {Vec3::Constant(-10.0), Vec3::Constant(10.0)};
  const TissueState s0 = init_tissue(cfg);
  const int k = s0.index(3, s0.ny / 2 + 2);
  const Vec3 p = s0.position(k) + Vec3(0.001, 0.0, 0.0);
  const TissueState a = apply_action(s0, {p, p}, cfg);

  TissueState b = s0;
  b.grippers[2].position = p;
  for (int i = 0; i < b.particle_count(); ++i) {
    const Vec3 off = b.position(i) - p;
    if (b.inv_mass[i] > 0.0 && off.norm() <= cfg.grasp_radius) {
      b.attached.push_back(i);
      b.attach_offsets.push_back(off);
    }
  }
  REQUIRE_FALSE(b.attached.empty());
  settle(b, cfg, cfg.pull_substeps);
  b.attached.clear();
  b.attach_offsets.clear();
  settle(b, cfg, cfg.settle_steps);
  CHECK((a.positions - b.positions).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("actions outside the workspace violate the contract") {
  SimConfig cfg;
  const TissueState s0 = init_tissue(cfg);
  CHECK_THROWS_AS(apply_action(s0, {Vec3::Zero(), Vec3::Zero()}, cfg), ContractError);
}

TEST_CASE("strain stays under 2% after settling, with and without a pull") {
  SimConfig cfg;
  TissueState s = init_tissue(cfg);
  settle(s, cfg, 120);
  CHECK(max_strain(s) <= 0.02);
  const int k = s.index(s.nx / 2, s.ny - 1);
  const Vec3 p = s.position(k);
  const Vec3 d = (p + Vec3(0.0, 0.005, 0.04)).cwiseMin(cfg.workspace.max);
  s = apply_action(s, {p, d}, cfg);
  settle(s, cfg, 120);
  CHECK(max_strain(s) <= 0.02);
}

TEST_CASE("kinetic energy decays once the initial settle transient has passed") {
  SimConfig cfg;
  TissueState s = init_tissue(cfg);
  settle(s, cfg, 10);
  double prev = kinetic_energy(s);
  for (int window = 0; window < 20; ++window) {
    settle(s, cfg, 10);
    const double ke = kinetic_energy(s);
    CHECK(ke <= prev + 1e-15);
    prev = ke;
  }
}

TEST_CASE("identical inputs give bit-identical trajectories") {
  SimConfig cfg;
  const TissueState s0 = init_tissue(cfg);
  const int k = s0.index(2, s0.ny - 1);
  const Action a{s0.position(k), s0.position(k) + Vec3(0.01, 0.005, 0.02)};
  const TissueState x = apply_action(s0, a, cfg);
  const TissueState y = apply_action(s0, a, cfg);
  CHECK((x.positions.array() == y.positions.array()).all());
  CHECK((x.velocities.array() == y.velocities.array()).all());
}

TEST_CASE("non-finite state raises a divergence error") {
  SimConfig cfg = flat_config();
  TissueState s = init_tissue(cfg);
  s.positions(0, 5) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(step_in_place(s, cfg), SimulationDiverged);
}

TEST_CASE("trajectory dump writes one row per particle") {
  const TissueState s = init_tissue(flat_config(3, 4));
  std::ostringstream os;
  write_trajectory_header(os);
  write_trajectory_rows(os, 0, s);
  int lines = 0;
  for (char c : os.str()) lines += c == '\n';
  CHECK(lines == 1 + 12);
  CHECK(os.str().rfind("step,particle,x,y,z\n", 0) == 0);
}
