#include "tribench/sim.hpp"

#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>

namespace tribench {

namespace {

int frac_index(double frac, int n) {
  return static_cast<int>(std::lround(frac * (n - 1)));
}

// Maps flat sheet coordinates (u across, v along) to the folded initial
// shape: rows beyond the crease wrap around a half cylinder and lie back
// over the sheet at height 2r.
Vec3 folded_point(double u, double v, double v_fold, double r, bool fold) {
  if (!fold || v <= v_fold) return {u, 0.0, v};
  const double s = v - v_fold;
  const double arc = std::numbers::pi * r;
  if (s <= arc) {
    const double theta = s / r;
    return {u, r - r * std::cos(theta), v_fold + r * std::sin(theta)};
  }
  return {u, 2.0 * r, v_fold - (s - arc)};
}

bool finite(const Eigen::Matrix3Xd& m) { return m.allFinite(); }

}  // namespace

void SimConfig::validate() const {
  std::ostringstream err;
  if (grid_nx < 2 || grid_ny < 2) err << "grid must be at least 2x2; ";
  if (!(sheet_size.array() > 0.0).all()) err << "sheet_size must be positive; ";
  if (!(dt > 0.0)) err << "dt must be > 0; ";
  if (solver_iters < 1) err << "solver_iters must be >= 1; ";
  if (!(grasp_radius > 0.0)) err << "grasp_radius must be > 0; ";
  if (!(damping >= 0.0 && damping < 1.0)) err << "damping must be in [0,1); ";
  if (!(stiffness > 0.0 && stiffness <= 1.0)) err << "stiffness must be in (0,1]; ";
  if (pull_substeps < 1) err << "pull_substeps must be >= 1; ";
  if (settle_steps < 0) err << "settle_steps must be >= 0; ";
  if (!(tissue_mass > 0.0)) err << "tissue_mass must be > 0; ";
  if (!(workspace.max.array() > workspace.min.array()).all()) err << "workspace box is empty; ";
  const int pl = frac_index(pin_left, grid_nx), pr = frac_index(pin_right, grid_nx);
  if (pl < 0 || pr >= grid_nx || pl == pr) err << "pin positions must be distinct edge particles; ";
  const int jl = frac_index(line_row, grid_ny);
  if (jl < 0 || jl + 1 >= grid_ny) err << "line_row must leave room for the line strip; ";
  const int i0 = frac_index(line_span_lo, grid_nx), i1 = frac_index(line_span_hi, grid_nx);
  if (i0 < 0 || i1 >= grid_nx || i0 >= i1) err << "line span must cover at least two particles; ";
  if (fold_row < 1.0) {
    const int jf = frac_index(fold_row, grid_ny);
    if (jf <= jl + 1) err << "fold_row must lie beyond the line strip; ";
    if (!(fold_radius > 0.0)) err << "fold_radius must be > 0; ";
  }
  if (!err.str().empty()) throw ConfigError("invalid SimConfig: " + err.str());
}

void TissueState::check_invariants() const {
  const auto n = positions.cols();
  if (velocities.cols() != n || inv_mass.size() != n)
    throw ContractError("TissueState: array lengths differ");
  for (int k : pinned)
    if (k < 0 || k >= n || inv_mass[k] != 0.0)
      throw ContractError("TissueState: pinned particle with nonzero inverse mass");
  for (int k : line.endpoints)
    if (k < 0 || k >= n) throw ContractError("TissueState: resection endpoint out of range");
}

TissueState init_tissue(const SimConfig& cfg) {
  cfg.validate();
  TissueState s;
  s.nx = cfg.grid_nx;
  s.ny = cfg.grid_ny;
  const int n = s.nx * s.ny;
  const double width = cfg.sheet_size.x(), length = cfg.sheet_size.y();
  const double hx = width / (s.nx - 1), hz = length / (s.ny - 1);

  const bool fold = cfg.fold_row < 1.0;
  const double v_fold = fold ? frac_index(cfg.fold_row, s.ny) * hz : length;

  s.positions.resize(3, n);
  for (int j = 0; j < s.ny; ++j)
    for (int i = 0; i < s.nx; ++i)
      s.positions.col(s.index(i, j)) =
          folded_point(i * hx - 0.5 * width, j * hz, v_fold, cfg.fold_radius, fold);
  const Vec3 shift = cfg.origin - s.positions.rowwise().mean();
  s.positions.colwise() += shift;
  s.velocities = Eigen::Matrix3Xd::Zero(3, n);

  s.pinned = {s.index(frac_index(cfg.pin_left, s.nx), 0),
              s.index(frac_index(cfg.pin_right, s.nx), 0)};
  const double w = (n - 2) / cfg.tissue_mass;
  s.inv_mass = Eigen::VectorXd::Constant(n, w);
  for (int k : s.pinned) s.inv_mass[k] = 0.0;

  const double diag = std::hypot(hx, hz);
  auto add = [&](int a, int b, double rest) {
    s.constraints.push_back({a, b, rest, cfg.stiffness});
  };
  for (int j = 0; j < s.ny; ++j)
    for (int i = 0; i < s.nx; ++i) {
      if (i + 1 < s.nx) add(s.index(i, j), s.index(i + 1, j), hx);
      if (j + 1 < s.ny) add(s.index(i, j), s.index(i, j + 1), hz);
      if (i + 1 < s.nx && j + 1 < s.ny) {
        add(s.index(i, j), s.index(i + 1, j + 1), diag);
        add(s.index(i + 1, j), s.index(i, j + 1), diag);
      }
    }

  const int jl = frac_index(cfg.line_row, s.ny);
  const int i0 = frac_index(cfg.line_span_lo, s.nx), i1 = frac_index(cfg.line_span_hi, s.nx);
  for (int i = i0; i <= i1; ++i) {
    s.line.path.push_back(s.index(i, jl));
    s.line.strip_next.push_back(s.index(i, jl + 1));
  }
  s.line.endpoints = {s.line.path.front(), s.line.path.back()};

  s.grippers[0] = {GripperId::A, s.position(s.pinned[0]), false};
  s.grippers[1] = {GripperId::B, s.position(s.pinned[1]), false};
  s.grippers[2] = {GripperId::C, cfg.gripper_home, true};
  s.check_invariants();
  return s;
}

double project_distance(Vec3& xi, Vec3& xj, double wi, double wj, double rest,
                        double stiffness) {
  const Vec3 d = xi - xj;
  const double len = d.norm();
  const double residual = len - rest;
  const double wsum = wi + wj;
  if (wsum <= 0.0 || len <= 0.0) return residual;
  const Vec3 corr = (stiffness * residual / (wsum * len)) * d;
  xi -= wi * corr;
  xj += wj * corr;
  return residual;
}

void step_in_place(TissueState& s, const SimConfig& cfg) {
  const int n = s.particle_count();
  const double dt = cfg.dt;
  const double keep = 1.0 - cfg.damping;

  // Effective inverse masses: grasped particles are prescribed.
  Eigen::VectorXd w = s.inv_mass;
  for (int k : s.attached) w[k] = 0.0;

  Eigen::Matrix3Xd pred = s.positions;
  for (int k = 0; k < n; ++k) {
    if (w[k] == 0.0) continue;
    s.velocities.col(k) = keep * (s.velocities.col(k) + dt * cfg.gravity);
    pred.col(k) += dt * s.velocities.col(k);
  }
  const Vec3 grip = s.grippers[2].position;
  for (std::size_t a = 0; a < s.attached.size(); ++a)
    pred.col(s.attached[a]) = grip + s.attach_offsets[a];

  for (int it = 0; it < cfg.solver_iters; ++it) {
    for (const auto& c : s.constraints) {
      const double wi = w[c.i], wj = w[c.j];
      if (wi + wj == 0.0) continue;
      Vec3 xi = pred.col(c.i), xj = pred.col(c.j);
      project_distance(xi, xj, wi, wj, c.rest_length, c.stiffness);
      pred.col(c.i) = xi;
      pred.col(c.j) = xj;
    }
  }

  const double inv_dt = 1.0 / dt;
  for (int k = 0; k < n; ++k) {
    if (s.inv_mass[k] == 0.0) continue;  // pinned: never written
    s.velocities.col(k) = (pred.col(k) - s.positions.col(k)) * inv_dt;
    s.positions.col(k) = pred.col(k);
  }
  if (!finite(s.positions) || !finite(s.velocities))
    throw SimulationDiverged("non-finite particle state after PBD step");
}

TissueState step(const TissueState& state, const SimConfig& cfg) {
  TissueState next = state;
  step_in_place(next, cfg);
  return next;
}

void settle(TissueState& state, const SimConfig& cfg, int steps) {
  for (int i = 0; i < steps; ++i) step_in_place(state, cfg);
}

TissueState apply_action(const TissueState& state, const Action& a, const SimConfig& cfg) {
  if (!cfg.workspace.contains(a.grasp) || !cfg.workspace.contains(a.target))
    throw ContractError("apply_action: action outside the workspace box");
  TissueState s = state;
  auto& gripper = s.grippers[2];
  gripper.position = a.grasp;

  s.attached.clear();
  s.attach_offsets.clear();
  const double r2 = cfg.grasp_radius * cfg.grasp_radius;
  for (int k = 0; k < s.particle_count(); ++k) {
    if (s.inv_mass[k] == 0.0) continue;
    const Vec3 off = s.positions.col(k) - a.grasp;
    if (off.squaredNorm() <= r2) {
      s.attached.push_back(k);
      s.attach_offsets.push_back(off);
    }
  }
  s.last_attached_count = static_cast<int>(s.attached.size());
  s.last_action_noop = s.attached.empty();

  for (int sub = 1; sub <= cfg.pull_substeps; ++sub) {
    const double t = static_cast<double>(sub) / cfg.pull_substeps;
    gripper.position = a.grasp + t * (a.target - a.grasp);
    step_in_place(s, cfg);
  }
  gripper.position = a.target;
  s.attached.clear();
  s.attach_offsets.clear();
  settle(s, cfg, cfg.settle_steps);
  return s;
}

double max_strain(const TissueState& s) {
  double m = 0.0;
  for (const auto& c : s.constraints) {
    const double len = (s.positions.col(c.i) - s.positions.col(c.j)).norm();
    m = std::max(m, std::abs(len - c.rest_length) / c.rest_length);
  }
  return m;
}

double kinetic_energy(const TissueState& s) {
  double e = 0.0;
  for (int k = 0; k < s.particle_count(); ++k)
    if (s.inv_mass[k] > 0.0) e += 0.5 * s.velocities.col(k).squaredNorm() / s.inv_mass[k];
  return e;
}

void write_trajectory_header(std::ostream& os) { os << "step,particle,x,y,z\n"; }

void write_trajectory_rows(std::ostream& os, int step_index, const TissueState& s) {
  for (int k = 0; k < s.particle_count(); ++k)
    os << step_index << ',' << k << ',' << s.positions(0, k) << ',' << s.positions(1, k) << ','
       << s.positions(2, k) << '\n';
}

}  // namespace tribench
