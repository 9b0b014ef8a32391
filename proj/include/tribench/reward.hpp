#pragma once

#include "tribench/core.hpp"
#include "tribench/raster.hpp"

#include <array>
#include <cmath>
#include <optional>
#include <string>

namespace tribench {

struct Hsv {
  int h = 0;  // [0,180), half-degree hue
  int s = 0;
  int v = 0;
};

struct HsvBand {
  Hsv lower;
  Hsv upper;
  bool contains(int h, int s, int v) const {
    return h >= lower.h && h <= upper.h && s >= lower.s && s <= upper.s && v >= lower.v &&
           v <= upper.v;
  }
};

struct HsvBounds {
  HsvBand band{{0, 100, 100}, {10, 255, 255}};
  std::optional<HsvBand> second_band = HsvBand{{170, 100, 100}, {179, 255, 255}};

  void validate() const;
};

struct RewardConfig {
  double eps1_fraction = 0.005;  // of frame pixels, used when eps1 == 0
  long eps1 = 0;
  double eps2 = 0.01;
  HsvBounds bounds;

  long eps1_for(std::size_t pixels) const {
    return eps1 > 0 ? eps1 : std::max(1L, static_cast<long>(std::ceil(eps1_fraction * pixels)));
  }
  void validate() const;
};

struct EndpointCheck {
  bool inside = false;
  double distance = 0.0;
};

struct GoalReport {
  long n_mask = 0;
  bool goal1 = false;
  bool goal2 = false;
  std::array<EndpointCheck, 2> per_endpoint{};
  double reward = 0.0;

  std::string csv_row() const;
  static std::string csv_header();
};

// 8-bit HSV (H halved into [0,180)), from a B,G,R image.
ImageBuffer bgr_to_hsv(const ImageBuffer& img);
long mask_count(const ImageBuffer& hsv, const HsvBounds& b);

template <typename Scalar>
void require_triangle(const Vec3T<Scalar>& a, const Vec3T<Scalar>& b, const Vec3T<Scalar>& c) {
  const Scalar scale = std::max({(b - a).squaredNorm(), (c - a).squaredNorm(), (c - b).squaredNorm()});
  if (!(scale > Scalar(0)) || (b - a).cross(c - a).norm() <= Scalar(1e-12) * scale)
    throw DegenerateGeometry("degenerate triangle: points are collinear");
}

template <typename Scalar>
struct PlaneProjection {
  Vec3T<Scalar> point;
  Scalar distance;
};

template <typename Scalar>
PlaneProjection<Scalar> project_to_plane(const Vec3T<Scalar>& p, const Vec3T<Scalar>& a,
                                         const Vec3T<Scalar>& b, const Vec3T<Scalar>& c) {
  require_triangle(a, b, c);
  const Vec3T<Scalar> n = (b - a).cross(c - a).normalized();
  const Scalar signed_dist = (p - a).dot(n);
  return {p - signed_dist * n, std::abs(signed_dist)};
}

// Same-side test: the three edge cross products must point the same way.
// Points on the boundary count as inside.
template <typename Scalar>
bool inside_triangle(const Vec3T<Scalar>& q, const Vec3T<Scalar>& a, const Vec3T<Scalar>& b,
                     const Vec3T<Scalar>& c) {
  require_triangle(a, b, c);
  const Vec3T<Scalar> v1 = (b - a).cross(q - b);
  const Vec3T<Scalar> v2 = (c - b).cross(q - c);
  const Vec3T<Scalar> v3 = (a - c).cross(q - a);
  return v1.dot(v2) >= Scalar(0) && v1.dot(v3) >= Scalar(0);
}

double reward_from_goals(bool goal1, bool goal2);

GoalReport evaluate_reward(const ImageBuffer& frame, const std::array<Vec3, 2>& endpoints,
                           const std::array<Vec3, 3>& grippers, const RewardConfig& cfg);

// Pose file: 9 gripper coordinates (A, B, C) then 6 endpoint coordinates.
struct PoseFile {
  std::array<Vec3, 3> grippers;
  std::array<Vec3, 2> endpoints;
};
PoseFile read_pose_file(const std::string& path);

}  // namespace tribench
