#include <doctest.h>

#include "tribench/reward.hpp"

#include <cstdio>
#include <fstream>
#include <random>

using namespace tribench;

namespace {

ImageBuffer solid(int w, int h, Bgr c) {
  ImageBuffer img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[k];
  return img;
}

Hsv hsv_of(Bgr c) {
  const ImageBuffer h = bgr_to_hsv(solid(1, 1, c));
  return {h.at(0, 0, 0), h.at(0, 0, 1), h.at(0, 0, 2)};
}

// Barycentric coordinates of q (assumed in the plane of abc).
Eigen::Vector3d barycentric(const Vec3& q, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 v0 = b - a, v1 = c - a, v2 = q - a;
  const double d00 = v0.dot(v0), d01 = v0.dot(v1), d11 = v1.dot(v1);
  const double d20 = v2.dot(v0), d21 = v2.dot(v1);
  const double den = d00 * d11 - d01 * d01;
  const double v = (d11 * d20 - d01 * d21) / den;
  const double w = (d00 * d21 - d01 * d20) / den;
  return {1.0 - v - w, v, w};
}

}  // namespace

TEST_CASE("8-bit HSV matches the half-degree hue convention") {
  const Hsv red = hsv_of({0, 0, 255});
  CHECK(red.h == 0);
  CHECK(red.s == 255);
  CHECK(red.v == 255);
  CHECK(hsv_of({0, 255, 0}).h == 60);
  CHECK(hsv_of({255, 0, 0}).h == 120);
  const Hsv gray = hsv_of({128, 128, 128});
  CHECK(gray.s == 0);
  CHECK(gray.v == 128);
  CHECK(hsv_of({0, 0, 0}).v == 0);
  // Magenta-red wraps toward the top of the hue range.
  CHECK(hsv_of({40, 0, 255}).h >= 170);
}

TEST_CASE("mask counts the union of both red bands") {
  ImageBuffer img = solid(4, 1, {100, 100, 100});
  img.at(0, 0, 2) = 255, img.at(0, 0, 1) = 0, img.at(0, 0, 0) = 0;
  img.at(1, 0, 2) = 255, img.at(1, 0, 1) = 0, img.at(1, 0, 0) = 40;
  CHECK(mask_count(bgr_to_hsv(img), HsvBounds{}) == 2);
  HsvBounds single;
  single.second_band.reset();
  CHECK(mask_count(bgr_to_hsv(img), single) == 1);
}

TEST_CASE("pixel threshold rounds up a fraction of the frame") {
  RewardConfig cfg;
  CHECK(cfg.eps1_for(128 * 128) == 82);
  CHECK(cfg.eps1_for(10) == 1);
  cfg.eps1 = 5;
  CHECK(cfg.eps1_for(128 * 128) == 5);
}

TEST_CASE("same-side test agrees with barycentric coordinates") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  int checked = 0;
  for (int t = 0; t < 2000; ++t) {
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng)), c(u(rng), u(rng), u(rng));
    if ((b - a).cross(c - a).norm() < 0.05) continue;
    const Eigen::Vector3d l(u(rng) + 0.3, u(rng) + 0.3, u(rng) + 0.3);
    const Vec3 q = (l[0] * a + l[1] * b + l[2] * c) / l.sum();
    const Eigen::Vector3d bc = barycentric(q, a, b, c);
    if (bc.cwiseAbs().minCoeff() < 1e-6) continue;
    CHECK(inside_triangle(q, a, b, c) == (bc.minCoeff() > 0.0));
    ++checked;
  }
  CHECK(checked > 1000);
}

TEST_CASE("boundary points count as inside") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  CHECK(inside_triangle(a, a, b, c));
  CHECK(inside_triangle(Vec3(0.5, 0.5, 0), a, b, c));
  CHECK(inside_triangle(Vec3(0.5, 0.0, 0), a, b, c));
  CHECK_FALSE(inside_triangle(Vec3(0.6, 0.6, 0), a, b, c));
  CHECK(inside_triangle<float>({0.2f, 0.2f, 0.0f}, {0, 0, 0}, {1, 0, 0}, {0, 1, 0}));
}

TEST_CASE("collinear grippers are degenerate geometry") {
  const Vec3 a(0, 0, 0), b(1, 1, 1), c(2, 2, 2);
  CHECK_THROWS_AS(inside_triangle(Vec3(0, 0, 0), a, b, c), DegenerateGeometry);
  CHECK_THROWS_AS(project_to_plane(Vec3(0, 0, 0), a, a, c), DegenerateGeometry);
  const ImageBuffer frame = solid(8, 8, {0, 0, 0});
  CHECK_THROWS_AS(evaluate_reward(frame, {a, b}, {a, b, c}, RewardConfig{}), DegenerateGeometry);
}

TEST_CASE("plane projection returns the foot point and unsigned distance") {
  const Vec3 a(0, 0, 0), b(1, 0, 0), c(0, 1, 0);
  const auto p = project_to_plane(Vec3(0.2, 0.3, -0.7), a, b, c);
  CHECK((p.point - Vec3(0.2, 0.3, 0.0)).norm() < 1e-15);
  CHECK(p.distance == doctest::Approx(0.7));
  // Tilted plane: distance equals |(p-a).n| computed independently.
  const Vec3 d(1, 2, 3), e(-1, 0.5, 2), f(0.3, -1, 1);
  const Vec3 q(0.1, 0.2, 0.3);
  const Vec3 n = (e - d).cross(f - d).normalized();
  const auto r = project_to_plane(q, d, e, f);
  CHECK(r.distance == doctest::Approx(std::abs((q - d).dot(n))).epsilon(1e-12));
  CHECK(std::abs((r.point - d).dot(n)) < 1e-12);
}

TEST_CASE("reward levels follow the two goals") {
  CHECK(reward_from_goals(false, false) == 0.0);
  CHECK(reward_from_goals(false, true) == 0.0);
  CHECK(reward_from_goals(true, false) == 0.5);
  CHECK(reward_from_goals(true, true) == 1.0);
}

TEST_CASE("evaluate_reward combines the mask and the triangle check") {
  const std::array<Vec3, 3> grip{Vec3(0, 0, 0), Vec3(0.1, 0, 0), Vec3(0.05, 0, 0.1)};
  const std::array<Vec3, 2> inside{Vec3(0.05, 0.005, 0.02), Vec3(0.04, -0.002, 0.03)};
  const std::array<Vec3, 2> lifted{Vec3(0.05, 0.02, 0.02), Vec3(0.04, 0.0, 0.03)};
  const std::array<Vec3, 2> outside{Vec3(0.05, 0.0, 0.02), Vec3(0.2, 0.0, 0.03)};
  ImageBuffer frame = solid(20, 20, {0, 0, 0});
  RewardConfig cfg;
  cfg.eps1 = 3;

  CHECK(evaluate_reward(frame, inside, grip, cfg).reward == 0.0);
  for (int x = 0; x < 3; ++x) frame.at(x, 0, 2) = 255;
  const GoalReport full = evaluate_reward(frame, inside, grip, cfg);
  CHECK(full.n_mask == 3);
  CHECK(full.goal1);
  CHECK(full.goal2);
  CHECK(full.reward == 1.0);
  CHECK(full.per_endpoint[0].distance == doctest::Approx(0.005));

  CHECK(evaluate_reward(frame, lifted, grip, cfg).reward == 0.5);
  const GoalReport out = evaluate_reward(frame, outside, grip, cfg);
  CHECK(out.reward == 0.5);
  CHECK_FALSE(out.per_endpoint[1].inside);

  cfg.eps1 = 4;
  const GoalReport few = evaluate_reward(frame, inside, grip, cfg);
  CHECK(few.goal2);
  CHECK(few.reward == 0.0);
}

TEST_CASE("goal report rows line up with the header") {
  GoalReport r;
  auto commas = [](const std::string& s) { return std::count(s.begin(), s.end(), ','); };
  CHECK(commas(r.csv_row()) == commas(GoalReport::csv_header()));
}

TEST_CASE("pose files need fifteen numbers") {
  const std::string path = "pose_test_tmp.txt";
  {
    std::ofstream os(path);
    os << "0 0 0  1 0 0  0 1 0\n0.1 0.1 0  0.2 0.2 0.5\n";
  }
  const PoseFile p = read_pose_file(path);
  CHECK(p.grippers[1] == Vec3(1, 0, 0));
  CHECK(p.endpoints[1] == Vec3(0.2, 0.2, 0.5));
  {
    std::ofstream os(path);
    os << "1 2 3\n";
  }
  CHECK_THROWS_AS(read_pose_file(path), IoError);
  std::remove(path.c_str());
  CHECK_THROWS_AS(read_pose_file("does/not/exist"), IoError);
}

TEST_CASE("inverted HSV bands are configuration errors") {
  RewardConfig cfg;
  cfg.bounds.band.lower.h = 20;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = RewardConfig{};
  cfg.eps2 = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
