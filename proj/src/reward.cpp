#include "tribench/reward.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace tribench {

void HsvBounds::validate() const {
  auto check = [](const HsvBand& b) {
    if (b.lower.h > b.upper.h || b.lower.s > b.upper.s || b.lower.v > b.upper.v)
      throw ConfigError("HSV band lower bound exceeds upper bound");
  };
  check(band);
  if (second_band) check(*second_band);
}

void RewardConfig::validate() const {
  if (eps1 < 0 || (eps1 == 0 && !(eps1_fraction > 0.0)))
    throw ConfigError("reward: eps1 must be >= 1 pixel");
  if (!(eps2 > 0.0)) throw ConfigError("reward: eps2 must be > 0");
  bounds.validate();
}

std::string GoalReport::csv_header() {
  return "n_mask,goal1,goal2,p1_inside,p1_distance,p2_inside,p2_distance,reward";
}

std::string GoalReport::csv_row() const {
  std::ostringstream os;
  os.precision(9);
  os << n_mask << ',' << goal1 << ',' << goal2 << ',' << per_endpoint[0].inside << ','
     << per_endpoint[0].distance << ',' << per_endpoint[1].inside << ',' << per_endpoint[1].distance
     << ',' << reward;
  return os.str();
}

ImageBuffer bgr_to_hsv(const ImageBuffer& img) {
  if (img.channels != 3) throw ShapeError("bgr_to_hsv: expected a 3-channel image");
  ImageBuffer out(img.width, img.height, 3);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const int b = img.data[i * 3], g = img.data[i * 3 + 1], r = img.data[i * 3 + 2];
    const int vmax = std::max({r, g, b}), vmin = std::min({r, g, b});
    const int chroma = vmax - vmin;
    const int s = vmax == 0 ? 0 : static_cast<int>(std::lround(255.0 * chroma / vmax));
    double hue = 0.0;
    if (chroma > 0) {
      if (vmax == r)
        hue = 60.0 * (g - b) / chroma;
      else if (vmax == g)
        hue = 120.0 + 60.0 * (b - r) / chroma;
      else
        hue = 240.0 + 60.0 * (r - g) / chroma;
      if (hue < 0.0) hue += 360.0;
    }
    int h = static_cast<int>(std::lround(hue / 2.0));
    if (h >= 180) h -= 180;
    out.data[i * 3] = static_cast<std::uint8_t>(h);
    out.data[i * 3 + 1] = static_cast<std::uint8_t>(s);
    out.data[i * 3 + 2] = static_cast<std::uint8_t>(vmax);
  }
  return out;
}

long mask_count(const ImageBuffer& hsv, const HsvBounds& b) {
  if (hsv.channels != 3) throw ShapeError("mask_count: expected a 3-channel HSV image");
  long n = 0;
  for (std::size_t i = 0; i < hsv.pixel_count(); ++i) {
    const int h = hsv.data[i * 3], s = hsv.data[i * 3 + 1], v = hsv.data[i * 3 + 2];
    if (b.band.contains(h, s, v) || (b.second_band && b.second_band->contains(h, s, v))) ++n;
  }
  return n;
}

double reward_from_goals(bool goal1, bool goal2) {
  if (!goal1) return 0.0;
  return goal2 ? 1.0 : 0.5;
}

GoalReport evaluate_reward(const ImageBuffer& frame, const std::array<Vec3, 2>& endpoints,
                           const std::array<Vec3, 3>& grippers, const RewardConfig& cfg) {
  const auto& [a, b, c] = grippers;
  require_triangle(a, b, c);
  GoalReport r;
  r.n_mask = mask_count(bgr_to_hsv(frame), cfg.bounds);
  r.goal1 = r.n_mask >= cfg.eps1_for(frame.pixel_count());
  bool both = true;
  for (int i = 0; i < 2; ++i) {
    const auto proj = project_to_plane(endpoints[i], a, b, c);
    r.per_endpoint[i] = {inside_triangle(proj.point, a, b, c), proj.distance};
    both = both && r.per_endpoint[i].inside && proj.distance <= cfg.eps2;
  }
  r.goal2 = both;
  r.reward = reward_from_goals(r.goal1, r.goal2);
  return r;
}

PoseFile read_pose_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open pose file: " + path);
  std::array<double, 15> v{};
  for (auto& x : v)
    if (!(is >> x)) throw IoError("pose file must hold 15 numbers: " + path);
  PoseFile p;
  for (int g = 0; g < 3; ++g) p.grippers[g] = {v[g * 3], v[g * 3 + 1], v[g * 3 + 2]};
  for (int e = 0; e < 2; ++e) p.endpoints[e] = {v[9 + e * 3], v[10 + e * 3], v[11 + e * 3]};
  return p;
}

}  // namespace tribench
