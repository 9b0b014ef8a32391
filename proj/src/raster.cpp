#include "tribench/raster.hpp"

#include "tribench/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace tribench {

namespace {

struct CameraFrame {
  Vec3 eye, right, up, forward;
  double focal_y = 1.0;  // pixels per unit tan
  double cx = 0.0, cy = 0.0;
};

CameraFrame make_frame(const Camera& cam) {
  cam.validate();
  CameraFrame f;
  f.eye = cam.eye;
  f.forward = (cam.look_at - cam.eye).normalized();
  const Vec3 r = f.forward.cross(cam.up);
  f.right = r.normalized();
  f.up = f.right.cross(f.forward);
  const double tan_half = std::tan(0.5 * cam.vertical_fov * std::numbers::pi / 180.0);
  f.focal_y = 0.5 * cam.height / tan_half;
  f.cx = 0.5 * cam.width;
  f.cy = 0.5 * cam.height;
  return f;
}

struct Projected {
  double x, y, z;
};

Projected project(const CameraFrame& f, const Vec3& p) {
  const Vec3 d = p - f.eye;
  const double z = d.dot(f.forward);
  return {f.cx + f.focal_y * d.dot(f.right) / z, f.cy - f.focal_y * d.dot(f.up) / z, z};
}

constexpr double kNear = 1e-4;

std::uint8_t scale_channel(std::uint8_t c, double s) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(c * s), 0L, 255L));
}

class Target {
 public:
  Target(int w, int h, const Bgr& bg)
      : img_(w, h, 3), depth_(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity()) {
    for (std::size_t i = 0; i < img_.pixel_count(); ++i)
      for (int c = 0; c < 3; ++c) img_.data[i * 3 + c] = bg[c];
  }

  void plot(int x, int y, double z, const Bgr& color) {
    const std::size_t i = static_cast<std::size_t>(y) * img_.width + x;
    if (!(z < depth_[i])) return;
    depth_[i] = z;
    for (int c = 0; c < 3; ++c) img_.data[i * 3 + c] = color[c];
  }

  int width() const { return img_.width; }
  int height() const { return img_.height; }
  ImageBuffer take() { return std::move(img_); }

 private:
  ImageBuffer img_;
  std::vector<double> depth_;
};

void raster_triangle(Target& t, Projected a, Projected b, Projected c, const Bgr& color) {
  // Evaluated from a canonical endpoint order so that edge(p,q) == -edge(q,p)
  // bit for bit; otherwise neighbours disagree on pixels right on the edge.
  auto edge = [](const Projected& p, const Projected& q, double x, double y) {
    const bool flip = q.x < p.x || (q.x == p.x && q.y < p.y);
    const Projected& s = flip ? q : p;
    const Projected& e = flip ? p : q;
    const double v = (e.x - s.x) * (y - s.y) - (e.y - s.y) * (x - s.x);
    return flip ? -v : v;
  };
  double area = edge(a, b, c.x, c.y);
  if (area == 0.0) return;
  if (area < 0.0) {
    std::swap(b, c);
    area = -area;
  }
  // Top-left ownership for pixels exactly on an edge.
  auto top_left = [](const Projected& p, const Projected& q) {
    const double ex = q.x - p.x, ey = q.y - p.y;
    return (ey == 0.0 && ex > 0.0) || ey < 0.0;
  };
  const bool tl0 = top_left(b, c), tl1 = top_left(c, a), tl2 = top_left(a, b);

  const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.x, b.x, c.x}))));
  const int x1 = std::min(t.width() - 1, static_cast<int>(std::ceil(std::max({a.x, b.x, c.x}))));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.y, b.y, c.y}))));
  const int y1 = std::min(t.height() - 1, static_cast<int>(std::ceil(std::max({a.y, b.y, c.y}))));
  const double iza = 1.0 / a.z, izb = 1.0 / b.z, izc = 1.0 / c.z;

  for (int y = y0; y <= y1; ++y) {
    const double py = y + 0.5;
    for (int x = x0; x <= x1; ++x) {
      const double px = x + 0.5;
      const double w0 = edge(b, c, px, py), w1 = edge(c, a, px, py), w2 = edge(a, b, px, py);
      if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
      if ((w0 == 0.0 && !tl0) || (w1 == 0.0 && !tl1) || (w2 == 0.0 && !tl2)) continue;
      const double inv_z = (w0 * iza + w1 * izb + w2 * izc) / area;
      t.plot(x, y, 1.0 / inv_z, color);
    }
  }
}

void raster_sphere(Target& t, const CameraFrame& f, const SceneSphere& s, double ambient) {
  const Projected c = project(f, s.center);
  if (c.z - s.radius <= kNear) return;
  const double rpx = f.focal_y * s.radius / c.z;
  const int x0 = std::max(0, static_cast<int>(std::floor(c.x - rpx)));
  const int x1 = std::min(t.width() - 1, static_cast<int>(std::ceil(c.x + rpx)));
  const int y0 = std::max(0, static_cast<int>(std::floor(c.y - rpx)));
  const int y1 = std::min(t.height() - 1, static_cast<int>(std::ceil(c.y + rpx)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5 - c.x) / rpx, dy = (y + 0.5 - c.y) / rpx;
      const double r2 = dx * dx + dy * dy;
      if (r2 > 1.0) continue;
      const double nz = std::sqrt(1.0 - r2);
      const double shade = ambient + (1.0 - ambient) * nz;
      t.plot(x, y, c.z - s.radius * nz,
             {scale_channel(s.color[0], shade), scale_channel(s.color[1], shade),
              scale_channel(s.color[2], shade)});
    }
}

}  // namespace

void Camera::validate() const {
  if (!(vertical_fov > 0.0 && vertical_fov < 180.0))
    throw ConfigError("camera: vertical_fov must be in (0,180)");
  if (width < 16 || height < 16) throw ConfigError("camera: resolution must be >= 16");
  const Vec3 f = look_at - eye;
  if (f.norm() < 1e-12) throw ConfigError("camera: eye and look_at coincide");
  if (f.normalized().cross(up).norm() < 1e-9 || up.norm() < 1e-12)
    throw ConfigError("camera: up vector is parallel to the view direction");
}

ImageBuffer render_scene(const std::vector<SceneTriangle>& tris,
                         const std::vector<SceneSphere>& spheres, const Camera& cam,
                         const Bgr& background, double ambient) {
  const CameraFrame f = make_frame(cam);
  Target target(cam.width, cam.height, background);
  for (const auto& tri : tris) {
    const Projected a = project(f, tri.a), b = project(f, tri.b), c = project(f, tri.c);
    if (a.z <= kNear || b.z <= kNear || c.z <= kNear) continue;
    Bgr color = tri.color;
    if (tri.shaded) {
      const Vec3 n = (tri.b - tri.a).cross(tri.c - tri.a);
      const double nn = n.norm();
      if (nn == 0.0) continue;
      const Vec3 centroid = (tri.a + tri.b + tri.c) / 3.0;
      const Vec3 to_eye = (f.eye - centroid).normalized();
      const double shade = ambient + (1.0 - ambient) * std::abs(n.dot(to_eye) / nn);
      for (auto& ch : color) ch = scale_channel(ch, shade);
    }
    raster_triangle(target, a, b, c, color);
  }
  for (const auto& s : spheres) raster_sphere(target, f, s, ambient);
  return target.take();
}

ImageBuffer render(const TissueState& state, const Camera& cam, const RenderStyle& style) {
  std::vector<SceneTriangle> tris;
  tris.reserve(static_cast<std::size_t>(2 * (state.nx - 1) * (state.ny - 1)));

  // Quads between the line row and the next row, within the line span, are
  // drawn in the marker color.
  const int line_j = state.line.path.empty() ? -1 : state.line.path.front() / state.nx;
  const int line_i0 = state.line.path.empty() ? 0 : state.line.path.front() % state.nx;
  const int line_i1 = state.line.path.empty() ? -1 : state.line.path.back() % state.nx;

  for (int j = 0; j + 1 < state.ny; ++j)
    for (int i = 0; i + 1 < state.nx; ++i) {
      const Vec3 p00 = state.position(state.index(i, j));
      const Vec3 p10 = state.position(state.index(i + 1, j));
      const Vec3 p01 = state.position(state.index(i, j + 1));
      const Vec3 p11 = state.position(state.index(i + 1, j + 1));
      const bool is_line = j == line_j && i >= line_i0 && i < line_i1;
      const Bgr color = is_line ? style.line : style.tissue;
      tris.push_back({p00, p10, p11, color, !is_line});
      tris.push_back({p00, p11, p01, color, !is_line});
    }

  std::vector<SceneSphere> spheres;
  for (const auto& g : state.grippers) spheres.push_back({g.position, style.gripper_radius, style.gripper});
  return render_scene(tris, spheres, cam, style.background, style.ambient);
}

ImageBuffer to_gray(const ImageBuffer& img) {
  if (img.channels != 3) throw ShapeError("to_gray: expected a 3-channel image");
  ImageBuffer out(img.width, img.height, 1);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const double b = img.data[i * 3], g = img.data[i * 3 + 1], r = img.data[i * 3 + 2];
    const long v = std::lround(0.299 * r + 0.587 * g + 0.114 * b);
    out.data[i] = static_cast<std::uint8_t>(std::clamp(v, 0L, 255L));
  }
  return out;
}

ImageBuffer replicate_gray(const ImageBuffer& gray) {
  if (gray.channels != 1) throw ShapeError("replicate_gray: expected a 1-channel image");
  ImageBuffer out(gray.width, gray.height, 3);
  for (std::size_t i = 0; i < gray.pixel_count(); ++i)
    for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = gray.data[i];
  return out;
}

ImageBuffer stylize(const ImageBuffer& img, const StyleParams& p) {
  if (img.channels != 1) throw ShapeError("stylize: expected a 1-channel image");
  const int w = img.width, h = img.height;
  const double gamma = std::max(p.gamma, 1e-3);
  const double vignette = std::clamp(p.vignette_strength, 0.0, 1.0);
  const double noise = std::max(p.noise_stddev, 0.0);
  const int radius = std::clamp(p.blur_radius, 0, std::max(w, h));

  std::vector<double> buf(img.pixel_count());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = gamma == 1.0 ? img.data[i] : 255.0 * std::pow(img.data[i] / 255.0, gamma);

  if (radius > 0) {
    // Separable box filter with clamped borders.
    std::vector<double> tmp(buf.size());
    const double norm = 1.0 / (2 * radius + 1);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += buf[y * w + std::clamp(x + k, 0, w - 1)];
        tmp[y * w + x] = acc * norm;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) acc += tmp[std::clamp(y + k, 0, h - 1) * w + x];
        buf[y * w + x] = acc * norm;
      }
  }

  if (vignette > 0.0) {
    const double cx = 0.5 * w, cy = 0.5 * h;
    const double rmax2 = (0.5 - cx) * (0.5 - cx) + (0.5 - cy) * (0.5 - cy);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
        buf[y * w + x] *= 1.0 - vignette * (dx * dx + dy * dy) / rmax2;
      }
  }

  if (noise > 0.0) {
    Rng rng(p.seed);
    std::normal_distribution<double> gauss(0.0, noise);
    for (auto& v : buf) v += gauss(rng);
  }

  ImageBuffer out(w, h, 1);
  for (std::size_t i = 0; i < buf.size(); ++i)
    out.data[i] = static_cast<std::uint8_t>(std::clamp(std::lround(buf[i]), 0L, 255L));
  return out;
}

}  // namespace tribench
