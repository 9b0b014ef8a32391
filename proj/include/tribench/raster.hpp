#pragma once

#include "tribench/core.hpp"
#include "tribench/sim.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace tribench {

// 8-bit raster, row-major, interleaved; 3-channel images are stored B,G,R.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<std::uint8_t> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, int c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::uint8_t& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const ImageBuffer&) const = default;
};

using Bgr = std::array<std::uint8_t, 3>;

struct Camera {
  Vec3 eye{0.335, 0.250, 0.485};
  Vec3 look_at{0.335, 0.100, 0.480};
  Vec3 up{0.0, 0.0, -1.0};
  double vertical_fov = 50.0;  // degrees
  int width = 128;
  int height = 128;

  void validate() const;
};

struct RenderStyle {
  Bgr background{40, 35, 30};
  Bgr tissue{150, 160, 210};
  Bgr line{0, 0, 255};
  Bgr gripper{128, 128, 128};
  double gripper_radius = 0.004;
  double ambient = 0.3;
};

struct SceneTriangle {
  Vec3 a, b, c;
  Bgr color{255, 255, 255};
  bool shaded = true;
};

struct SceneSphere {
  Vec3 center;
  double radius = 0.0;
  Bgr color{128, 128, 128};
};

// Pinhole projection + z-buffered triangle rasterization with a top-left
// fill rule, so triangles sharing an edge leave no cracks.
ImageBuffer render_scene(const std::vector<SceneTriangle>& tris,
                         const std::vector<SceneSphere>& spheres, const Camera& cam,
                         const Bgr& background, double ambient = 0.3);

ImageBuffer render(const TissueState& state, const Camera& cam, const RenderStyle& style = {});

ImageBuffer to_gray(const ImageBuffer& img);
ImageBuffer replicate_gray(const ImageBuffer& gray);

struct StyleParams {
  double gamma = 1.0;
  double vignette_strength = 0.0;
  double noise_stddev = 0.0;
  int blur_radius = 0;
  std::uint64_t seed = 0;
};

ImageBuffer stylize(const ImageBuffer& img, const StyleParams& p);

}  // namespace tribench
