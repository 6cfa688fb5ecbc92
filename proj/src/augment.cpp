#include "mtseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mtseg/error.hpp"

namespace mtseg {

namespace {

// Maps output pixel (row, col) back to its source coordinate under a rotation
// by `deg` about the grid centre.
struct InverseRotation {
  double cos_t, sin_t, cx, cy;

  InverseRotation(int height, int width, double deg)
      : cos_t(std::cos(deg * std::numbers::pi / 180.0)),
        sin_t(std::sin(deg * std::numbers::pi / 180.0)),
        cx((width - 1) * 0.5),
        cy((height - 1) * 0.5) {}

  void source(int row, int col, double& sx, double& sy) const {
    const double dx = col - cx;
    const double dy = row - cy;
    sx = cx + cos_t * dx + sin_t * dy;
    sy = cy - sin_t * dx + cos_t * dy;
  }
};

float bilinear(const Image& img, double x, double y) {
  const double fx = std::floor(x);
  const double fy = std::floor(y);
  const int x0 = static_cast<int>(fx);
  const int y0 = static_cast<int>(fy);
  const double ax = x - fx;
  const double ay = y - fy;
  auto px = [&](int r, int c) -> double {
    if (r < 0 || c < 0 || r >= img.height || c >= img.width) return 0.0;
    return img.at(r, c);
  };
  const double top = (1.0 - ax) * px(y0, x0) + ax * px(y0, x0 + 1);
  const double bottom = (1.0 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1);
  return static_cast<float>((1.0 - ay) * top + ay * bottom);
}

template <class T>
T nearest(const Grid2D<T>& g, double x, double y) {
  const int c = static_cast<int>(std::floor(x + 0.5));
  const int r = static_cast<int>(std::floor(y + 0.5));
  if (r < 0 || c < 0 || r >= g.height || c >= g.width) return T{};
  return g.at(r, c);
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(rotation_bound_deg >= 0.0)) throw ConfigError("augment: rotation bound must be >= 0");
  if (!(noise_std >= 0.0)) throw ConfigError("augment: noise_std must be >= 0");
}

AugmentationParams sample_params(Rng& rng, const AugmentConfig& cfg) {
  AugmentationParams p;
  if (cfg.rotation_bound_deg > 0.0) {
    std::uniform_real_distribution<double> angle(-cfg.rotation_bound_deg, cfg.rotation_bound_deg);
    p.spatial.rotation_deg = angle(rng);
  } else {
    rng.discard(1);
  }
  p.pixel = sample_pixel_params(rng, cfg);
  return p;
}

PixelParams sample_pixel_params(Rng& rng, const AugmentConfig& cfg) { return PixelParams{cfg.noise_std, rng()}; }

Image apply_spatial(const Image& map, const SpatialParams& params, InterpMode mode) {
  if (params.rotation_deg == 0.0) return map;
  const InverseRotation rot(map.height, map.width, params.rotation_deg);
  Image out(map.height, map.width);
  for (int r = 0; r < map.height; ++r) {
    for (int c = 0; c < map.width; ++c) {
      double sx, sy;
      rot.source(r, c, sx, sy);
      out.at(r, c) = mode == InterpMode::kContinuous ? bilinear(map, sx, sy) : nearest(map, sx, sy);
    }
  }
  return out;
}

Mask apply_spatial(const Mask& mask, const SpatialParams& params) {
  if (params.rotation_deg == 0.0) return mask;
  const InverseRotation rot(mask.height, mask.width, params.rotation_deg);
  Mask out(mask.height, mask.width);
  for (int r = 0; r < mask.height; ++r) {
    for (int c = 0; c < mask.width; ++c) {
      double sx, sy;
      rot.source(r, c, sx, sy);
      out.at(r, c) = nearest(mask, sx, sy);
    }
  }
  return out;
}

Mask valid_region(int height, int width, const SpatialParams& params) {
  Mask out(height, width, 1);
  if (params.rotation_deg == 0.0) return out;
  const InverseRotation rot(height, width, params.rotation_deg);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double sx, sy;
      rot.source(r, c, sx, sy);
      const bool inside = sx >= 0.0 && sy >= 0.0 && sx <= width - 1 && sy <= height - 1;
      out.at(r, c) = inside ? 1 : 0;
    }
  }
  return out;
}

Image add_noise(const Image& image, const PixelParams& params) {
  if (params.noise_std == 0.0) return image;
  Rng rng(params.noise_seed);
  std::normal_distribution<double> noise(0.0, params.noise_std);
  Image out = image;
  for (auto& v : out.values) v = static_cast<float>(v + noise(rng));
  return out;
}

Image student_view(const Image& x, const AugmentationParams& params) {
  return add_noise(apply_spatial(x, params.spatial, InterpMode::kContinuous), params.pixel);
}

Image teacher_view(const Image& x, const PixelParams& pixel) { return add_noise(x, pixel); }

Image align_teacher_prediction(const Image& teacher_pred, const SpatialParams& spatial) {
  Image out = apply_spatial(teacher_pred, spatial, InterpMode::kContinuous);
  for (auto& v : out.values) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Mask align_ground_truth(const Mask& y, const SpatialParams& spatial) { return apply_spatial(y, spatial); }

}  // namespace mtseg
