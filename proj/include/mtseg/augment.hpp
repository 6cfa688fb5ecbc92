#pragma once

#include <cstdint>
#include <random>

#include "mtseg/grid.hpp"

namespace mtseg {

struct AugmentConfig {
  double rotation_bound_deg = 4.5;
  // N(0, 0.01) read as variance 0.01.
  double noise_std = 0.1;
  // Exclude pixels that rotation pulled in from outside the grid from the consistency loss.
  bool mask_border = false;

  void validate() const;
};

struct SpatialParams {
  double rotation_deg = 0.0;
};

struct PixelParams {
  double noise_std = 0.0;
  std::uint64_t noise_seed = 0;
};

// Student-side perturbation for one sample. The teacher draws only its own
// PixelParams; its spatial perturbation is applied after the forward pass.
struct AugmentationParams {
  SpatialParams spatial;
  PixelParams pixel;
};

enum class InterpMode { kContinuous, kNearest };

using Rng = std::mt19937_64;

[[nodiscard]] AugmentationParams sample_params(Rng& rng, const AugmentConfig& cfg);
[[nodiscard]] PixelParams sample_pixel_params(Rng& rng, const AugmentConfig& cfg);

// Rotation about the grid centre. Continuous mode is bilinear, nearest mode
// keeps the value set. Samples falling outside the grid read as 0.
[[nodiscard]] Image apply_spatial(const Image& map, const SpatialParams& params, InterpMode mode);
[[nodiscard]] Mask apply_spatial(const Mask& mask, const SpatialParams& params);

// 1 where the rotated pixel's source lies fully inside the input grid.
[[nodiscard]] Mask valid_region(int height, int width, const SpatialParams& params);

[[nodiscard]] Image add_noise(const Image& image, const PixelParams& params);

// Spatial transform first, then additive noise.
[[nodiscard]] Image student_view(const Image& x, const AugmentationParams& params);
// Additive noise only; no spatial transform before the teacher forward pass.
[[nodiscard]] Image teacher_view(const Image& x, const PixelParams& pixel);

// Rotates a teacher probability map with the student's spatial params so it is
// pixel-aligned with the student prediction. Output is clamped to [0, 1].
[[nodiscard]] Image align_teacher_prediction(const Image& teacher_pred, const SpatialParams& spatial);
[[nodiscard]] Mask align_ground_truth(const Mask& y, const SpatialParams& spatial);

}  // namespace mtseg
