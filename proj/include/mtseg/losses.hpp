#pragma once

#include <array>
#include <vector>

namespace mtseg {

inline constexpr double kDiceSmoothing = 1e-5;
inline constexpr double kLogClamp = 1e-7;

// A stack of per-pixel maps, shape (items, height, width), stored flat.
struct MapBatch {
  std::array<int, 3> shape{0, 0, 0};
  std::vector<double> values;

  MapBatch() = default;
  MapBatch(int items, int height, int width, double fill = 0.0);
  MapBatch(std::array<int, 3> s, std::vector<double> v);

  [[nodiscard]] std::size_t size() const { return values.size(); }
};

enum class ConsistencyKind { kBce, kMse };

// Loss value together with its gradient with respect to the first (student) argument.
struct LossGrad {
  double value = 0.0;
  std::vector<double> grad;
};

// Negative soft Dice pooled over every pixel of every item in the batch:
//   -(2 sum p*y + eps) / (sum p + sum y + eps)
[[nodiscard]] double dice_loss(const MapBatch& pred, const MapBatch& target, double smoothing = kDiceSmoothing);
[[nodiscard]] LossGrad dice_loss_grad(const MapBatch& pred, const MapBatch& target,
                                      double smoothing = kDiceSmoothing);

// Pixel-mean binary cross-entropy with the teacher map as soft target. The
// teacher map is a constant: no gradient is produced for it. Student
// probabilities are clamped to [kLogClamp, 1 - kLogClamp] before the logs.
[[nodiscard]] double consistency_loss(const MapBatch& student, const MapBatch& teacher,
                                      ConsistencyKind kind = ConsistencyKind::kBce);
[[nodiscard]] LossGrad consistency_loss_grad(const MapBatch& student, const MapBatch& teacher,
                                             ConsistencyKind kind = ConsistencyKind::kBce);

[[nodiscard]] double total_loss(double seg, double cons, double weight);

}  // namespace mtseg
