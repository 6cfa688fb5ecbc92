#pragma once

#include <cstdint>
#include <string_view>

namespace mtseg {

enum class RampShape { kSigmoid, kLinear };

[[nodiscard]] RampShape parse_ramp_shape(std::string_view name);
[[nodiscard]] std::string_view to_string(RampShape shape);

// Epoch-denominated schedule parameters; evaluation happens per global step.
struct ScheduleConfig {
  double consistency_max = 2.9;
  int consistency_rampup_epochs = 100;
  double lr_max = 0.0006;
  int lr_rampup_epochs = 50;
  int total_epochs = 350;
  int steps_per_epoch = 1;
  RampShape ramp = RampShape::kSigmoid;

  // Throws ConfigError on non-positive lengths, ramps longer than the run,
  // negative consistency_max or non-positive lr_max.
  void validate() const;

  [[nodiscard]] std::int64_t total_steps() const {
    return static_cast<std::int64_t>(total_epochs) * steps_per_epoch;
  }
};

// Ramp factor in [0, 1] for progress tau in [0, 1]; sigmoid is exp(-5 (1 - tau)^2).
[[nodiscard]] double ramp_factor(double tau, RampShape shape);

// w(t): consistency_max scaled by the ramp over consistency_rampup_epochs, then flat.
[[nodiscard]] double consistency_weight(std::int64_t step, const ScheduleConfig& cfg);

// Ramp-up to lr_max over lr_rampup_epochs, cosine annealing to 0 at total_steps,
// and 0 beyond.
[[nodiscard]] double learning_rate(std::int64_t step, const ScheduleConfig& cfg);

}  // namespace mtseg
