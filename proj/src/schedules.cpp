#include "mtseg/schedules.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "mtseg/error.hpp"

namespace mtseg {

RampShape parse_ramp_shape(std::string_view name) {
  if (name == "sigmoid") return RampShape::kSigmoid;
  if (name == "linear") return RampShape::kLinear;
  throw ConfigError("unknown ramp shape '" + std::string(name) + "' (expected sigmoid or linear)");
}

std::string_view to_string(RampShape shape) { return shape == RampShape::kSigmoid ? "sigmoid" : "linear"; }

void ScheduleConfig::validate() const {
  if (consistency_rampup_epochs <= 0 || lr_rampup_epochs <= 0 || total_epochs <= 0 || steps_per_epoch <= 0)
    throw ConfigError("schedule: epoch counts and steps_per_epoch must be positive");
  if (consistency_rampup_epochs > total_epochs || lr_rampup_epochs > total_epochs)
    throw ConfigError("schedule: ramp-up longer than total_epochs");
  if (!(consistency_max >= 0.0)) throw ConfigError("schedule: consistency_max must be >= 0");
  if (!(lr_max > 0.0)) throw ConfigError("schedule: lr_max must be > 0");
}

double ramp_factor(double tau, RampShape shape) {
  tau = std::clamp(tau, 0.0, 1.0);
  if (shape == RampShape::kLinear) return tau;
  const double phase = 1.0 - tau;
  return std::exp(-5.0 * phase * phase);
}

double consistency_weight(std::int64_t step, const ScheduleConfig& cfg) {
  const double ramp_steps = static_cast<double>(cfg.consistency_rampup_epochs) * cfg.steps_per_epoch;
  const double tau = static_cast<double>(std::max<std::int64_t>(step, 0)) / ramp_steps;
  return cfg.consistency_max * ramp_factor(tau, cfg.ramp);
}

double learning_rate(std::int64_t step, const ScheduleConfig& cfg) {
  const std::int64_t ramp_steps = static_cast<std::int64_t>(cfg.lr_rampup_epochs) * cfg.steps_per_epoch;
  const std::int64_t total = cfg.total_steps();
  step = std::max<std::int64_t>(step, 0);
  if (step >= total) return 0.0;
  if (step < ramp_steps) {
    return cfg.lr_max * ramp_factor(static_cast<double>(step) / static_cast<double>(ramp_steps), cfg.ramp);
  }
  const double progress = static_cast<double>(step - ramp_steps) / static_cast<double>(total - ramp_steps);
  return cfg.lr_max * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace mtseg
