#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mtseg/error.hpp"

namespace mtseg {

template <class T>
struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<T> data;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

template <class T>
using WeightSet = std::vector<NamedTensor<T>>;

// EMA-averaged copy of the student's parameters. `buffers` holds the teacher's
// non-learnable state (batch-norm running statistics), which is not averaged.
template <class T>
struct TeacherState {
  WeightSet<T> weights;
  WeightSet<T> buffers;
  double alpha = 0.0;
  std::int64_t step = 0;
};

// Smoothing factor by epoch: `early` before `switch_epoch`, `late` from it on.
struct AlphaSchedule {
  double early = 0.99;
  double late = 0.999;
  int switch_epoch = 50;

  [[nodiscard]] double at(std::int64_t epoch) const { return epoch < switch_epoch ? early : late; }
};

[[nodiscard]] inline double alpha_at(std::int64_t epoch, const AlphaSchedule& schedule = {}) {
  return schedule.at(epoch);
}

namespace detail {

template <class T>
void require_isomorphic(const WeightSet<T>& a, const WeightSet<T>& b, const char* what) {
  if (a.size() != b.size()) throw ContractViolation(std::string(what) + ": parameter count mismatch");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || a[i].shape != b[i].shape || a[i].data.size() != b[i].data.size()) {
      throw ContractViolation(std::string(what) + ": structure mismatch at '" + a[i].name + "' vs '" + b[i].name +
                              "'");
    }
  }
}

}  // namespace detail

template <class T>
[[nodiscard]] TeacherState<T> init_teacher(const WeightSet<T>& student_weights, const WeightSet<T>& student_buffers = {},
                                           double alpha = AlphaSchedule{}.early) {
  return TeacherState<T>{student_weights, student_buffers, alpha, 0};
}

// theta' <- alpha * theta' + (1 - alpha) * theta, element-wise, evaluated in
// double and rounded once to T. Advances the step counter by one.
template <class T>
void ema_update(TeacherState<T>& state, const WeightSet<T>& student_weights, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("ema_update: alpha must lie in [0, 1]");
  detail::require_isomorphic(state.weights, student_weights, "ema_update");
  const double keep = alpha;
  const double take = 1.0 - alpha;
  for (std::size_t k = 0; k < student_weights.size(); ++k) {
    auto& dst = state.weights[k].data;
    const auto& src = student_weights[k].data;
    for (std::size_t i = 0; i < dst.size(); ++i) {
      dst[i] = static_cast<T>(keep * static_cast<double>(dst[i]) + take * static_cast<double>(src[i]));
    }
  }
  state.alpha = alpha;
  ++state.step;
}

template <class T>
void copy_buffers(TeacherState<T>& state, const WeightSet<T>& student_buffers) {
  detail::require_isomorphic(state.buffers, student_buffers, "copy_buffers");
  for (std::size_t k = 0; k < student_buffers.size(); ++k) state.buffers[k].data = student_buffers[k].data;
}

}  // namespace mtseg
