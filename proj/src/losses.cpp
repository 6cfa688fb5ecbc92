#include "mtseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mtseg/error.hpp"

namespace mtseg {

namespace {

void require_same_shape(const MapBatch& a, const MapBatch& b, const char* what) {
  if (a.shape != b.shape || a.values.size() != b.values.size()) {
    std::ostringstream msg;
    msg << what << ": shape mismatch (" << a.shape[0] << "x" << a.shape[1] << "x" << a.shape[2] << " vs "
        << b.shape[0] << "x" << b.shape[1] << "x" << b.shape[2] << ")";
    throw ContractViolation(msg.str());
  }
}

void require_smoothing(double smoothing) {
  if (!(smoothing >= 0.0)) throw ConfigError("dice_loss: smoothing must be non-negative");
}

struct DiceSums {
  double intersection = 0.0;
  double pred = 0.0;
  double target = 0.0;
};

DiceSums dice_sums(const MapBatch& pred, const MapBatch& target) {
  DiceSums s;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    s.intersection += pred.values[i] * target.values[i];
    s.pred += pred.values[i];
    s.target += target.values[i];
  }
  return s;
}

double clamp_prob(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }

}  // namespace

MapBatch::MapBatch(int items, int height, int width, double fill)
    : shape{items, height, width}, values(static_cast<std::size_t>(items) * height * width, fill) {}

MapBatch::MapBatch(std::array<int, 3> s, std::vector<double> v) : shape(s), values(std::move(v)) {
  if (values.size() != static_cast<std::size_t>(s[0]) * s[1] * s[2])
    throw ContractViolation("MapBatch: value count does not match shape");
}

double dice_loss(const MapBatch& pred, const MapBatch& target, double smoothing) {
  require_same_shape(pred, target, "dice_loss");
  require_smoothing(smoothing);
  const DiceSums s = dice_sums(pred, target);
  return -(2.0 * s.intersection + smoothing) / (s.pred + s.target + smoothing);
}

LossGrad dice_loss_grad(const MapBatch& pred, const MapBatch& target, double smoothing) {
  require_same_shape(pred, target, "dice_loss");
  require_smoothing(smoothing);
  const DiceSums s = dice_sums(pred, target);
  const double num = 2.0 * s.intersection + smoothing;
  const double den = s.pred + s.target + smoothing;
  LossGrad out;
  out.value = -num / den;
  out.grad.resize(pred.values.size());
  const double den2 = den * den;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    out.grad[i] = -(2.0 * target.values[i] * den - num) / den2;
  }
  return out;
}

double consistency_loss(const MapBatch& student, const MapBatch& teacher, ConsistencyKind kind) {
  require_same_shape(student, teacher, "consistency_loss");
  const std::size_t n = student.values.size();
  if (n == 0) return 0.0;
  double acc = 0.0;
  if (kind == ConsistencyKind::kBce) {
    for (std::size_t i = 0; i < n; ++i) {
      const double p = clamp_prob(student.values[i]);
      const double y = teacher.values[i];
      acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const double d = student.values[i] - teacher.values[i];
      acc += d * d;
    }
  }
  return acc / static_cast<double>(n);
}

LossGrad consistency_loss_grad(const MapBatch& student, const MapBatch& teacher, ConsistencyKind kind) {
  LossGrad out;
  out.value = consistency_loss(student, teacher, kind);
  const std::size_t n = student.values.size();
  out.grad.resize(n);
  if (n == 0) return out;
  const double inv_n = 1.0 / static_cast<double>(n);
  if (kind == ConsistencyKind::kBce) {
    // The clamp is passed straight through so saturated outputs still receive a
    // corrective gradient once chained with the sigmoid.
    for (std::size_t i = 0; i < n; ++i) {
      const double p = clamp_prob(student.values[i]);
      out.grad[i] = (p - teacher.values[i]) / (p * (1.0 - p)) * inv_n;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) out.grad[i] = 2.0 * (student.values[i] - teacher.values[i]) * inv_n;
  }
  return out;
}

double total_loss(double seg, double cons, double weight) {
  if (!(weight >= 0.0)) throw ConfigError("total_loss: consistency weight must be non-negative");
  return seg + weight * cons;
}

}  // namespace mtseg
