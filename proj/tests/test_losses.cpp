#include <doctest.h>

#include <cmath>
#include <random>

#include "mtseg/error.hpp"
#include "mtseg/losses.hpp"

using namespace mtseg;

namespace {

MapBatch random_batch(std::mt19937_64& rng, int n, int h, int w, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  MapBatch b(n, h, w);
  for (auto& v : b.values) v = u(rng);
  return b;
}

template <class F>
double central_difference(F&& f, MapBatch x, std::size_t i, double h) {
  const double x0 = x.values[i];
  x.values[i] = x0 + h;
  const double up = f(x);
  x.values[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2 * h);
}

double relative_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

}  // namespace

TEST_CASE("dice loss hand-evaluated cases") {
  CHECK(dice_loss(MapBatch({1, 1, 4}, {1, 1, 0, 0}), MapBatch({1, 1, 4}, {1, 1, 0, 0}), 0.0) == doctest::Approx(-1.0));
  CHECK(dice_loss(MapBatch({1, 1, 2}, {0.5, 0.5}), MapBatch({1, 1, 2}, {1, 0}), 0.0) == doctest::Approx(-0.5));
  CHECK(dice_loss(MapBatch(2, 3, 3, 0.0), MapBatch(2, 3, 3, 0.0)) == -1.0);
}

TEST_CASE("dice loss pools the whole mini-batch") {
  // Item 0 perfect, item 1 empty prediction on a non-empty target.
  const MapBatch pred({2, 1, 2}, {1, 0, 0, 0});
  const MapBatch target({2, 1, 2}, {1, 0, 1, 0});
  CHECK(dice_loss(pred, target, 0.0) == doctest::Approx(-2.0 / 3.0));
}

TEST_CASE("dice loss is symmetric for binary maps and bounded") {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.3);
  for (int trial = 0; trial < 50; ++trial) {
    MapBatch p(2, 4, 4), y(2, 4, 4);
    for (std::size_t i = 0; i < p.size(); ++i) {
      p.values[i] = coin(rng);
      y.values[i] = coin(rng);
    }
    CHECK(dice_loss(p, y) == doctest::Approx(dice_loss(y, p)).epsilon(1e-15));
    const double soft = dice_loss(random_batch(rng, 2, 4, 4, 0, 1), y);
    CHECK(soft >= -1.0);
    CHECK(soft < 0.0);
  }
}

TEST_CASE("loss argument validation") {
  CHECK_THROWS_AS((void)dice_loss(MapBatch(1, 2, 2), MapBatch(1, 2, 3)), ContractViolation);
  CHECK_THROWS_AS((void)dice_loss(MapBatch(1, 2, 2), MapBatch(1, 2, 2), -1e-3), ConfigError);
  CHECK_THROWS_AS((void)consistency_loss(MapBatch(2, 2, 2), MapBatch(1, 2, 2)), ContractViolation);
  CHECK_THROWS_AS((void)total_loss(1.0, 1.0, -0.5), ConfigError);
  CHECK_THROWS_AS(MapBatch({1, 2, 2}, {0.0, 1.0}), ContractViolation);
}

TEST_CASE("consistency loss values") {
  // BCE of p against itself is the binary entropy.
  const MapBatch half({1, 1, 2}, {0.5, 0.5});
  CHECK(consistency_loss(half, half) == doctest::Approx(std::log(2.0)));
  // Saturated predictions stay finite thanks to the clamp.
  const MapBatch hard({1, 1, 2}, {0.0, 1.0});
  const MapBatch flipped({1, 1, 2}, {1.0, 0.0});
  const double v = consistency_loss(hard, flipped);
  CHECK(std::isfinite(v));
  CHECK(v == doctest::Approx(-std::log(kLogClamp)).epsilon(1e-9));
  CHECK(consistency_loss(half, MapBatch({1, 1, 2}, {1.0, 0.0}), ConsistencyKind::kMse) == doctest::Approx(0.25));
}

TEST_CASE("total loss combines linearly") {
  CHECK(total_loss(-0.5, 0.2, 2.9) == doctest::Approx(-0.5 + 2.9 * 0.2));
  CHECK(total_loss(-0.5, 0.2, 0.0) == -0.5);
}

TEST_CASE("analytic gradients match central differences") {
  std::mt19937_64 rng(11);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const MapBatch p = random_batch(rng, 2, 4, 4, 0.05, 0.95);
    const MapBatch y = random_batch(rng, 2, 4, 4, 0.0, 1.0);

    const LossGrad dice = dice_loss_grad(p, y);
    CHECK(dice.value == doctest::Approx(dice_loss(p, y)).epsilon(1e-15));
    const LossGrad bce = consistency_loss_grad(p, y);
    const LossGrad mse = consistency_loss_grad(p, y, ConsistencyKind::kMse);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double fd_dice = central_difference([&](const MapBatch& x) { return dice_loss(x, y); }, p, i, h);
      const double fd_bce = central_difference([&](const MapBatch& x) { return consistency_loss(x, y); }, p, i, h);
      const double fd_mse = central_difference(
          [&](const MapBatch& x) { return consistency_loss(x, y, ConsistencyKind::kMse); }, p, i, h);
      CHECK(relative_error(dice.grad[i], fd_dice) < 1e-4);
      CHECK(relative_error(bce.grad[i], fd_bce) < 1e-4);
      CHECK(relative_error(mse.grad[i], fd_mse) < 1e-4);
    }
  }
}
