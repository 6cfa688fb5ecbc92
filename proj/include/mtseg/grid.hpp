#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mtseg {

// Row-major 2D grid. Rows run along y, columns along x.
template <class T>
struct Grid2D {
  int height = 0;
  int width = 0;
  std::vector<T> values;

  Grid2D() = default;
  Grid2D(int h, int w, T fill = T{}) : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  [[nodiscard]] std::size_t size() const { return values.size(); }
  [[nodiscard]] bool same_shape(const Grid2D& o) const { return height == o.height && width == o.width; }

  T& at(int row, int col) { return values[static_cast<std::size_t>(row) * width + col]; }
  const T& at(int row, int col) const { return values[static_cast<std::size_t>(row) * width + col]; }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

using Image = Grid2D<float>;
using Mask = Grid2D<std::uint8_t>;

}  // namespace mtseg
