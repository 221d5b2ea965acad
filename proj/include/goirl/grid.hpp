#pragma once

#include <cmath>
#include <compare>
#include <optional>

#include "goirl/core.hpp"

namespace goirl {

/// Grid cell address. `row` grows northward (+y), `col` eastward (+x).
struct Cell {
  int row = 0;
  int col = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Square grid centred on the origin of the target frame.
struct GridSpec {
  int side = 50;
  double resolution = 1.0;

  int size() const { return side * side; }
  double half_extent() const { return 0.5 * side * resolution; }

  bool contains(Cell c) const { return c.row >= 0 && c.row < side && c.col >= 0 && c.col < side; }
  int index(Cell c) const { return c.row * side + c.col; }
  Cell cell(int index) const { return {index / side, index % side}; }

  Vec2 center(Cell c) const {
    const double h = half_extent();
    return {-h + (c.col + 0.5) * resolution, -h + (c.row + 0.5) * resolution};
  }
  Vec2 center(int index) const { return center(cell(index)); }

  bool in_extent(Vec2 p) const {
    const double h = half_extent();
    return p.x >= -h && p.x < h && p.y >= -h && p.y < h;
  }

  /// Cell containing `p`, or nullopt when outside the grid.
  std::optional<Cell> locate(Vec2 p) const {
    if (!in_extent(p)) return std::nullopt;
    return clamp_locate(p);
  }

  /// Cell containing `p`, clamped to the boundary when outside.
  Cell clamp_locate(Vec2 p, bool* clamped = nullptr) const {
    const double h = half_extent();
    int col = static_cast<int>(std::floor((p.x + h) / resolution));
    int row = static_cast<int>(std::floor((p.y + h) / resolution));
    const int c2 = std::clamp(col, 0, side - 1), r2 = std::clamp(row, 0, side - 1);
    if (clamped) *clamped = (c2 != col || r2 != row);
    return {r2, c2};
  }

  /// Grid obtained by pooling `factor`×`factor` blocks.
  GridSpec coarsened(int factor) const {
    require(factor > 0 && side % factor == 0, "grid side not divisible by pooling factor");
    return {side / factor, resolution * factor};
  }
};

inline GridSpec default_fine_grid() { return {50, 1.0}; }
inline GridSpec default_coarse_grid() { return {25, 2.0}; }

}  // namespace goirl
