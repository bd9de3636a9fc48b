#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "unpairseg/errors.hpp"

namespace unpairseg {

/// Array extent in (slices, rows, cols) order; cols vary fastest in memory.
struct Shape3 {
  std::int64_t slices = 0;
  std::int64_t rows = 0;
  std::int64_t cols = 0;

  [[nodiscard]] std::size_t numel() const {
    return static_cast<std::size_t>(slices * rows * cols);
  }
  [[nodiscard]] std::int64_t operator[](int axis) const {
    return axis == 0 ? slices : axis == 1 ? rows : cols;
  }
  std::int64_t& operator[](int axis) { return axis == 0 ? slices : axis == 1 ? rows : cols; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Millimetres per voxel, (inter-slice, row, col).
using Spacing = std::array<double, 3>;

/// Label classes used throughout.
enum LabelClass : std::uint8_t {
  kBackground = 0,
  kIntraMeatal = 1,
  kExtraMeatal = 2,
  kCochlea = 3,
};
inline constexpr int kNumClasses = 4;

/// A dense 3D grid with geometry metadata.
///
/// Orientation follows the voxel-axis convention of the on-disk format: the
/// three letters describe, in order, the anatomical direction toward which the
/// col, row and slice indices increase. `origin_mm` is the RAS world position
/// of voxel (0, 0, 0).
template <typename T>
struct Grid {
  using value_type = T;

  std::vector<T> data;
  Shape3 shape;
  Spacing spacing_mm{1.0, 1.0, 1.0};
  std::string orientation = "LPS";
  std::array<double, 3> origin_mm{0.0, 0.0, 0.0};
  std::string source_id;

  Grid() = default;
  Grid(Shape3 s, Spacing sp, std::string orient = "LPS", T fill = T{})
      : data(s.numel(), fill), shape(s), spacing_mm(sp), orientation(std::move(orient)) {}

  [[nodiscard]] std::size_t index(std::int64_t k, std::int64_t r, std::int64_t c) const {
    return static_cast<std::size_t>((k * shape.rows + r) * shape.cols + c);
  }
  T& at(std::int64_t k, std::int64_t r, std::int64_t c) { return data[index(k, r, c)]; }
  const T& at(std::int64_t k, std::int64_t r, std::int64_t c) const { return data[index(k, r, c)]; }

  /// Copy of the geometry with a different payload type.
  template <typename U>
  [[nodiscard]] Grid<U> like(U fill = U{}) const {
    Grid<U> g(shape, spacing_mm, orientation, fill);
    g.origin_mm = origin_mm;
    g.source_id = source_id;
    return g;
  }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Volume = Grid<float>;
using LabelMap = Grid<std::uint8_t>;
using Mask = Grid<std::uint8_t>;

template <typename A, typename B>
bool same_geometry(const Grid<A>& a, const Grid<B>& b, double spacing_tol = 1e-6) {
  if (!(a.shape == b.shape) || a.orientation != b.orientation) return false;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(a.spacing_mm[i] - b.spacing_mm[i]) > spacing_tol) return false;
  }
  return true;
}

/// Throws if spacing is non-positive, the orientation code is invalid or the
/// payload size disagrees with the shape.
template <typename T>
void validate(const Grid<T>& g);

/// Throws if any voxel is outside {0,1,2,3}.
void validate_labels(const LabelMap& l);

}  // namespace unpairseg
