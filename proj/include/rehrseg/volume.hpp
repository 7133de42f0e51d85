#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rehrseg/errors.hpp"

namespace rehrseg {

// Array axes in index order. Axis 0 (Z) is the through-plane (slice) axis.
enum class Axis : int { Z = 0, Y = 1, X = 2 };

inline int axis_index(Axis a) { return static_cast<int>(a); }

struct Shape3 {
  std::int64_t d = 0;  // z
  std::int64_t h = 0;  // y
  std::int64_t w = 0;  // x

  std::int64_t operator[](int axis) const { return axis == 0 ? d : axis == 1 ? h : w; }
  std::int64_t& operator[](int axis) { return axis == 0 ? d : axis == 1 ? h : w; }
  std::int64_t voxels() const { return d * h * w; }
  bool operator==(const Shape3&) const = default;
  std::string str() const;
};

// Voxel spacing in millimetres, (sz, sy, sx).
struct Spacing {
  double z = 1.0;
  double y = 1.0;
  double x = 1.0;

  double operator[](int axis) const { return axis == 0 ? z : axis == 1 ? y : x; }
  double& operator[](int axis) { return axis == 0 ? z : axis == 1 ? y : x; }
  double min() const;
  bool operator==(const Spacing&) const = default;
};

// Dense row-major 3D grid, x fastest. Matches the NIfTI on-disk voxel order.
template <typename T>
struct Grid {
  Shape3 shape;
  Spacing spacing;
  std::vector<T> data;

  Grid() = default;
  Grid(Shape3 s, Spacing sp, T fill = T{})
      : shape(s), spacing(sp), data(static_cast<std::size_t>(s.voxels()), fill) {}

  std::size_t index(std::int64_t z, std::int64_t y, std::int64_t x) const {
    return static_cast<std::size_t>((z * shape.h + y) * shape.w + x);
  }
  T& at(std::int64_t z, std::int64_t y, std::int64_t x) { return data[index(z, y, x)]; }
  const T& at(std::int64_t z, std::int64_t y, std::int64_t x) const { return data[index(z, y, x)]; }

  // Element stride along an axis.
  std::int64_t stride(int axis) const {
    return axis == 0 ? shape.h * shape.w : axis == 1 ? shape.w : 1;
  }

  std::span<T> values() { return data; }
  std::span<const T> values() const { return data; }
};

// Real-valued intensities, normalised to [0,1] when loaded from disk.
struct Volume : Grid<float> {
  using Grid<float>::Grid;
};

// Integer class ids in [0, num_classes).
struct LabelVolume : Grid<std::int32_t> {
  int num_classes = 2;

  LabelVolume() = default;
  LabelVolume(Shape3 s, Spacing sp, int classes, std::int32_t fill = 0)
      : Grid<std::int32_t>(s, sp, fill), num_classes(classes) {}
};

// Throws ShapeError/DomainError when an invariant does not hold.
void validate(const Volume& v);
void validate(const LabelVolume& l);
void require_same_shape(const Shape3& a, const Shape3& b, const std::string& what);

// Copy of `g` with `axis` moved to position 0; the other two keep their order.
template <typename G>
G move_axis_to_front(const G& g, int axis);

// Inverse of move_axis_to_front.
template <typename G>
G move_front_to_axis(const G& g, int axis);

// Sub-block starting at `origin` with extent `extent`.
template <typename G>
G crop(const G& g, const std::array<std::int64_t, 3>& origin, const Shape3& extent);

}  // namespace rehrseg
