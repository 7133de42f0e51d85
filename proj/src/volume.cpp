#include "rehrseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace rehrseg {

std::string Shape3::str() const {
  std::ostringstream os;
  os << d << "x" << h << "x" << w;
  return os.str();
}

double Spacing::min() const { return std::min({z, y, x}); }

void require_same_shape(const Shape3& a, const Shape3& b, const std::string& what) {
  if (!(a == b)) {
    throw ShapeError(what + ": shape mismatch " + a.str() + " vs " + b.str());
  }
}

namespace {

void validate_grid_header(const Shape3& s, const Spacing& sp, std::size_t n) {
  if (s.d <= 0 || s.h <= 0 || s.w <= 0) throw ShapeError("empty volume " + s.str());
  if (static_cast<std::int64_t>(n) != s.voxels()) throw ShapeError("data size does not match shape " + s.str());
  for (int a = 0; a < 3; ++a) {
    if (!(sp[a] > 0.0) || !std::isfinite(sp[a])) throw DomainError("spacing components must be positive");
  }
}

}  // namespace

void validate(const Volume& v) {
  validate_grid_header(v.shape, v.spacing, v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (!std::isfinite(v.data[i])) throw DomainError("non-finite voxel at flat index " + std::to_string(i));
  }
}

void validate(const LabelVolume& l) {
  validate_grid_header(l.shape, l.spacing, l.data.size());
  if (l.num_classes <= 0) throw DomainError("num_classes must be positive");
  for (std::size_t i = 0; i < l.data.size(); ++i) {
    if (l.data[i] < 0 || l.data[i] >= l.num_classes) {
      throw DomainError("label " + std::to_string(l.data[i]) + " outside [0," + std::to_string(l.num_classes) +
                        ") at flat index " + std::to_string(i));
    }
  }
}

namespace {

// Order of source axes that make up the destination axes.
std::array<int, 3> front_order(int axis) {
  switch (axis) {
    case 0: return {0, 1, 2};
    case 1: return {1, 0, 2};
    case 2: return {2, 0, 1};
    default: throw ShapeError("axis out of range: " + std::to_string(axis));
  }
}

template <typename G>
G permute(const G& g, const std::array<int, 3>& order) {
  G out = g;
  Shape3 s;
  Spacing sp;
  for (int a = 0; a < 3; ++a) {
    s[a] = g.shape[order[a]];
    sp[a] = g.spacing[order[a]];
  }
  out.shape = s;
  out.spacing = sp;
  std::array<std::int64_t, 3> src_stride{g.stride(order[0]), g.stride(order[1]), g.stride(order[2])};
  std::size_t k = 0;
  for (std::int64_t i = 0; i < s.d; ++i)
    for (std::int64_t j = 0; j < s.h; ++j)
      for (std::int64_t l = 0; l < s.w; ++l)
        out.data[k++] = g.data[static_cast<std::size_t>(i * src_stride[0] + j * src_stride[1] + l * src_stride[2])];
  return out;
}

}  // namespace

template <typename G>
G move_axis_to_front(const G& g, int axis) {
  return permute(g, front_order(axis));
}

template <typename G>
G move_front_to_axis(const G& g, int axis) {
  auto fwd = front_order(axis);
  std::array<int, 3> inv{};
  for (int a = 0; a < 3; ++a) inv[fwd[a]] = a;
  return permute(g, inv);
}

template <typename G>
G crop(const G& g, const std::array<std::int64_t, 3>& origin, const Shape3& extent) {
  for (int a = 0; a < 3; ++a) {
    if (origin[a] < 0 || extent[a] <= 0 || origin[a] + extent[a] > g.shape[a]) {
      throw ShapeError("crop window outside volume " + g.shape.str());
    }
  }
  G out = g;
  out.shape = extent;
  out.data.assign(static_cast<std::size_t>(extent.voxels()), {});
  std::size_t k = 0;
  for (std::int64_t z = 0; z < extent.d; ++z)
    for (std::int64_t y = 0; y < extent.h; ++y) {
      const auto* row = &g.data[g.index(origin[0] + z, origin[1] + y, origin[2])];
      std::copy(row, row + extent.w, out.data.begin() + static_cast<std::ptrdiff_t>(k));
      k += static_cast<std::size_t>(extent.w);
    }
  return out;
}

template Volume move_axis_to_front(const Volume&, int);
template LabelVolume move_axis_to_front(const LabelVolume&, int);
template Volume move_front_to_axis(const Volume&, int);
template LabelVolume move_front_to_axis(const LabelVolume&, int);
template Volume crop(const Volume&, const std::array<std::int64_t, 3>&, const Shape3&);
template LabelVolume crop(const LabelVolume&, const std::array<std::int64_t, 3>&, const Shape3&);

}  // namespace rehrseg
