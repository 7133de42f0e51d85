#include "rehrseg/degrade.hpp"

#include <cmath>
#include <numeric>

namespace rehrseg {

SliceProfile make_slice_profile(int r) {
  if (r < 1) throw DomainError("slice profile scale factor must be >= 1, got " + std::to_string(r));
  SliceProfile p;
  p.r = r;
  p.sigma = static_cast<double>(r) / (2.0 * std::sqrt(2.0 * std::log(2.0)));
  const int radius = static_cast<int>(std::ceil(3.0 * p.sigma));
  p.kernel.resize(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i) {
    p.kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * (i * i) / (p.sigma * p.sigma));
  }
  const double total = std::accumulate(p.kernel.begin(), p.kernel.end(), 0.0);
  for (auto& k : p.kernel) k /= total;
  return p;
}

namespace {

// Half-sample symmetric reflection of an arbitrary index into [0, n).
std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  const std::int64_t period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

int checked_axis(Axis axis) {
  const int a = axis_index(axis);
  if (a < 0 || a > 2) throw ShapeError("axis out of range: " + std::to_string(a));
  return a;
}

template <typename G>
G decimate(const G& g, int r, Axis axis, int offset) {
  const int a = checked_axis(axis);
  if (r < 1) throw DomainError("downsampling factor must be >= 1");
  if (offset < 0 || offset >= r) {
    throw DomainError("offset " + std::to_string(offset) + " outside [0," + std::to_string(r) + ")");
  }
  const std::int64_t n = g.shape[a];
  if (n < r) throw ShapeError("extent " + std::to_string(n) + " along axis is smaller than r=" + std::to_string(r));
  const std::int64_t n_out = (n - offset + r - 1) / r;

  G out = g;
  out.shape[a] = n_out;
  out.spacing[a] = g.spacing[a] * r;
  out.data.assign(static_cast<std::size_t>(out.shape.voxels()), {});
  for (std::int64_t z = 0; z < out.shape.d; ++z)
    for (std::int64_t y = 0; y < out.shape.h; ++y)
      for (std::int64_t x = 0; x < out.shape.w; ++x) {
        std::int64_t src[3] = {z, y, x};
        src[a] = offset + src[a] * r;
        out.at(z, y, x) = g.at(src[0], src[1], src[2]);
      }
  return out;
}

}  // namespace

Volume blur_axis(const Volume& v, const SliceProfile& p, Axis axis) {
  const int a = checked_axis(axis);
  const std::int64_t n = v.shape[a];
  if (n < static_cast<std::int64_t>(p.kernel.size())) {
    throw ShapeError("extent " + std::to_string(n) + " is shorter than the slice profile (" + std::to_string(p.kernel.size()) +
                     " taps)");
  }
  const int radius = p.radius();
  const std::int64_t stride = v.stride(a);
  const int a1 = a == 0 ? 1 : 0;
  const int a2 = a == 2 ? 1 : 2;

  Volume out = v;
  std::vector<double> line(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < v.shape[a1]; ++i) {
    for (std::int64_t j = 0; j < v.shape[a2]; ++j) {
      const std::int64_t base = i * v.stride(a1) + j * v.stride(a2);
      for (std::int64_t k = 0; k < n; ++k) line[static_cast<std::size_t>(k)] = v.data[static_cast<std::size_t>(base + k * stride)];
      for (std::int64_t k = 0; k < n; ++k) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          acc += p.kernel[static_cast<std::size_t>(t + radius)] * line[static_cast<std::size_t>(reflect_index(k + t, n))];
        }
        out.data[static_cast<std::size_t>(base + k * stride)] = static_cast<float>(acc);
      }
    }
  }
  return out;
}

Volume downsample_axis(const Volume& v, int r, Axis axis, int offset) { return decimate(v, r, axis, offset); }

LabelVolume downsample_axis(const LabelVolume& l, int r, Axis axis, int offset) { return decimate(l, r, axis, offset); }

DegradedPair degrade_pair(const Volume& v, const LabelVolume& l, int r, Axis axis, int offset) {
  require_same_shape(v.shape, l.shape, "degrade_pair");
  const SliceProfile profile = make_slice_profile(r);
  return {downsample_axis(blur_axis(v, profile, axis), r, axis, offset), downsample_axis(l, r, axis, offset), offset};
}

std::int64_t grid_positions(std::int64_t extent, std::int64_t patch, std::int64_t stride) {
  if (patch <= 0 || stride <= 0) throw DomainError("patch and stride must be positive");
  if (patch > extent) return 0;
  return (extent - patch) / stride + 1;
}

namespace {

void append_pairs(PairSet& set, const Volume& v, const LabelVolume& l, int r, Axis axis, const PatchGeometry& g) {
  const int a = axis_index(axis);
  const DegradedPair lr = degrade_pair(v, l, r, axis, 0);

  const Volume hr_img = move_axis_to_front(v, a);
  const LabelVolume hr_lab = move_axis_to_front(l, a);
  const Volume lr_img = move_axis_to_front(lr.image, a);
  const LabelVolume lr_lab = move_axis_to_front(lr.labels, a);

  // LR windows whose HR counterpart lies fully inside the volume.
  const std::int64_t usable_lr = std::min(lr_img.shape.d, hr_img.shape.d / r);
  const std::int64_t nd = grid_positions(usable_lr, g.lr_depth, g.lr_depth_stride);
  const std::int64_t nh = grid_positions(hr_img.shape.h, g.height, g.inplane_stride);
  const std::int64_t nw = grid_positions(hr_img.shape.w, g.width, g.inplane_stride);
  if (nd == 0 || nh == 0 || nw == 0) {
    throw ShapeError("patch " + std::to_string(g.lr_depth) + "x" + std::to_string(g.height) + "x" + std::to_string(g.width) +
                     " (LR depth, r=" + std::to_string(r) + ") does not fit volume " + v.shape.str());
  }

  const Shape3 lr_extent{g.lr_depth, g.height, g.width};
  const Shape3 hr_extent{g.lr_depth * r, g.height, g.width};
  for (std::int64_t i = 0; i < nd; ++i)
    for (std::int64_t j = 0; j < nh; ++j)
      for (std::int64_t k = 0; k < nw; ++k) {
        const std::int64_t d0 = i * g.lr_depth_stride;
        const std::int64_t h0 = j * g.inplane_stride;
        const std::int64_t w0 = k * g.inplane_stride;
        set.pairs.push_back({
            crop(lr_img, {d0, h0, w0}, lr_extent),
            crop(hr_img, {d0 * r, h0, w0}, hr_extent),
            crop(lr_lab, {d0, h0, w0}, lr_extent),
            crop(hr_lab, {d0 * r, h0, w0}, hr_extent),
        });
      }
}

}  // namespace

PairSet make_selfsr_pairs(const Volume& v, const LabelVolume& l, int r, const PatchGeometry& geom) {
  require_same_shape(v.shape, l.shape, "make_selfsr_pairs");
  if (r < 2) throw DomainError("self-SR scale factor must be >= 2");
  PairSet set;
  set.r = r;
  set.degradation_axis = Axis::X;
  append_pairs(set, v, l, r, Axis::X, geom);
  if (geom.include_y_axis) append_pairs(set, v, l, r, Axis::Y, geom);
  return set;
}

std::vector<DegradedPair> generate_pseudo_lr_set(const Volume& hr_image, const LabelVolume& hr_labels, int r) {
  require_same_shape(hr_image.shape, hr_labels.shape, "generate_pseudo_lr_set");
  const Volume blurred = blur_axis(hr_image, make_slice_profile(r), Axis::Z);
  std::vector<DegradedPair> out;
  out.reserve(static_cast<std::size_t>(r));
  for (int offset = 0; offset < r; ++offset) {
    out.push_back({downsample_axis(blurred, r, Axis::Z, offset), downsample_axis(hr_labels, r, Axis::Z, offset), offset});
  }
  return out;
}

}  // namespace rehrseg
