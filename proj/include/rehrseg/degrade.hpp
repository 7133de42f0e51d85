#pragma once

#include <vector>

#include "rehrseg/volume.hpp"

namespace rehrseg {

// Gaussian slice profile whose full width at half maximum equals r voxels.
struct SliceProfile {
  int r = 1;
  double sigma = 0.0;
  std::vector<double> kernel;  // odd length, symmetric, sums to 1

  int radius() const { return static_cast<int>(kernel.size() / 2); }
};

// sigma = r / (2 sqrt(2 ln 2)); taps cover +-ceil(3 sigma), then renormalised.
SliceProfile make_slice_profile(int r);

// 1D correlation along `axis` with half-sample symmetric reflection at both
// ends (d c b a | a b c d | d c b a). Requires extent >= kernel length.
Volume blur_axis(const Volume& v, const SliceProfile& p, Axis axis);

// Keeps indices offset, offset + r, ... along `axis`; spacing scales by r.
Volume downsample_axis(const Volume& v, int r, Axis axis, int offset);
LabelVolume downsample_axis(const LabelVolume& l, int r, Axis axis, int offset);

struct DegradedPair {
  Volume image;
  LabelVolume labels;
  int offset = 0;
};

// Image: blur then decimate. Labels: decimate only.
DegradedPair degrade_pair(const Volume& v, const LabelVolume& l, int r, Axis axis, int offset);

// Patch geometry for self-SR pair extraction. Extents are in network layout:
// the degraded axis is moved to position 0 ("depth").
struct PatchGeometry {
  std::int64_t lr_depth = 8;   // LR extent along the degraded axis
  std::int64_t height = 32;    // extents along the two remaining axes
  std::int64_t width = 32;
  std::int64_t lr_depth_stride = 4;
  std::int64_t inplane_stride = 16;
  bool include_y_axis = false;  // also synthesise pairs degraded along y
};

struct TrainingPair {
  Volume lr_image;  // depth = lr_depth
  Volume hr_image;  // depth = r * lr_depth
  LabelVolume lr_labels;
  LabelVolume hr_labels;
};

struct PairSet {
  std::vector<TrainingPair> pairs;
  Axis degradation_axis = Axis::X;
  int r = 1;
};

// Number of window positions of size `patch` with `stride` inside `extent`.
std::int64_t grid_positions(std::int64_t extent, std::int64_t patch, std::int64_t stride);

// Self-SR pairs from one isotropic annotated volume: the volume is degraded
// along x (and optionally y), and aligned LR/HR windows are cut on a regular
// grid. LR voxel k along the degraded axis corresponds to HR voxel r * k.
PairSet make_selfsr_pairs(const Volume& v, const LabelVolume& l, int r, const PatchGeometry& geom);

// r pseudo-LR volumes from a super-resolved volume, one per decimation offset
// 0..r-1 along z.
std::vector<DegradedPair> generate_pseudo_lr_set(const Volume& hr_image, const LabelVolume& hr_labels, int r);

}  // namespace rehrseg
