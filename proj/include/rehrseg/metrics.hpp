#pragma once

#include <span>
#include <vector>

#include "rehrseg/volume.hpp"

namespace rehrseg {

// Dice similarity coefficient 2|A n B| / (|A| + |B|) for one class.
// Both masks empty gives 1.0.
double dice(const LabelVolume& a, const LabelVolume& b, int class_id);

// Foreground voxels with a 6-neighbour outside the mask (the grid border
// counts as outside).
std::vector<std::int64_t> surface_voxels(std::span<const std::uint8_t> mask, const Shape3& shape);

// 95th percentile (linear interpolation between order statistics) of the
// pooled surface-to-surface distances from A to B and from B to A, in mm.
// Throws DomainError if either mask is empty.
double hd95(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, const Shape3& shape, const Spacing& spacing);
double hd95(const LabelVolume& a, const LabelVolume& b, int class_id);

// Squared Euclidean distance (mm^2) from every voxel to the nearest site.
// Voxels with no site anywhere get +infinity.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> sites, const Shape3& shape, const Spacing& spacing);

// 10 log10(range^2 / MSE). Throws DomainError when MSE is zero.
double psnr(const Volume& x, const Volume& y, double data_range = 1.0);

// Mean SSIM over in-plane (y,x) slices with an 11x11 Gaussian window
// (sigma 1.5), K1 = 0.01, K2 = 0.03. Only windows fully inside the slice count.
double ssim(const Volume& x, const Volume& y, double data_range = 1.0);

// Pearson correlation coefficient. Throws DomainError on zero variance.
double pearson(std::span<const float> a, std::span<const float> b);

// Pearson correlation between U and |pred - target| over all voxels.
double uncertainty_error_correlation(const Volume& uncertainty, const Volume& pred, const Volume& target);

// Mean and sample standard deviation.
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

}  // namespace rehrseg
