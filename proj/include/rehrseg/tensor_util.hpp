#pragma once

#include <torch/torch.h>

#include "rehrseg/volume.hpp"

namespace rehrseg {

// (D,H,W) float32 tensor sharing no storage with the volume.
torch::Tensor to_tensor(const Volume& v);
// (D,H,W) int64 tensor.
torch::Tensor to_tensor(const LabelVolume& l);

// Expects a (D,H,W) tensor (leading singleton dims are squeezed).
Volume to_volume(const torch::Tensor& t, const Spacing& spacing);
LabelVolume to_labels(const torch::Tensor& t, const Spacing& spacing, int num_classes);

// (B,D,H,W) int64 -> (B,K,D,H,W) float one-hot.
torch::Tensor one_hot(const torch::Tensor& labels, int num_classes);

// Keeps indices offset, offset + r, ... along `dim`.
torch::Tensor decimate(const torch::Tensor& t, std::int64_t dim, int r, int offset);

// Linear upsampling by r along `dim` where output j samples input j / r;
// positions past the last input sample replicate it.
torch::Tensor upsample_aligned(const torch::Tensor& t, std::int64_t dim, int r);

// Cubic B-spline upsampling by r along `dim`, matching resample_axis with
// step 1/r and r * n outputs.
torch::Tensor bspline_upsample(const torch::Tensor& t, std::int64_t dim, int r);

// Throws TrainingError naming `what` when `t` holds NaN/Inf.
void require_finite(const torch::Tensor& t, const std::string& what);

}  // namespace rehrseg
