#pragma once

#include <filesystem>

#include "rehrseg/volume.hpp"

namespace rehrseg {

// NIfTI-1 (.nii or .nii.gz) input/output. Orientation is ignored: voxels are
// kept in stored order, with NIfTI k/j/i mapped to array axes z/y/x and the
// spacing taken from pixdim[3]/[2]/[1].

// Loads a 3D scalar volume and min-max normalises it to [0,1]. A constant
// volume maps to all zeros. Non-finite voxels raise IoError naming (z,y,x).
Volume load_volume(const std::filesystem::path& path);

// Loads a 3D scalar volume without normalisation (uncertainty maps etc).
Volume load_volume_raw(const std::filesystem::path& path);

// num_classes <= 0 infers max(label)+1 (at least 2).
LabelVolume load_labels(const std::filesystem::path& path, int num_classes = 0);

// Volumes are stored as float32, labels as int16.
void save_volume(const Volume& v, const std::filesystem::path& path);
void save_labels(const LabelVolume& l, const std::filesystem::path& path);

enum class Interp { BSpline3, Nearest };

// Resamples every axis to the finest spacing. Output extent along an axis is
// round(n * s / s_min); output voxel i sits at source coordinate i * s_min / s,
// so voxel 0 is shared between the grids. Axes already at s_min are copied.
Volume resample_isotropic(const Volume& v, Interp method = Interp::BSpline3);
LabelVolume resample_isotropic(const LabelVolume& l, Interp method = Interp::Nearest);

// Resamples one axis to `n_out` samples at source coordinates i * step.
Volume resample_axis(const Volume& v, int axis, std::int64_t n_out, double step, Interp method);
LabelVolume resample_axis(const LabelVolume& l, int axis, std::int64_t n_out, double step);

}  // namespace rehrseg
