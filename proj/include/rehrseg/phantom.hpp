#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "rehrseg/volume.hpp"

namespace rehrseg {

// Synthetic annotated volume: smooth textured background plus rotated
// ellipsoids with feathered intensity edges and crisp binary labels.
struct PhantomSpec {
  std::int64_t size = 64;  // isotropic HR extent
  int n_blobs = 2;
  double texture_amplitude = 0.2;
  double min_radius = 5.0;
  double max_radius = 13.0;
  double min_foreground_fraction = 0.01;
  double max_foreground_fraction = 0.15;
  std::uint64_t seed = 0;
};

// Deterministic per seed. Throws DomainError for a degenerate spec.
std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec);

struct BenchmarkCase {
  std::string id;
  std::string split;  // "train" or "val"
  // Relative to the manifest directory.
  std::string lr_image;
  std::string lr_labels;
  std::string hr_image;
  std::string hr_labels;
};

struct BenchmarkManifest {
  int r = 4;
  std::uint64_t seed = 0;
  std::int64_t hr_size = 64;
  int num_classes = 2;
  std::vector<BenchmarkCase> cases;
  std::filesystem::path root;  // directory holding manifest.json; not serialised

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  const BenchmarkCase& find(const std::string& id) const;
  std::vector<BenchmarkCase> split(const std::string& name) const;
};

struct BenchmarkOptions {
  int n_cases = 24;
  int n_val = 4;
  int r = 4;
  std::uint64_t seed = 0;
  PhantomSpec phantom;  // seed is overridden per case
};

inline constexpr const char* kTrainDir = "train";
inline constexpr const char* kGroundTruthDir = "ground_truth";

// Writes hidden HR volumes under ground_truth/, visible LR volumes (z-degraded
// with offset 0) under train/, and manifest.json. Creates `out_dir`.
BenchmarkManifest make_benchmark(const BenchmarkOptions& opts, const std::filesystem::path& out_dir);

void save_manifest(const BenchmarkManifest& m, const std::filesystem::path& path);
BenchmarkManifest load_manifest(const std::filesystem::path& path);

}  // namespace rehrseg
