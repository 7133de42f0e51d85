#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "rehrseg/config.hpp"
#include "rehrseg/phantom.hpp"
#include "rehrseg/segmenter.hpp"
#include "rehrseg/selfsr.hpp"

namespace rehrseg {

struct CaseData {
  BenchmarkCase meta;
  Volume lr;              // min-max normalised
  LabelVolume lr_labels;
};

CaseData load_case(const BenchmarkManifest& m, const BenchmarkCase& c);

// Self-SR pairs pooled over the given cases, each resampled to isotropic
// spacing first.
PairSet build_selfsr_pairs(const std::vector<CaseData>& cases, int r, const PatchGeometry& geom);

// Bundle files written by the superres stage.
struct BundlePaths {
  std::filesystem::path image, labels, uncertainty;
};
BundlePaths bundle_paths(const Config& cfg, const std::string& case_id);
PseudoHRBundle load_bundle(const Config& cfg, const std::string& case_id, int num_classes);

// Hidden HR image mapped into the intensity frame of its normalised LR
// counterpart: (hr - min(lr_raw)) / (max(lr_raw) - min(lr_raw)).
Volume hr_reference(const BenchmarkManifest& m, const BenchmarkCase& c);

// Stage entry points. Each reads and writes below cfg.output_dir.
BenchmarkManifest cmd_phantom(const Config& cfg);
SelfSRModel cmd_train_sr(const Config& cfg);
// Returns the number of pseudo-LR samples written.
std::size_t cmd_superres(const Config& cfg);
// Trains one segmenter per seg run (lambda sweep); returns the run names.
std::vector<std::string> cmd_train_seg(const Config& cfg);
// Writes <case>_lr_pred.nii.gz (and _hr_pred when the HR head exists);
// returns the written paths.
std::vector<std::filesystem::path> cmd_infer(const Config& cfg);
// Scores one segmenter run (eval.run, default seg.run_name; "ground_truth"
// scores the reference labels against themselves). Writes metrics.csv and
// summary.json under eval/<run>/ and returns the summary.
nlohmann::ordered_json cmd_eval(const Config& cfg);

}  // namespace rehrseg
