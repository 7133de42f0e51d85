#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rehrseg/degrade.hpp"
#include "rehrseg/phantom.hpp"
#include "rehrseg/segmenter.hpp"
#include "rehrseg/selfsr.hpp"

namespace rehrseg {

struct PhantomSection {
  int n_cases = 24;
  int n_val = 4;
  std::int64_t size = 64;
  int n_blobs = 2;
  double texture_amplitude = 0.2;
  double min_radius = 5.0;
  double max_radius = 13.0;
};

struct SelfSRSection {
  int channels = 16;
  int merge_channels = 8;
  int branches = 4;
  std::int64_t iters_total = 3000;
  std::int64_t iters_uncertainty_on = 2600;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::string backbone_init;
  PatchGeometry patch;
  bool resume = true;  // continue from an existing checkpoint in the run dir
};

struct SegSection {
  int base_channels = 16;
  int levels = 3;
  double lambda = 1.0;
  std::vector<double> lambda_sweep;  // non-empty: one run per value
  int epochs = 50;
  int batch_size = 2;
  double learning_rate = 1e-3;
  bool pseudo_data = true;
  bool uncertainty = true;
  bool distill = true;
  bool hr_head = true;
  int hr_hidden_channels = 8;
  int feature_level = 1;
  Granularity beta{1, 2, 2};
  std::int64_t crop_height = 32;
  std::int64_t crop_width = 32;
  std::string run_name = "full";
};

struct InferSection {
  std::string case_id;  // JSON key "case"
  std::string run;      // segmenter run directory name; empty uses seg.run_name
};

struct EvalSection {
  std::string run;     // segmenter run to score; empty uses seg.run_name
  std::string split = "val";
};

// One document drives every stage. All paths are relative to output_dir
// unless absolute.
struct Config {
  std::string output_dir = "runs/default";
  std::uint64_t seed = 0;
  int r = 4;
  int num_classes = 2;
  PhantomSection phantom;
  SelfSRSection selfsr;
  SegSection seg;
  InferSection infer;
  EvalSection eval;

  void validate() const;

  SelfSRConfig selfsr_config() const;
  SegConfig seg_config(double lambda) const;
  BenchmarkOptions benchmark_options() const;

  std::filesystem::path data_dir() const { return std::filesystem::path(output_dir) / "data"; }
  std::filesystem::path selfsr_dir() const { return std::filesystem::path(output_dir) / "selfsr"; }
  std::filesystem::path superres_dir() const { return std::filesystem::path(output_dir) / "superres"; }
  std::filesystem::path seg_dir(const std::string& run) const { return std::filesystem::path(output_dir) / "seg" / run; }
  // Run names produced by the current seg section (one per sweep value).
  std::vector<std::pair<std::string, double>> seg_runs() const;
};

nlohmann::ordered_json to_json(const Config& c);

// Overlays `doc` on the defaults. Unknown keys and type mismatches raise
// ConfigError naming the dotted key.
Config config_from_json(const nlohmann::json& doc);

// Applies "a.b.c=value" overrides. The value is parsed as JSON when possible
// and taken as a plain string otherwise.
nlohmann::json apply_overrides(nlohmann::json doc, const std::vector<std::string>& overrides);

Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace rehrseg
