#include "rehrseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>

#include "rehrseg/degrade.hpp"
#include "rehrseg/errors.hpp"
#include "rehrseg/metrics.hpp"
#include "rehrseg/volume_io.hpp"

namespace rehrseg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

BenchmarkManifest load_benchmark(const Config& cfg) {
  const auto path = cfg.data_dir() / "manifest.json";
  if (!fs::exists(path)) throw IoError("no benchmark at " + path.string() + "; run the phantom stage first");
  auto m = load_manifest(path);
  if (m.r != cfg.r) throw ConfigError("benchmark was built with r=" + std::to_string(m.r) + " but the config uses r=" + std::to_string(cfg.r));
  if (m.num_classes != cfg.num_classes) throw ConfigError("benchmark num_classes disagrees with the config");
  return m;
}

std::vector<CaseData> load_cases(const BenchmarkManifest& m, const std::vector<BenchmarkCase>& cases) {
  std::vector<CaseData> out;
  out.reserve(cases.size());
  for (const auto& c : cases) out.push_back(load_case(m, c));
  return out;
}

void write_json(const ordered_json& j, const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::string seg_run_for(const Config& cfg, const std::string& requested) {
  return requested.empty() ? cfg.seg_runs().front().first : requested;
}

std::vector<BenchmarkCase> eval_cases(const BenchmarkManifest& m, const std::string& split) {
  return split == "all" ? m.cases : m.split(split);
}

LabelVolume nearest_upsample_z(const LabelVolume& lr, int r) {
  return resample_axis(lr, 0, lr.shape.d * r, 1.0 / r);
}

// Mean over foreground classes. Returns NaN for HD95 when any class has an
// empty mask on either side.
double mean_dice(const LabelVolume& a, const LabelVolume& b) {
  double s = 0.0;
  for (int k = 1; k < a.num_classes; ++k) s += dice(a, b, k);
  return s / (a.num_classes - 1);
}

double mean_hd95(const LabelVolume& a, const LabelVolume& b) {
  double s = 0.0;
  for (int k = 1; k < a.num_classes; ++k) {
    try {
      s += hd95(a, b, k);
    } catch (const DomainError&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  }
  return s / (a.num_classes - 1);
}

}  // namespace

CaseData load_case(const BenchmarkManifest& m, const BenchmarkCase& c) {
  CaseData d{c, load_volume(m.resolve(c.lr_image)), load_labels(m.resolve(c.lr_labels), m.num_classes)};
  require_same_shape(d.lr.shape, d.lr_labels.shape, "case " + c.id);
  return d;
}

PairSet build_selfsr_pairs(const std::vector<CaseData>& cases, int r, const PatchGeometry& geom) {
  if (cases.empty()) throw DomainError("self-SR training needs at least one case");
  PairSet all;
  all.r = r;
  for (const auto& c : cases) {
    const auto iso = resample_isotropic(c.lr, Interp::BSpline3);
    const auto iso_labels = resample_isotropic(c.lr_labels, Interp::Nearest);
    auto set = make_selfsr_pairs(iso, iso_labels, r, geom);
    all.degradation_axis = set.degradation_axis;
    for (auto& p : set.pairs) all.pairs.push_back(std::move(p));
  }
  return all;
}

BundlePaths bundle_paths(const Config& cfg, const std::string& case_id) {
  const auto dir = cfg.superres_dir();
  return {dir / (case_id + "_sr_image.nii.gz"), dir / (case_id + "_sr_labels.nii.gz"), dir / (case_id + "_uncertainty.nii.gz")};
}

PseudoHRBundle load_bundle(const Config& cfg, const std::string& case_id, int num_classes) {
  const auto p = bundle_paths(cfg, case_id);
  for (const auto& f : {p.image, p.labels, p.uncertainty}) {
    if (!fs::exists(f)) throw IoError("missing self-SR output " + f.string() + "; run the superres stage first");
  }
  PseudoHRBundle b;
  b.image = load_volume_raw(p.image);
  b.labels = load_labels(p.labels, num_classes);
  b.uncertainty = load_volume_raw(p.uncertainty);
  require_same_shape(b.image.shape, b.labels.shape, "bundle " + case_id);
  require_same_shape(b.image.shape, b.uncertainty.shape, "bundle " + case_id);
  return b;
}

Volume hr_reference(const BenchmarkManifest& m, const BenchmarkCase& c) {
  const auto lr_raw = load_volume_raw(m.resolve(c.lr_image));
  auto hr = load_volume_raw(m.resolve(c.hr_image));
  const auto [lo, hi] = std::minmax_element(lr_raw.data.begin(), lr_raw.data.end());
  const float range = *hi - *lo;
  for (auto& v : hr.data) v = range > 0.0f ? (v - *lo) / range : 0.0f;
  return hr;
}

BenchmarkManifest cmd_phantom(const Config& cfg) {
  auto m = make_benchmark(cfg.benchmark_options(), cfg.data_dir());
  std::cout << "phantom: wrote " << m.cases.size() << " cases to " << cfg.data_dir().string() << std::endl;
  return m;
}

SelfSRModel cmd_train_sr(const Config& cfg) {
  const auto m = load_benchmark(cfg);
  const auto cases = load_cases(m, m.split("train"));
  const auto pairs = build_selfsr_pairs(cases, cfg.r, cfg.selfsr.patch);
  const SelfSRConfig sc = cfg.selfsr_config();

  SelfSRModel model;
  const auto dir = cfg.selfsr_dir();
  if (cfg.selfsr.resume && fs::exists(dir / "manifest.json")) {
    model = load_selfsr_checkpoint(dir);
    const auto& old = model.config;
    if (old.r != sc.r || old.channels != sc.channels || old.merge_channels != sc.merge_channels || old.branches != sc.branches ||
        old.num_classes != sc.num_classes) {
      throw ConfigError("existing self-SR checkpoint in " + dir.string() + " has a different architecture; set selfsr.resume=false");
    }
    model.config = sc;
    model.config.backbone_init.clear();
    std::cout << "train-sr: resuming at iteration " << model.iteration << std::endl;
  } else {
    model = make_selfsr_model(sc);
  }
  std::cout << "train-sr: " << pairs.pairs.size() << " pairs from " << cases.size() << " cases" << std::endl;
  // Checkpoint periodically so an interrupted run can resume.
  constexpr std::int64_t kCheckpointEvery = 250;
  while (model.iteration < sc.iters_total) {
    train_selfsr(model, pairs, model.iteration + kCheckpointEvery);
    save_selfsr_checkpoint(model, dir);
    const auto& last = model.trace.back();
    std::cout << "train-sr: iteration " << model.iteration << "/" << sc.iters_total << " l1 " << last.l1 << " label " << last.label
              << std::endl;
  }
  save_selfsr_checkpoint(model, dir);
  std::cout << "train-sr: checkpoint at iteration " << model.iteration << " in " << dir.string() << std::endl;
  return model;
}

std::size_t cmd_superres(const Config& cfg) {
  const auto m = load_benchmark(cfg);
  const auto dir = cfg.selfsr_dir();
  if (!fs::exists(dir / "manifest.json")) throw IoError("no self-SR checkpoint in " + dir.string() + "; run train-sr first");
  const auto model = load_selfsr_checkpoint(dir);
  if (model.config.r != cfg.r) throw ConfigError("self-SR checkpoint r disagrees with the config");

  const auto out_dir = cfg.superres_dir();
  fs::create_directories(out_dir / "pseudo_lr");
  ordered_json entries = ordered_json::array();
  std::size_t n_pseudo = 0;
  for (const auto& c : m.cases) {
    const auto data = load_case(m, c);
    const auto bundle = infer_selfsr(data.lr, data.lr_labels, model);
    if (bundle.image.shape.d != data.lr.shape.d * cfg.r || bundle.image.shape.h != data.lr.shape.h || bundle.image.shape.w != data.lr.shape.w) {
      throw ShapeError("self-SR output for " + c.id + " has shape " + bundle.image.shape.str());
    }
    const auto paths = bundle_paths(cfg, c.id);
    save_volume(bundle.image, paths.image);
    save_labels(bundle.labels, paths.labels);
    save_volume(bundle.uncertainty, paths.uncertainty);

    ordered_json pseudo = ordered_json::array();
    for (const auto& p : generate_pseudo_lr_set(bundle.image, bundle.labels, cfg.r)) {
      const std::string stem = c.id + "_o" + std::to_string(p.offset);
      save_volume(p.image, out_dir / "pseudo_lr" / (stem + "_image.nii.gz"));
      save_labels(p.labels, out_dir / "pseudo_lr" / (stem + "_labels.nii.gz"));
      pseudo.push_back({{"offset", p.offset},
                        {"image", "pseudo_lr/" + stem + "_image.nii.gz"},
                        {"labels", "pseudo_lr/" + stem + "_labels.nii.gz"}});
      ++n_pseudo;
    }
    entries.push_back({{"id", c.id},
                       {"split", c.split},
                       {"image", paths.image.filename().string()},
                       {"labels", paths.labels.filename().string()},
                       {"uncertainty", paths.uncertainty.filename().string()},
                       {"pseudo_lr", pseudo}});
  }
  ordered_json j;
  j["r"] = cfg.r;
  j["selfsr_iteration"] = model.iteration;
  j["n_bundles"] = entries.size();
  j["n_pseudo_samples"] = n_pseudo;
  j["cases"] = entries;
  write_json(j, out_dir / "manifest.json");
  std::cout << "superres: " << entries.size() << " bundles, " << n_pseudo << " pseudo-LR samples in " << out_dir.string() << std::endl;
  return n_pseudo;
}

std::vector<std::string> cmd_train_seg(const Config& cfg) {
  const auto m = load_benchmark(cfg);
  const auto cases = load_cases(m, m.split("train"));
  const SegConfig base = cfg.seg_config(cfg.seg.lambda);
  const bool need_bundle = base.pseudo_data_on || base.uncertainty_on || base.hr_head_on;

  std::vector<SegCase> dataset;
  for (const auto& c : cases) {
    std::optional<PseudoHRBundle> bundle;
    if (need_bundle) bundle = load_bundle(cfg, c.meta.id, cfg.num_classes);
    dataset.push_back(make_seg_case(c.meta.id, c.lr, c.lr_labels, bundle ? &*bundle : nullptr, base));
  }
  std::optional<SelfSRModel> teacher;
  if (base.distill_on) {
    if (!fs::exists(cfg.selfsr_dir() / "manifest.json")) throw IoError("distillation needs a self-SR checkpoint; run train-sr first");
    teacher = load_selfsr_checkpoint(cfg.selfsr_dir());
  }

  std::vector<std::string> names;
  for (const auto& [name, lambda] : cfg.seg_runs()) {
    const SegConfig sc = cfg.seg_config(lambda);
    std::cout << "train-seg: run " << name << " (lambda " << lambda << ", " << dataset.size() << " cases)" << std::endl;
    const auto model = train_segmenter(dataset, sc, teacher ? &*teacher : nullptr);
    save_seg_checkpoint(model, cfg.seg_dir(name));
    std::cout << "train-seg: final epoch loss " << model.epoch_loss.back() << std::endl;
    names.push_back(name);
  }
  return names;
}

std::vector<fs::path> cmd_infer(const Config& cfg) {
  if (cfg.infer.case_id.empty()) throw ConfigError("infer.case must name a benchmark case");
  const auto m = load_benchmark(cfg);
  const auto& c = m.find(cfg.infer.case_id);
  const auto run = seg_run_for(cfg, cfg.infer.run);
  const auto model = load_seg_checkpoint(cfg.seg_dir(run));
  const auto data = load_case(m, c);
  const auto pred = infer_segmenter(data.lr, model);

  const auto dir = fs::path(cfg.output_dir) / "infer" / run;
  fs::create_directories(dir);
  std::vector<fs::path> written{dir / (c.id + "_lr_pred.nii.gz")};
  save_labels(pred.lr, written.back());
  if (pred.hr) {
    written.push_back(dir / (c.id + "_hr_pred.nii.gz"));
    save_labels(*pred.hr, written.back());
  }
  for (const auto& p : written) std::cout << "infer: wrote " << p.string() << std::endl;
  return written;
}

ordered_json cmd_eval(const Config& cfg) {
  const auto m = load_benchmark(cfg);
  const auto run = seg_run_for(cfg, cfg.eval.run);
  const bool reference = run == "ground_truth";
  std::optional<SegModel> model;
  if (!reference) model = load_seg_checkpoint(cfg.seg_dir(run));

  const std::vector<std::string> columns = {"dsc_lr",       "hd95_lr",         "dsc_hr",  "hd95_hr",       "dsc_hr_nn",
                                            "hd95_hr_nn",   "psnr_sr",         "psnr_bspline", "ssim_sr", "ssim_bspline",
                                            "label_dsc_sr", "label_dsc_nn",    "uncertainty_corr"};
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> ids, splits;
  std::vector<std::vector<double>> rows;

  for (const auto& c : eval_cases(m, cfg.eval.split)) {
    const auto data = load_case(m, c);
    const auto hr_labels = load_labels(m.resolve(c.hr_labels), m.num_classes);
    std::vector<double> row(columns.size(), nan);

    LabelVolume lr_pred = data.lr_labels;
    std::optional<LabelVolume> hr_pred;
    if (reference) {
      hr_pred = hr_labels;
    } else {
      auto p = infer_segmenter(data.lr, *model);
      lr_pred = std::move(p.lr);
      hr_pred = std::move(p.hr);
    }
    const auto hr_nn = nearest_upsample_z(lr_pred, cfg.r);
    if (!hr_pred) hr_pred = hr_nn;
    require_same_shape(hr_pred->shape, hr_labels.shape, "HR prediction for " + c.id);

    row[0] = mean_dice(lr_pred, data.lr_labels);
    row[1] = mean_hd95(lr_pred, data.lr_labels);
    row[2] = mean_dice(*hr_pred, hr_labels);
    row[3] = mean_hd95(*hr_pred, hr_labels);
    row[4] = mean_dice(hr_nn, hr_labels);
    row[5] = mean_hd95(hr_nn, hr_labels);

    if (fs::exists(bundle_paths(cfg, c.id).image)) {
      const auto bundle = load_bundle(cfg, c.id, m.num_classes);
      const auto target = hr_reference(m, c);
      const auto bspline = resample_axis(data.lr, 0, data.lr.shape.d * cfg.r, 1.0 / cfg.r, Interp::BSpline3);
      row[6] = psnr(bundle.image, target);
      row[7] = psnr(bspline, target);
      row[8] = ssim(bundle.image, target);
      row[9] = ssim(bspline, target);
      row[10] = mean_dice(bundle.labels, hr_labels);
      row[11] = mean_dice(nearest_upsample_z(data.lr_labels, cfg.r), hr_labels);
      try {
        row[12] = uncertainty_error_correlation(bundle.uncertainty, bundle.image, target);
      } catch (const DomainError&) {
      }
    }
    ids.push_back(c.id);
    splits.push_back(c.split);
    rows.push_back(std::move(row));
  }

  const auto dir = fs::path(cfg.output_dir) / "eval" / run;
  fs::create_directories(dir);
  std::ofstream csv(dir / "metrics.csv");
  if (!csv) throw IoError("cannot write " + (dir / "metrics.csv").string());
  csv << "case,split";
  for (const auto& col : columns) csv << "," << col;
  csv << "\n";
  csv.precision(8);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    csv << ids[i] << "," << splits[i];
    for (double v : rows[i]) {
      csv << ",";
      if (std::isfinite(v)) csv << v;
    }
    csv << "\n";
  }

  ordered_json summary;
  summary["run"] = run;
  summary["split"] = cfg.eval.split;
  summary["n_cases"] = rows.size();
  if (model) summary["lambda"] = model->config.lambda;
  ordered_json metrics;
  for (std::size_t k = 0; k < columns.size(); ++k) {
    std::vector<double> values;
    std::size_t missing = 0;
    for (const auto& row : rows) {
      if (std::isfinite(row[k])) {
        values.push_back(row[k]);
      } else {
        ++missing;
      }
    }
    if (values.empty()) continue;
    const auto ms = mean_std(values);
    metrics[columns[k]] = {{"mean", ms.mean}, {"std", ms.std}, {"n", values.size()}, {"failures", missing}};
  }
  summary["metrics"] = metrics;
  write_json(summary, dir / "summary.json");
  std::cout << "eval: " << rows.size() << " cases scored; report in " << dir.string() << std::endl;
  return summary;
}

}  // namespace rehrseg
