// Acceptance criteria 1-10. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "rehrseg/config.hpp"
#include "rehrseg/degrade.hpp"
#include "rehrseg/distill.hpp"
#include "rehrseg/losses.hpp"
#include "rehrseg/metrics.hpp"
#include "rehrseg/pipeline.hpp"
#include "rehrseg/selfsr.hpp"

using namespace rehrseg;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Tolerances and scale.
constexpr double kInterleaveTol = 1e-6;
constexpr double kInterleaveSeconds = 10.0;
constexpr double kPartitionTol = 1e-5;
constexpr double kStationarityTol = 2e-3;
constexpr double kGradTol = 1e-3;
constexpr int kGradInstances = 20;
constexpr double kAffinityTol = 1e-6;
constexpr double kOracleTol = 1e-9;
constexpr double kSelfSRSeconds = 3.0 * 3600.0;  // all three seeds together, CPU
constexpr double kMinUncertaintyCorr = 0.1;
constexpr int kSeeds = 3;
const std::vector<double> kLambdaSweep{0.01, 0.1, 1.0, 10.0};

const auto kF64 = torch::TensorOptions().dtype(torch::kFloat64);

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void log(const std::string& s) { std::cerr << "[acceptance] " << s << std::endl; }

// ---------------------------------------------------------------- 1

Outcome interleave_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0;
  for (int t = 0; t < 20; ++t) {
    const auto v = oracle::random_volume(rng, {33 + t % 4, 24, 20});
    for (int r : {2, 4}) {
      const auto blurred = blur_axis(v, make_slice_profile(r), Axis::Z);
      std::vector<Volume> parts;
      for (int o = 0; o < r; ++o) parts.push_back(downsample_axis(blurred, r, Axis::Z, o));
      const auto back = oracle::interleave(parts, v.shape.d);
      for (std::size_t i = 0; i < back.data.size(); ++i) worst = std::max(worst, static_cast<double>(std::abs(back.data[i] - blurred.data[i])));
    }
  }
  const double s = seconds_since(t0);
  return {worst < kInterleaveTol && s < kInterleaveSeconds, fmt("max abs error %.3g (tol %g), %.2f s (limit %g s)", worst, kInterleaveTol, s, kInterleaveSeconds)};
}

// ---------------------------------------------------------------- 2

Outcome partition_of_unity() {
  double worst = 0, u_min = 1, u_max = 0;
  for (int t = 0; t < 50; ++t) {
    SelfSRConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(t);
    auto m = make_selfsr_model(cfg);
    auto net = m.net;
    {
      torch::NoGradGuard g;
      net->head->image_filters->weight.normal_(0.0, 0.1);
    }
    net->eval();
    torch::NoGradGuard g;
    const auto img = torch::rand({1, 1, 8, 16, 16}) * (1.0 + t % 5);
    const auto lab = torch::randint(0, 2, {1, 8, 16, 16}, torch::kInt64);
    const auto out = net->forward(img, lab);
    worst = std::max(worst, (out.head.attention.sum(1) - 1.0).abs().max().item<double>());
    u_min = std::min(u_min, out.head.uncertainty.min().item<double>());
    u_max = std::max(u_max, out.head.uncertainty.max().item<double>());
  }
  const bool ok = worst < kPartitionTol && u_min > 0.0 && u_max < 1.0;
  return {ok, fmt("max |sum A - 1| %.3g (tol %g), U in [%.4g, %.4g]", worst, kPartitionTol, u_min, u_max)};
}

// ---------------------------------------------------------------- 3

Outcome stationarity() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> dist(0.05, 0.95);
  const auto target = torch::zeros({1}, kF64);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const double l = dist(rng);
    const auto pred = torch::full({1}, l, kF64);
    double best_u = 0, best = 1e300;
    for (int i = 1; i < 980; ++i) {
      const double u = 0.01 + i * 1e-3;
      const double v = sr_uncertainty_loss(pred, target, torch::full({1}, u, kF64)).item<double>();
      if (v < best) best = v, best_u = u;
    }
    worst = std::max(worst, std::abs(best_u - l));
  }
  return {worst <= kStationarityTol, fmt("max |argmin U - L| %.3g over 100 draws (tol %g)", worst, kStationarityTol)};
}

// ---------------------------------------------------------------- 4

Outcome gradient_suite() {
  torch::manual_seed(404);
  const Granularity beta{1, 2, 2};
  Adaptor adaptor(3, 5);
  adaptor->to(torch::kFloat64);
  std::map<std::string, double> worst;
  auto record = [&](const std::string& name, double e) { worst[name] = std::max(worst[name], e); };
  for (int t = 0; t < kGradInstances; ++t) {
    const auto pred = torch::rand({1, 1, 4, 4, 4}, kF64);
    const auto tgt = torch::rand({1, 1, 4, 4, 4}, kF64);
    const auto u = torch::rand({1, 1, 4, 4, 4}, kF64) * 0.9 + 0.05;
    record("sr_uncertainty_loss", oracle::grad_rel_error([&](const torch::Tensor& x) { return sr_uncertainty_loss(x, tgt, u); }, pred));
    record("sr_uncertainty_loss(U)", oracle::grad_rel_error([&](const torch::Tensor& x) { return sr_uncertainty_loss(pred, tgt, x); }, u));

    const auto logits = torch::randn({1, 2, 4, 4, 4}, kF64);
    const auto labels = torch::randint(0, 2, {1, 4, 4, 4}, torch::kInt64);
    record("sr_label_loss", oracle::grad_rel_error([&](const torch::Tensor& x) { return sr_label_loss(x, labels); }, logits));
    record("hr_seg_loss", oracle::grad_rel_error([&](const torch::Tensor& x) { return hr_seg_loss(x, labels); }, logits));
    const auto u_hr = torch::rand({1, 1, 16, 4, 4}, kF64);
    const std::vector<int> offsets{t % 4};
    record("uncertainty_weighted_seg_loss",
           oracle::grad_rel_error([&](const torch::Tensor& x) { return uncertainty_weighted_seg_loss(x, labels, u_hr, 4, offsets); }, logits));

    const auto f = torch::randn({1, 3, 4, 4, 4}, kF64);
    const auto a_sr = build_affinity(torch::randn({1, 5, 4, 4, 4}, kF64), beta);
    record("correlation_loss", oracle::grad_rel_error([&](const torch::Tensor& x) { return correlation_loss(a_sr, build_affinity(x, beta)); }, f));
    const auto teacher = torch::randn({1, 5, 4, 4, 4}, kF64);
    record("spatial_loss", oracle::grad_rel_error([&](const torch::Tensor& x) { return spatial_loss(x, teacher, adaptor); }, f));
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, e] : worst) {
    ok = ok && e <= kGradTol;
    detail += fmt("%s %.2g; ", name.c_str(), e);
  }
  return {ok, detail + fmt("%d instances each (tol %g)", kGradInstances, kGradTol)};
}

// ---------------------------------------------------------------- 5

Outcome affinity_properties() {
  torch::manual_seed(505);
  const Granularity beta{1, 2, 2};
  double sym = 0, diag = 0, bound = 0, rescale = 0, loss_rescale = 0;
  for (int t = 0; t < 20; ++t) {
    const auto f = torch::randn({1, 8, 4, 8, 8}, kF64);
    const auto g = torch::randn({1, 6, 4, 8, 8}, kF64);
    const auto a = build_affinity(f, beta);
    sym = std::max(sym, (a - a.transpose(1, 2)).abs().max().item<double>());
    diag = std::max(diag, (a.diagonal(0, 1, 2) - 1.0).abs().max().item<double>());
    bound = std::max(bound, a.abs().max().item<double>());
    const double s = 0.05 + 20.0 * (t + 1) / 20.0;
    rescale = std::max(rescale, (build_affinity(f * s, beta) - a).abs().max().item<double>());
    const auto ag = build_affinity(g, beta);
    loss_rescale = std::max(loss_rescale, std::abs(correlation_loss(build_affinity(f * s, beta), build_affinity(g / s, beta)).item<double>() -
                                                   correlation_loss(a, ag).item<double>()));
  }
  const bool ok = sym < kAffinityTol && diag < kAffinityTol && bound <= 1.0 + 1e-12 && rescale < kAffinityTol && loss_rescale < kAffinityTol;
  return {ok, fmt("symmetry %.2g, diagonal %.2g, max |a| %.17g, rescale %.2g, loss rescale %.2g (tol %g)", sym, diag, bound, rescale,
                  loss_rescale, kAffinityTol)};
}

// ---------------------------------------------------------------- 6

Outcome metric_oracles() {
  std::mt19937_64 rng(606);
  std::uniform_real_distribution<double> frac(0.05, 0.7);
  const Shape3 s{8, 8, 8};
  int hd_mismatch = 0;
  double dice_err = 0, loss_err = 0;
  for (int t = 0; t < 50; ++t) {
    const auto a = oracle::random_labels(rng, s, 2, frac(rng));
    const auto b = oracle::random_labels(rng, s, 2, frac(rng));
    std::vector<std::uint8_t> ma(a.data.size()), mb(b.data.size());
    for (std::size_t i = 0; i < ma.size(); ++i) ma[i] = a.data[i] == 1, mb[i] = b.data[i] == 1;
    const Spacing sp = t % 2 ? Spacing{1, 1, 1} : Spacing{2.5, 1.0, 0.75};
    if (hd95(ma, mb, s, sp) != oracle::hd95_brute(ma, mb, s, sp)) ++hd_mismatch;
    dice_err = std::max(dice_err, std::abs(dice(a, b, 1) - oracle::dice_brute(a, b, 1)));
  }
  torch::manual_seed(606);
  for (int t = 0; t < 50; ++t) {
    const int k = 2 + t % 3;
    const auto logits = torch::randn({2, k, 4, 4, 4}, kF64) * 2.0;
    const auto target = torch::randint(0, k, {2, 4, 4, 4}, torch::kInt64);
    const auto o = oracle::ce_dice_brute(logits, target);
    loss_err = std::max(loss_err, std::abs(ce_dice_loss(logits, target).item<double>() - (o.ce + o.dice)));
  }
  const bool ok = hd_mismatch == 0 && dice_err < kOracleTol && loss_err < kOracleTol;
  return {ok, fmt("hd95 mismatches %d/50, dice error %.2g, CE+Dice error %.2g (tol %g)", hd_mismatch, dice_err, loss_err, kOracleTol)};
}

// ---------------------------------------------------------------- 7-10

struct Stage {
  fs::path marker;
  bool reuse;
  // Runs `fn` unless a completed marker exists; returns elapsed seconds
  // (recorded ones when reused).
  double operator()(const std::string& name, const std::function<void()>& fn) const {
    const auto file = marker / (name + ".done");
    if (reuse && fs::exists(file)) {
      double s = 0;
      std::ifstream(file) >> s;
      log("reusing " + name);
      return s;
    }
    log("running " + name);
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double s = seconds_since(t0);
    fs::create_directories(marker);
    std::ofstream(file) << s;
    log(fmt("%s took %.0f s", name.c_str(), s));
    return s;
  }
};

Config seed_config(const fs::path& root, int seed, const json& extra = json::object()) {
  json doc = {{"output_dir", (root / ("seed" + std::to_string(seed))).string()}, {"seed", seed}};
  doc.merge_patch(extra);
  return config_from_json(doc);
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

double metric(const json& summary, const std::string& key) {
  if (!summary["metrics"].contains(key)) return std::nan("");
  return summary["metrics"][key]["mean"].get<double>();
}

json flags(bool pseudo, bool unc, bool distill, bool hr) {
  return {{"seg", {{"pseudo_data", pseudo}, {"uncertainty", unc}, {"distill", distill}, {"hr_head", hr}}}};
}

json eval_run(const Config& base, const std::string& run, const std::string& split) {
  json doc = to_json(base);
  doc["eval"]["run"] = run;
  doc["eval"]["split"] = split;
  return cmd_eval(config_from_json(doc));
}

json with_seg(const Config& base, const json& patch) {
  json doc = to_json(base);
  doc.merge_patch(patch);
  return doc;
}

struct SeedResults {
  double sr_seconds = 0, seg_seconds = 0;
  json sr_all, baseline_val, full_val;
};

SeedResults run_seed(const fs::path& root, int seed, bool reuse, bool need_seg) {
  const Config cfg = seed_config(root, seed);
  const Stage stage{cfg.output_dir + std::string("/.stages"), reuse};
  SeedResults r;
  r.sr_seconds += stage("phantom", [&] { cmd_phantom(cfg); });
  r.sr_seconds += stage("train_sr", [&] { cmd_train_sr(cfg); });
  r.sr_seconds += stage("superres", [&] { cmd_superres(cfg); });
  stage("eval_sr", [&] { eval_run(cfg, "ground_truth", "all"); });
  r.sr_all = read_json(fs::path(cfg.output_dir) / "eval" / "ground_truth" / "summary.json");
  if (need_seg) {
    r.seg_seconds += stage("seg_baseline", [&] {
      json patch = flags(false, false, false, false);
      patch["seg"]["run_name"] = "baseline";
      cmd_train_seg(config_from_json(with_seg(cfg, patch)));
    });
    r.seg_seconds += stage("seg_full", [&] { cmd_train_seg(config_from_json(with_seg(cfg, flags(true, true, true, true)))); });
    stage("eval_seg", [&] {
      eval_run(cfg, "baseline", "val");
      eval_run(cfg, "full", "val");
    });
    r.baseline_val = read_json(fs::path(cfg.output_dir) / "eval" / "baseline" / "summary.json");
    r.full_val = read_json(fs::path(cfg.output_dir) / "eval" / "full" / "summary.json");
  }
  return r;
}

// Per-case column from metrics.csv.
std::vector<double> csv_column(const fs::path& p, const std::string& col) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string h;
    while (std::getline(ss, h, ',')) header.push_back(h);
  }
  const auto idx = static_cast<std::size_t>(std::find(header.begin(), header.end(), col) - header.begin());
  std::vector<double> out;
  while (std::getline(f, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) cells.push_back(c);
    if (idx < cells.size() && !cells[idx].empty()) out.push_back(std::stod(cells[idx]));
  }
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome ablation_plumbing(const fs::path& root, bool reuse) {
  const Config cfg = seed_config(root, 0);
  const Stage stage{cfg.output_dir + std::string("/.stages"), reuse};
  // The self-SR stages are shared with criteria 7-9 for seed 0.
  stage("phantom", [&] { cmd_phantom(cfg); });
  stage("train_sr", [&] { cmd_train_sr(cfg); });
  stage("superres", [&] { cmd_superres(cfg); });

  std::vector<std::string> runs;
  double seconds = 0;
  seconds += stage("seg_sweep", [&] {
    json patch = flags(true, true, true, true);
    patch["seg"]["run_name"] = "sweep";
    patch["seg"]["lambda_sweep"] = kLambdaSweep;
    cmd_train_seg(config_from_json(with_seg(cfg, patch)));
  });
  for (double l : kLambdaSweep) runs.push_back(fmt("sweep_lambda%g", l));
  const std::vector<std::pair<std::string, json>> incremental = {
      {"inc_pseudo", flags(true, false, false, true)},
      {"inc_uncertainty", flags(true, true, false, true)},
      {"inc_distill", flags(true, true, true, true)},
  };
  for (const auto& [name, f] : incremental) {
    seconds += stage("seg_" + name, [&] {
      json patch = f;
      patch["seg"]["run_name"] = name;
      cmd_train_seg(config_from_json(with_seg(cfg, patch)));
    });
    runs.push_back(name);
  }
  stage("eval_ablation", [&] {
    for (const auto& run : runs) eval_run(cfg, run, "val");
  });

  std::vector<std::string> problems;
  std::vector<std::pair<std::string, std::string>> reports;  // (training config, metrics.csv)
  for (const auto& run : runs) {
    const auto dir = fs::path(cfg.output_dir) / "eval" / run;
    if (!fs::exists(dir / "summary.json") || !fs::exists(dir / "metrics.csv")) {
      problems.push_back(run + " missing report");
      continue;
    }
    const auto s = read_json(dir / "summary.json");
    const double d = metric(s, "dsc_lr");
    if (s["run"] != run || s["n_cases"].get<int>() != cfg.phantom.n_val || !(d >= 0.0 && d <= 1.0)) problems.push_back(run + " malformed summary");
    if (csv_column(dir / "metrics.csv", "dsc_lr").size() != static_cast<std::size_t>(cfg.phantom.n_val)) problems.push_back(run + " malformed csv");
    reports.emplace_back(read_json(cfg.seg_dir(run) / "manifest.json")["config"].dump(), slurp(dir / "metrics.csv"));
  }
  // Runs trained with different settings must report different metrics.
  std::set<std::string> configs, contents;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    configs.insert(reports[i].first);
    contents.insert(reports[i].second);
    for (std::size_t j = i + 1; j < reports.size(); ++j) {
      if (reports[i].first != reports[j].first && reports[i].second == reports[j].second) {
        problems.push_back(runs[i] + " and " + runs[j] + " report identical metrics");
      }
    }
  }
  std::string detail = fmt("%zu runs, %zu distinct configurations, %zu distinct reports, %.0f s training", runs.size(), configs.size(),
                           contents.size(), seconds);
  for (const auto& p : problems) detail += "; " + p;
  return {problems.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  std::string workdir = "acceptance_runs";
  std::vector<int> only;
  bool reuse = false;
  app.add_option("--workdir", workdir, "directory for benchmark runs");
  app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 10));
  app.add_flag("--reuse", reuse, "reuse completed stages from an earlier run in --workdir");
  CLI11_PARSE(app, argc, argv);

  torch::set_num_threads(1);
  const fs::path root = fs::absolute(workdir);
  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  const bool need_pipeline = wanted(7) || wanted(8) || wanted(9) || wanted(10);
  if (need_pipeline && !reuse) fs::remove_all(root);

  std::map<int, Outcome> results;
  auto run = [&](int n, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    try {
      results[n] = fn();
    } catch (const std::exception& e) {
      results[n] = {false, std::string("exception: ") + e.what()};
    }
    std::cout << "criterion " << n << ": " << (results[n].pass ? "PASS" : "FAIL") << "  " << results[n].detail << std::endl;
  };

  run(1, interleave_exactness);
  run(2, partition_of_unity);
  run(3, stationarity);
  run(4, gradient_suite);
  run(5, affinity_properties);
  run(6, metric_oracles);

  if (wanted(7) || wanted(8) || wanted(9)) {
    std::vector<SeedResults> seeds;
    std::string error;
    try {
      for (int s = 0; s < kSeeds; ++s) seeds.push_back(run_seed(root, s, reuse, wanted(8) || wanted(9)));
    } catch (const std::exception& e) {
      error = std::string("exception: ") + e.what();
    }
    auto mean_over = [&](auto get) {
      double sum = 0;
      for (const auto& r : seeds) sum += get(r);
      return sum / static_cast<double>(seeds.size());
    };
    run(7, [&]() -> Outcome {
      if (!error.empty()) return {false, error};
      const double psnr_margin = mean_over([](const SeedResults& r) { return metric(r.sr_all, "psnr_sr") - metric(r.sr_all, "psnr_bspline"); });
      const double dsc_margin = mean_over([](const SeedResults& r) { return metric(r.sr_all, "label_dsc_sr") - metric(r.sr_all, "label_dsc_nn"); });
      const double seconds = mean_over([](const SeedResults& r) { return r.sr_seconds; }) * kSeeds;
      std::string per_seed;
      for (const auto& r : seeds) {
        per_seed += fmt(" [%.2f vs %.2f dB, DSC %.4f vs %.4f]", metric(r.sr_all, "psnr_sr"), metric(r.sr_all, "psnr_bspline"),
                        metric(r.sr_all, "label_dsc_sr"), metric(r.sr_all, "label_dsc_nn"));
      }
      const bool ok = psnr_margin > 0.0 && dsc_margin > 0.0 && seconds <= kSelfSRSeconds;
      return {ok, fmt("PSNR margin %+.3f dB, label DSC margin %+.4f, %.0f s for %d seeds (limit %g s);", psnr_margin, dsc_margin, seconds,
                      kSeeds, kSelfSRSeconds) +
                      per_seed};
    });
    run(8, [&]() -> Outcome {
      if (!error.empty()) return {false, error};
      const double full_lr = mean_over([](const SeedResults& r) { return metric(r.full_val, "dsc_lr"); });
      const double base_lr = mean_over([](const SeedResults& r) { return metric(r.baseline_val, "dsc_lr"); });
      const double full_hr = mean_over([](const SeedResults& r) { return metric(r.full_val, "dsc_hr"); });
      const double base_nn = mean_over([](const SeedResults& r) { return metric(r.baseline_val, "dsc_hr_nn"); });
      const double seconds = mean_over([](const SeedResults& r) { return r.seg_seconds; });
      const bool ok = full_lr >= base_lr && full_hr >= base_nn;
      return {ok, fmt("LR-val DSC full %.4f vs baseline %.4f; HR-val DSC full %.4f vs baseline NN %.4f; HD95 LR %.2f vs %.2f; %.0f s per seed", full_lr,
                      base_lr, full_hr, base_nn, mean_over([](const SeedResults& r) { return metric(r.full_val, "hd95_lr"); }),
                      mean_over([](const SeedResults& r) { return metric(r.baseline_val, "hd95_lr"); }), seconds)};
    });
    run(9, [&]() -> Outcome {
      if (!error.empty()) return {false, error};
      std::vector<double> corr;
      for (int s = 0; s < kSeeds; ++s) {
        const auto p = root / ("seed" + std::to_string(s)) / "eval" / "full" / "metrics.csv";
        for (double c : csv_column(p, "uncertainty_corr")) corr.push_back(c);
      }
      if (corr.empty()) return {false, "no correlation values"};
      const double m = mean_std(corr).mean;
      const double lo = *std::min_element(corr.begin(), corr.end());
      return {m > kMinUncertaintyCorr, fmt("mean Pearson r %.4f over %zu val cases (min %.4f, threshold %g)", m, corr.size(), lo, kMinUncertaintyCorr)};
    });
  }
  run(10, [&] { return ablation_plumbing(root, true); });

  bool all = true;
  for (const auto& [n, o] : results) all = all && o.pass;
  std::cout << (all ? "all criteria passed" : "some criteria failed") << std::endl;
  return all ? 0 : 1;
}
