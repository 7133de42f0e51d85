#include "rehrseg/phantom.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"
#include "rehrseg/degrade.hpp"
#include "rehrseg/volume_io.hpp"

namespace rehrseg {

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

// Sum of a few low-frequency plane waves, scaled to [-1, 1].
struct SmoothField {
  struct Wave {
    std::array<double, 3> k;
    double phase;
  };
  std::vector<Wave> waves;

  SmoothField(std::mt19937_64& rng, std::int64_t size, int count = 6) {
    std::uniform_int_distribution<int> freq(-3, 3);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    for (int i = 0; i < count; ++i) {
      Wave w{};
      do {
        for (auto& c : w.k) c = 2.0 * std::numbers::pi * freq(rng) / static_cast<double>(size);
      } while (w.k[0] == 0.0 && w.k[1] == 0.0 && w.k[2] == 0.0);
      w.phase = phase(rng);
      waves.push_back(w);
    }
  }

  double operator()(double z, double y, double x) const {
    double acc = 0.0;
    for (const auto& w : waves) acc += std::cos(w.k[0] * z + w.k[1] * y + w.k[2] * x + w.phase);
    return acc / static_cast<double>(waves.size());
  }
};

Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  double q[4];
  double norm = 0.0;
  for (auto& v : q) {
    v = n(rng);
    norm += v * v;
  }
  norm = std::sqrt(norm);
  for (auto& v : q) v /= norm;
  const double a = q[0], b = q[1], c = q[2], d = q[3];
  return {{{a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)},
           {2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)},
           {2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d}}};
}

struct Ellipsoid {
  std::array<double, 3> center;
  std::array<double, 3> radii;
  Mat3 rot;
  double intensity;

  // Approximate signed distance (voxels) to the surface; negative inside.
  double signed_distance(double z, double y, double x) const {
    const double p[3] = {z - center[0], y - center[1], x - center[2]};
    double q[3];
    for (int i = 0; i < 3; ++i) q[i] = rot[0][i] * p[0] + rot[1][i] * p[1] + rot[2][i] * p[2];
    double rho2 = 0.0, g2 = 0.0;
    for (int i = 0; i < 3; ++i) {
      rho2 += (q[i] / radii[i]) * (q[i] / radii[i]);
      g2 += (q[i] / (radii[i] * radii[i])) * (q[i] / (radii[i] * radii[i]));
    }
    const double rho = std::sqrt(rho2);
    if (rho < 1e-9) return -*std::min_element(radii.begin(), radii.end());
    const double grad = std::sqrt(g2) / rho;
    return (rho - 1.0) / grad;
  }
};

void check_spec(const PhantomSpec& s) {
  if (s.size < 16) throw DomainError("phantom size must be >= 16");
  if (s.n_blobs < 1) throw DomainError("phantom needs at least one blob");
  if (!(s.min_radius >= 1.0) || s.max_radius < s.min_radius) throw DomainError("invalid phantom radius range");
  if (2.0 * s.max_radius + 6.0 > static_cast<double>(s.size)) throw DomainError("phantom blobs cannot fit inside the grid");
  if (s.texture_amplitude < 0.0 || s.texture_amplitude > 0.3) throw DomainError("texture amplitude must lie in [0, 0.3]");
  if (!(s.min_foreground_fraction < s.max_foreground_fraction)) throw DomainError("invalid foreground fraction bounds");
}

}  // namespace

std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec) {
  check_spec(spec);
  const std::int64_t n = spec.size;
  const Shape3 shape{n, n, n};
  const Spacing iso{1.0, 1.0, 1.0};
  std::mt19937_64 rng(spec.seed);

  for (int attempt = 0; attempt < 200; ++attempt) {
    const SmoothField background(rng, n);
    const SmoothField foreground(rng, n);
    std::vector<Ellipsoid> blobs;
    std::uniform_real_distribution<double> radius(spec.min_radius, spec.max_radius);
    std::uniform_real_distribution<double> level(0.7, 0.9);
    for (int b = 0; b < spec.n_blobs; ++b) {
      Ellipsoid e{};
      for (auto& r : e.radii) r = radius(rng);
      const double margin = *std::max_element(e.radii.begin(), e.radii.end()) + 3.0;
      std::uniform_real_distribution<double> pos(margin, static_cast<double>(n - 1) - margin);
      for (auto& c : e.center) c = pos(rng);
      e.rot = random_rotation(rng);
      e.intensity = level(rng);
      blobs.push_back(e);
    }

    Volume img(shape, iso);
    LabelVolume lab(shape, iso, 2);
    std::int64_t fg = 0;
    for (std::int64_t z = 0; z < n; ++z)
      for (std::int64_t y = 0; y < n; ++y)
        for (std::int64_t x = 0; x < n; ++x) {
          const double zd = static_cast<double>(z), yd = static_cast<double>(y), xd = static_cast<double>(x);
          double v = 0.3 + spec.texture_amplitude * background(zd, yd, xd);
          bool inside = false;
          for (const auto& e : blobs) {
            const double sd = e.signed_distance(zd, yd, xd);
            // 1-voxel Gaussian feather: Phi(-sd / 1).
            const double m = 0.5 * std::erfc(sd / std::numbers::sqrt2);
            const double fv = e.intensity + 0.5 * spec.texture_amplitude * foreground(zd, yd, xd);
            v = v * (1.0 - m) + fv * m;
            inside = inside || sd <= 0.0;
          }
          img.at(z, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
          lab.at(z, y, x) = inside ? 1 : 0;
          fg += inside;
        }
    const double fraction = static_cast<double>(fg) / static_cast<double>(shape.voxels());
    if (fraction >= spec.min_foreground_fraction && fraction <= spec.max_foreground_fraction) return {std::move(img), std::move(lab)};
  }
  throw DomainError("could not place blobs within the foreground fraction bounds");
}

const BenchmarkCase& BenchmarkManifest::find(const std::string& id) const {
  for (const auto& c : cases) {
    if (c.id == id) return c;
  }
  throw DomainError("unknown case id: " + id);
}

std::vector<BenchmarkCase> BenchmarkManifest::split(const std::string& name) const {
  std::vector<BenchmarkCase> out;
  std::copy_if(cases.begin(), cases.end(), std::back_inserter(out), [&](const BenchmarkCase& c) { return c.split == name; });
  return out;
}

BenchmarkManifest make_benchmark(const BenchmarkOptions& opts, const std::filesystem::path& out_dir) {
  if (opts.n_cases < 2) throw DomainError("benchmark needs at least 2 cases");
  if (opts.n_val < 1 || opts.n_val >= opts.n_cases) throw DomainError("n_val must lie in [1, n_cases)");
  if (opts.r < 2) throw DomainError("benchmark scale factor must be >= 2");

  namespace fs = std::filesystem;
  fs::create_directories(out_dir / kTrainDir);
  fs::create_directories(out_dir / kGroundTruthDir);

  BenchmarkManifest m;
  m.r = opts.r;
  m.seed = opts.seed;
  m.hr_size = opts.phantom.size;
  m.num_classes = 2;
  m.root = out_dir;

  for (int i = 0; i < opts.n_cases; ++i) {
    char id[32];
    std::snprintf(id, sizeof(id), "case_%03d", i);
    PhantomSpec spec = opts.phantom;
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32), static_cast<std::uint32_t>(i)};
    std::array<std::uint32_t, 2> derived{};
    seq.generate(derived.begin(), derived.end());
    spec.seed = (static_cast<std::uint64_t>(derived[0]) << 32) | derived[1];

    auto [hr, hr_labels] = generate_phantom(spec);
    const DegradedPair lr = degrade_pair(hr, hr_labels, opts.r, Axis::Z, 0);

    BenchmarkCase c;
    c.id = id;
    c.split = i >= opts.n_cases - opts.n_val ? "val" : "train";
    c.lr_image = std::string(kTrainDir) + "/" + c.id + "_image.nii.gz";
    c.lr_labels = std::string(kTrainDir) + "/" + c.id + "_labels.nii.gz";
    c.hr_image = std::string(kGroundTruthDir) + "/" + c.id + "_image.nii.gz";
    c.hr_labels = std::string(kGroundTruthDir) + "/" + c.id + "_labels.nii.gz";
    save_volume(hr, out_dir / c.hr_image);
    save_labels(hr_labels, out_dir / c.hr_labels);
    save_volume(lr.image, out_dir / c.lr_image);
    save_labels(lr.labels, out_dir / c.lr_labels);
    m.cases.push_back(c);
  }
  save_manifest(m, out_dir / "manifest.json");
  return m;
}

void save_manifest(const BenchmarkManifest& m, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["r"] = m.r;
  j["seed"] = m.seed;
  j["hr_size"] = m.hr_size;
  j["num_classes"] = m.num_classes;
  j["cases"] = nlohmann::ordered_json::array();
  for (const auto& c : m.cases) {
    j["cases"].push_back({{"id", c.id},
                          {"split", c.split},
                          {"lr_image", c.lr_image},
                          {"lr_labels", c.lr_labels},
                          {"hr_image", c.hr_image},
                          {"hr_labels", c.hr_labels}});
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << j.dump(2) << "\n";
}

BenchmarkManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read manifest " + path.string());
  nlohmann::json j;
  try {
    in >> j;
    BenchmarkManifest m;
    m.r = j.at("r").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.hr_size = j.at("hr_size").get<std::int64_t>();
    m.num_classes = j.at("num_classes").get<int>();
    for (const auto& c : j.at("cases")) {
      m.cases.push_back({c.at("id").get<std::string>(), c.at("split").get<std::string>(), c.at("lr_image").get<std::string>(),
                         c.at("lr_labels").get<std::string>(), c.at("hr_image").get<std::string>(),
                         c.at("hr_labels").get<std::string>()});
    }
    m.root = path.parent_path();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed manifest " + path.string() + ": " + e.what());
  }
}

}  // namespace rehrseg
