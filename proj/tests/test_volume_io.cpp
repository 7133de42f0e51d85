#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest_torch.hpp"
#include "oracles.hpp"
#include "rehrseg/volume_io.hpp"

using namespace rehrseg;
namespace fs = std::filesystem;

namespace {

fs::path tmp_dir() {
  auto d = fs::temp_directory_path() / "rehrseg_test_volume_io";
  fs::create_directories(d);
  return d;
}

// Minimal uncompressed NIfTI-1 writer, independent of the library.
void write_raw_nifti(const fs::path& p, std::vector<std::int16_t> dims, const std::vector<float>& data, float sx = 1, float sy = 1,
                     float sz = 1) {
  char hdr[348] = {};
  std::int32_t sizeof_hdr = 348;
  std::memcpy(hdr, &sizeof_hdr, 4);
  std::int16_t dim[8] = {};
  dim[0] = static_cast<std::int16_t>(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) dim[i + 1] = dims[i];
  std::memcpy(hdr + 40, dim, sizeof dim);
  std::int16_t datatype = 16, bitpix = 32;
  std::memcpy(hdr + 70, &datatype, 2);
  std::memcpy(hdr + 72, &bitpix, 2);
  float pixdim[8] = {1, sx, sy, sz, 1, 1, 1, 1};
  std::memcpy(hdr + 76, pixdim, sizeof pixdim);
  float vox_offset = 352;
  std::memcpy(hdr + 108, &vox_offset, 4);
  std::memcpy(hdr + 344, "n+1\0", 4);
  std::ofstream f(p, std::ios::binary);
  f.write(hdr, 348);
  const char ext[4] = {0, 0, 0, 0};
  f.write(ext, 4);
  f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
}

}  // namespace

TEST_CASE("load_volume min-max normalises and keeps spacing") {
  const auto p = tmp_dir() / "ramp.nii";
  write_raw_nifti(p, {3, 1, 1}, {0.0f, 250.0f, 500.0f}, 0.75f, 0.75f, 3.0f);
  const auto v = load_volume(p);
  CHECK(v.shape == Shape3{1, 1, 3});
  CHECK(v.data == std::vector<float>{0.0f, 0.5f, 1.0f});
  CHECK(v.spacing.z == doctest::Approx(3.0));
  CHECK(v.spacing.y == doctest::Approx(0.75));
  CHECK(v.spacing.x == doctest::Approx(0.75));
}

TEST_CASE("constant volume normalises to zeros") {
  const auto p = tmp_dir() / "const.nii";
  write_raw_nifti(p, {2, 2, 2}, std::vector<float>(8, 500.0f), 1.0f, 2.0f, 4.0f);
  const auto v = load_volume(p);
  for (float x : v.data) CHECK(x == 0.0f);
  CHECK(v.spacing == Spacing{4.0, 2.0, 1.0});
}

TEST_CASE("non-finite voxel is reported with its index") {
  const auto p = tmp_dir() / "nan.nii";
  std::vector<float> data(24, 1.0f);
  // i=1, j=2, k=1 on a 4x3x2 (i,j,k) grid -> z=1, y=2, x=1.
  data[1 + 4 * (2 + 3 * 1)] = std::nanf("");
  write_raw_nifti(p, {4, 3, 2}, data);
  try {
    load_volume(p);
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(std::string(e.what()).find("(1,2,1)") != std::string::npos);
  }
}

TEST_CASE("4D and 2D payloads are rejected") {
  const auto p4 = tmp_dir() / "four.nii";
  write_raw_nifti(p4, {2, 2, 2, 2}, std::vector<float>(16, 1.0f));
  CHECK_THROWS_AS(load_volume(p4), IoError);
  const auto p2 = tmp_dir() / "two.nii";
  write_raw_nifti(p2, {2, 2}, std::vector<float>(4, 1.0f));
  CHECK_THROWS_AS(load_volume(p2), IoError);
  // A trailing singleton dimension is still 3D.
  const auto p31 = tmp_dir() / "three_one.nii";
  write_raw_nifti(p31, {2, 2, 2, 1}, std::vector<float>(8, 1.0f));
  CHECK_NOTHROW(load_volume(p31));
}

TEST_CASE("missing file raises IoError") { CHECK_THROWS_AS(load_volume(tmp_dir() / "absent.nii.gz"), IoError); }

TEST_CASE("save/load round trip is exact for volumes and labels") {
  std::mt19937_64 rng(1);
  for (const char* ext : {".nii", ".nii.gz"}) {
    auto v = oracle::random_volume(rng, {8, 8, 8}, {3.0, 0.75, 0.75});
    const auto p = tmp_dir() / (std::string("rt") + ext);
    save_volume(v, p);
    const auto back = load_volume_raw(p);
    CHECK(back.shape == v.shape);
    CHECK(back.data == v.data);
    CHECK(std::abs(back.spacing.z - 3.0) < 1e-6);
    CHECK(std::abs(back.spacing.y - 0.75) < 1e-6);

    const auto l = oracle::random_labels(rng, {8, 8, 8}, 2);
    const auto lp = tmp_dir() / (std::string("rt_labels") + ext);
    save_labels(l, lp);
    const auto lb = load_labels(lp, 2);
    CHECK(lb.data == l.data);
    CHECK(lb.num_classes == 2);
  }
}

TEST_CASE("unwritable path raises IoError") {
  Volume v(Shape3{2, 2, 2}, {});
  CHECK_THROWS_AS(save_volume(v, "/nonexistent_dir_for_rehrseg/x.nii.gz"), IoError);
}

TEST_CASE("load_labels infers the class count") {
  LabelVolume l(Shape3{2, 2, 2}, {}, 4);
  l.data[3] = 3;
  const auto p = tmp_dir() / "labels4.nii.gz";
  save_labels(l, p);
  CHECK(load_labels(p).num_classes == 4);
  CHECK_THROWS(load_labels(p, 3));
}

TEST_CASE("B-spline resampling reproduces constants and linear ramps") {
  Volume c(Shape3{6, 5, 4}, {4.0, 1.0, 1.0}, 0.37f);
  const auto rc = resample_isotropic(c);
  CHECK(rc.shape == Shape3{24, 5, 4});
  for (float x : rc.data) CHECK(std::abs(x - 0.37f) < 1e-6);

  Volume ramp(Shape3{8, 2, 2}, {4.0, 1.0, 1.0});
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t i = 0; i < 4; ++i) ramp.data[static_cast<std::size_t>(z * 4 + i)] = 0.1f * static_cast<float>(z);
  const auto rr = resample_isotropic(ramp);
  CHECK(rr.shape.d == 32);
  CHECK(rr.spacing == Spacing{1.0, 1.0, 1.0});
  double max_err = 0.0;
  for (std::int64_t i = 0; i < 32; ++i) max_err = std::max(max_err, std::abs(rr.at(i, 1, 1) - 0.1 * i / 4.0));
  CHECK(max_err < 1e-3);
}

TEST_CASE("nearest label resampling follows the nearest-index map") {
  LabelVolume l(Shape3{6, 3, 3}, {4.0, 1.0, 1.0}, 3);
  for (std::int64_t z = 0; z < 6; ++z)
    for (std::int64_t y = 0; y < 3; ++y)
      for (std::int64_t x = 0; x < 3; ++x) l.at(z, y, x) = z >= 3 ? 2 : 0;
  const auto r = resample_isotropic(l);
  CHECK(r.shape.d == 24);
  std::set<int> values;
  for (std::int64_t i = 0; i < 24; ++i) {
    // Source coordinate i/4, rounded half up, clamped to the last slice.
    const std::int64_t src = std::min<std::int64_t>((2 * i + 4) / 8, 5);
    CHECK(r.at(i, 1, 2) == l.at(src, 1, 2));
    values.insert(r.at(i, 0, 0));
  }
  CHECK(values == std::set<int>{0, 2});
  CHECK_THROWS_AS(resample_isotropic(l, Interp::BSpline3), DomainError);
}

TEST_CASE("isotropic input resamples to itself") {
  std::mt19937_64 rng(3);
  const auto v = oracle::random_volume(rng, {5, 6, 7});
  CHECK(resample_isotropic(v).data == v.data);
  const auto l = oracle::random_labels(rng, {5, 6, 7}, 3);
  CHECK(resample_isotropic(l).data == l.data);
}
