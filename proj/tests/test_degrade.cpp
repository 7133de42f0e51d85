#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "doctest_torch.hpp"
#include "oracles.hpp"
#include "rehrseg/degrade.hpp"

using namespace rehrseg;

TEST_CASE("slice profile sigma follows the FWHM relation") {
  CHECK(make_slice_profile(4).sigma == doctest::Approx(1.69864).epsilon(1e-5));
  CHECK(make_slice_profile(1).sigma == doctest::Approx(0.42466).epsilon(1e-4));
  for (int r = 1; r <= 6; ++r) {
    const auto p = make_slice_profile(r);
    // Half maximum exactly at +-r/2.
    CHECK(std::exp(-std::pow(r / 2.0, 2) / (2 * p.sigma * p.sigma)) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(std::accumulate(p.kernel.begin(), p.kernel.end(), 0.0) - 1.0) < 1e-9);
    CHECK(p.kernel.size() % 2 == 1);
    CHECK(p.radius() == static_cast<int>(std::ceil(3 * p.sigma)));
    for (std::size_t i = 0; i < p.kernel.size(); ++i) CHECK(p.kernel[i] == p.kernel[p.kernel.size() - 1 - i]);
  }
  CHECK_THROWS_AS(make_slice_profile(0), DomainError);
}

TEST_CASE("blur matches the direct correlation oracle") {
  std::mt19937_64 rng(7);
  const auto p = make_slice_profile(4);
  for (int axis = 0; axis < 3; ++axis) {
    const auto v = oracle::random_volume(rng, {14, 13, 15});
    const auto got = blur_axis(v, p, static_cast<Axis>(axis));
    const auto want = oracle::blur_brute(v, p.kernel, axis);
    double err = 0;
    for (std::size_t i = 0; i < v.data.size(); ++i) err = std::max(err, static_cast<double>(std::abs(got.data[i] - want.data[i])));
    CHECK(err < 1e-6);
  }
}

TEST_CASE("blur of constants, impulses and ramps") {
  const auto p = make_slice_profile(4);
  Volume c(Shape3{16, 3, 3}, {}, 0.25f);
  for (float x : blur_axis(c, p, Axis::Z).data) CHECK(std::abs(x - 0.25f) < 1e-7);

  Volume imp(Shape3{21, 1, 1}, {});
  imp.data[10] = 1.0f;
  const auto bi = blur_axis(imp, p, Axis::Z);
  for (int t = -p.radius(); t <= p.radius(); ++t) {
    CHECK(bi.data[static_cast<std::size_t>(10 + t)] == doctest::Approx(p.kernel[static_cast<std::size_t>(t + p.radius())]).epsilon(1e-6));
  }

  Volume ramp(Shape3{1, 1, 30}, {});
  for (int i = 0; i < 30; ++i) ramp.data[static_cast<std::size_t>(i)] = 0.01f * static_cast<float>(i);
  const auto br = blur_axis(ramp, p, Axis::X);
  for (int i = p.radius(); i < 30 - p.radius(); ++i) CHECK(br.data[static_cast<std::size_t>(i)] == doctest::Approx(0.01 * i).epsilon(1e-5));

  Volume tiny(Shape3{4, 2, 2}, {});
  CHECK_THROWS_AS(blur_axis(tiny, p, Axis::Z), ShapeError);
}

TEST_CASE("blur preserves the mean") {
  std::mt19937_64 rng(11);
  for (int r : {2, 3, 4}) {
    const auto v = oracle::random_volume(rng, {20, 6, 5});
    const auto b = blur_axis(v, make_slice_profile(r), Axis::Z);
    const double m0 = std::accumulate(v.data.begin(), v.data.end(), 0.0) / v.data.size();
    const double m1 = std::accumulate(b.data.begin(), b.data.end(), 0.0) / b.data.size();
    CHECK(std::abs(m0 - m1) < 1e-6);
  }
}

TEST_CASE("downsample picks every r-th slice from the offset") {
  Volume v(Shape3{16, 2, 2}, {1.0, 0.5, 0.5});
  for (std::int64_t z = 0; z < 16; ++z)
    for (int i = 0; i < 4; ++i) v.data[static_cast<std::size_t>(z * 4 + i)] = static_cast<float>(z);
  const auto d0 = downsample_axis(v, 4, Axis::Z, 0);
  CHECK(d0.shape.d == 4);
  CHECK(d0.spacing.z == 4.0);
  for (int k = 0; k < 4; ++k) CHECK(d0.at(k, 0, 0) == 4.0f * k);

  LabelVolume l(Shape3{16, 1, 1}, {}, 3);
  for (int z = 0; z < 16; ++z) l.data[static_cast<std::size_t>(z)] = z % 3;
  const auto d3 = downsample_axis(l, 4, Axis::Z, 3);
  CHECK(d3.data == std::vector<std::int32_t>{3 % 3, 7 % 3, 11 % 3, 15 % 3});

  CHECK_THROWS_AS(downsample_axis(v, 4, Axis::Z, 4), DomainError);
  CHECK_THROWS_AS(downsample_axis(v, 4, Axis::Z, -1), DomainError);
}

TEST_CASE("offset interleave reconstructs the blurred volume") {
  std::mt19937_64 rng(5);
  for (int r : {2, 3, 4}) {
    const auto v = oracle::random_volume(rng, {17, 4, 5});
    const auto blurred = blur_axis(v, make_slice_profile(r), Axis::Z);
    std::vector<Volume> parts;
    for (int o = 0; o < r; ++o) {
      auto d = downsample_axis(blurred, r, Axis::Z, o);
      CHECK(d.shape.d == (17 - o + r - 1) / r);
      parts.push_back(std::move(d));
    }
    CHECK(oracle::interleave(parts, 17).data == blurred.data);
  }
}

TEST_CASE("degrade_pair is blur then decimate") {
  std::mt19937_64 rng(9);
  const auto v = oracle::random_volume(rng, {18, 5, 5});
  const auto l = oracle::random_labels(rng, {18, 5, 5}, 2);
  for (int o = 0; o < 4; ++o) {
    const auto p = degrade_pair(v, l, 4, Axis::Z, o);
    CHECK(p.image.data == downsample_axis(blur_axis(v, make_slice_profile(4), Axis::Z), 4, Axis::Z, o).data);
    CHECK(p.labels.data == downsample_axis(l, 4, Axis::Z, o).data);
    CHECK(p.image.shape.d == (18 - o + 3) / 4);
  }
  Volume c(Shape3{16, 4, 4}, {}, 0.6f);
  for (float x : degrade_pair(c, l.shape == c.shape ? l : LabelVolume(c.shape, {}, 2), 4, Axis::Z, 1).image.data) {
    CHECK(std::abs(x - 0.6f) < 1e-6);
  }
}

TEST_CASE("label downsampling draws values verbatim") {
  std::mt19937_64 rng(2);
  const auto l = oracle::random_labels(rng, {12, 6, 6}, 4);
  const auto d = downsample_axis(l, 3, Axis::Z, 2);
  for (std::int64_t k = 0; k < d.shape.d; ++k)
    for (std::int64_t y = 0; y < 6; ++y)
      for (std::int64_t x = 0; x < 6; ++x) CHECK(d.at(k, y, x) == l.at(3 * k + 2, y, x));
}

TEST_CASE("self-SR pairs: shapes, count and content") {
  std::mt19937_64 rng(4);
  const auto v = oracle::random_volume(rng, {64, 64, 64});
  const auto l = oracle::random_labels(rng, {64, 64, 64}, 2);
  PatchGeometry g;
  const auto set = make_selfsr_pairs(v, l, 4, g);
  CHECK(set.r == 4);
  CHECK(set.degradation_axis == Axis::X);
  // LR extent along x is 16; depth windows of 8 at stride 4 -> 3; in-plane 3 x 3.
  CHECK(grid_positions(16, 8, 4) == 3);
  CHECK(grid_positions(64, 32, 16) == 3);
  CHECK(set.pairs.size() == 27);
  for (const auto& p : set.pairs) {
    CHECK(p.lr_image.shape == Shape3{8, 32, 32});
    CHECK(p.hr_image.shape == Shape3{32, 32, 32});
    CHECK(p.lr_labels.shape == p.lr_image.shape);
    CHECK(p.hr_labels.shape == p.hr_image.shape);
  }

  // First pair: HR is the raw block with x moved to the front; LR is the
  // whole-volume x degradation cut at the same place.
  const auto& p0 = set.pairs.front();
  const auto lr_full = degrade_pair(v, l, 4, Axis::X, 0);
  for (std::int64_t d = 0; d < 8; ++d)
    for (std::int64_t a = 0; a < 32; a += 7)
      for (std::int64_t b = 0; b < 32; b += 5) {
        CHECK(p0.hr_image.at(4 * d, a, b) == v.at(a, b, 4 * d));
        CHECK(p0.lr_image.at(d, a, b) == lr_full.image.at(a, b, d));
        CHECK(p0.lr_labels.at(d, a, b) == l.at(a, b, 4 * d));
      }

  Volume c(Shape3{64, 64, 64}, {}, 0.4f);
  const auto cs = make_selfsr_pairs(c, LabelVolume(c.shape, {}, 2), 4, g);
  for (const auto& p : cs.pairs) {
    for (float x : p.lr_image.data) CHECK(std::abs(x - 0.4f) < 1e-6);
    for (float x : p.hr_image.data) CHECK(x == 0.4f);
  }

  PatchGeometry big = g;
  big.height = 80;
  CHECK_THROWS_AS(make_selfsr_pairs(v, l, 4, big), ShapeError);

  PatchGeometry both = g;
  both.include_y_axis = true;
  CHECK(make_selfsr_pairs(v, l, 4, both).pairs.size() == 54);
}

TEST_CASE("pseudo-LR set covers every residue") {
  std::mt19937_64 rng(6);
  const auto v = oracle::random_volume(rng, {32, 8, 8});
  const auto l = oracle::random_labels(rng, {32, 8, 8}, 2);
  const auto set = generate_pseudo_lr_set(v, l, 4);
  REQUIRE(set.size() == 4);
  std::set<int> offsets;
  for (const auto& p : set) {
    offsets.insert(p.offset);
    CHECK(p.image.data == degrade_pair(v, l, 4, Axis::Z, p.offset).image.data);
    CHECK(p.labels.data == degrade_pair(v, l, 4, Axis::Z, p.offset).labels.data);
  }
  CHECK(offsets == std::set<int>{0, 1, 2, 3});
}
