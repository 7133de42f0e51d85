#include "rehrseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace rehrseg {

namespace {

std::vector<std::uint8_t> class_mask(const LabelVolume& l, int class_id) {
  std::vector<std::uint8_t> m(l.data.size());
  std::transform(l.data.begin(), l.data.end(), m.begin(), [class_id](std::int32_t v) { return v == class_id ? 1 : 0; });
  return m;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas w^2 (p - q)^2 + f(q) (Felzenszwalb & Huttenlocher).
void distance_1d(const std::vector<double>& f, std::vector<double>& d, double w, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  const double w2 = w * w;
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (f[static_cast<std::size_t>(q)] == kInf) continue;
    const double fq = f[static_cast<std::size_t>(q)] + w2 * q * q;
    while (k >= 0) {
      const int p = v[static_cast<std::size_t>(k)];
      const double s = (fq - (f[static_cast<std::size_t>(p)] + w2 * p * p)) / (2.0 * w2 * (q - p));
      if (s <= z[static_cast<std::size_t>(k)]) {
        --k;
      } else {
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        break;
      }
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
    }
  }
  if (k < 0) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  int j = 0;
  for (int p = 0; p < n; ++p) {
    while (j < k && z[static_cast<std::size_t>(j + 1)] < p) ++j;
    const int q = v[static_cast<std::size_t>(j)];
    d[static_cast<std::size_t>(p)] = w2 * (p - q) * (p - q) + f[static_cast<std::size_t>(q)];
  }
}

double percentile_linear(std::vector<double> values, double pct) {
  std::sort(values.begin(), values.end());
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

}  // namespace

double dice(const LabelVolume& a, const LabelVolume& b, int class_id) {
  require_same_shape(a.shape, b.shape, "dice");
  std::int64_t inter = 0;
  std::int64_t na = 0;
  std::int64_t nb = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const bool in_a = a.data[i] == class_id;
    const bool in_b = b.data[i] == class_id;
    na += in_a;
    nb += in_b;
    inter += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

std::vector<std::int64_t> surface_voxels(std::span<const std::uint8_t> mask, const Shape3& s) {
  std::vector<std::int64_t> out;
  auto inside = [&](std::int64_t z, std::int64_t y, std::int64_t x) {
    return z >= 0 && y >= 0 && x >= 0 && z < s.d && y < s.h && x < s.w && mask[static_cast<std::size_t>((z * s.h + y) * s.w + x)];
  };
  for (std::int64_t z = 0; z < s.d; ++z)
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x) {
        if (!inside(z, y, x)) continue;
        if (!inside(z - 1, y, x) || !inside(z + 1, y, x) || !inside(z, y - 1, x) || !inside(z, y + 1, x) ||
            !inside(z, y, x - 1) || !inside(z, y, x + 1)) {
          out.push_back((z * s.h + y) * s.w + x);
        }
      }
  return out;
}

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> sites, const Shape3& s, const Spacing& sp) {
  std::vector<double> dt(sites.size());
  std::transform(sites.begin(), sites.end(), dt.begin(), [](std::uint8_t m) { return m ? 0.0 : kInf; });

  const std::int64_t nmax = std::max({s.d, s.h, s.w});
  std::vector<double> f(static_cast<std::size_t>(nmax)), d(static_cast<std::size_t>(nmax)), z(static_cast<std::size_t>(nmax + 1));
  std::vector<int> v(static_cast<std::size_t>(nmax));
  // Passes x, then y, then z.
  for (int axis : {2, 1, 0}) {
    const std::int64_t n = s[axis];
    const std::int64_t stride = axis == 0 ? s.h * s.w : axis == 1 ? s.w : 1;
    const int a1 = axis == 0 ? 1 : 0;
    const int a2 = axis == 2 ? 1 : 2;
    const std::int64_t st1 = a1 == 0 ? s.h * s.w : s.w;
    const std::int64_t st2 = a2 == 1 ? s.w : 1;
    f.resize(static_cast<std::size_t>(n));
    d.resize(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < s[a1]; ++i)
      for (std::int64_t j = 0; j < s[a2]; ++j) {
        const std::int64_t base = i * st1 + j * st2;
        for (std::int64_t k = 0; k < n; ++k) f[static_cast<std::size_t>(k)] = dt[static_cast<std::size_t>(base + k * stride)];
        distance_1d(f, d, sp[axis], v, z);
        for (std::int64_t k = 0; k < n; ++k) dt[static_cast<std::size_t>(base + k * stride)] = d[static_cast<std::size_t>(k)];
      }
  }
  return dt;
}

double hd95(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, const Shape3& shape, const Spacing& spacing) {
  if (a.size() != static_cast<std::size_t>(shape.voxels()) || b.size() != a.size()) throw ShapeError("hd95: mask size mismatch");
  const auto sa = surface_voxels(a, shape);
  const auto sb = surface_voxels(b, shape);
  if (sa.empty() || sb.empty()) throw DomainError("hd95 is undefined for an empty mask");

  auto surface_mask = [&](const std::vector<std::int64_t>& idx) {
    std::vector<std::uint8_t> m(a.size(), 0);
    for (auto i : idx) m[static_cast<std::size_t>(i)] = 1;
    return m;
  };
  const auto dt_a = squared_distance_transform(surface_mask(sa), shape, spacing);
  const auto dt_b = squared_distance_transform(surface_mask(sb), shape, spacing);

  std::vector<double> dist;
  dist.reserve(sa.size() + sb.size());
  for (auto i : sa) dist.push_back(std::sqrt(dt_b[static_cast<std::size_t>(i)]));
  for (auto i : sb) dist.push_back(std::sqrt(dt_a[static_cast<std::size_t>(i)]));
  return percentile_linear(std::move(dist), 95.0);
}

double hd95(const LabelVolume& a, const LabelVolume& b, int class_id) {
  require_same_shape(a.shape, b.shape, "hd95");
  const auto ma = class_mask(a, class_id);
  const auto mb = class_mask(b, class_id);
  return hd95(ma, mb, a.shape, a.spacing);
}

double psnr(const Volume& x, const Volume& y, double data_range) {
  require_same_shape(x.shape, y.shape, "psnr");
  double sse = 0.0;
  for (std::size_t i = 0; i < x.data.size(); ++i) {
    const double e = static_cast<double>(x.data[i]) - static_cast<double>(y.data[i]);
    sse += e * e;
  }
  const double mse = sse / static_cast<double>(x.data.size());
  if (mse == 0.0) throw DomainError("psnr is undefined for identical inputs (MSE = 0)");
  return 10.0 * std::log10(data_range * data_range / mse);
}

namespace {

constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;

std::vector<double> gaussian_window() {
  std::vector<double> w(2 * kSsimRadius + 1);
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) w[static_cast<std::size_t>(i + kSsimRadius)] = std::exp(-0.5 * i * i / (kSsimSigma * kSsimSigma));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (auto& v : w) v /= total;
  return w;
}

// Valid-mode separable filtering of an h x w image.
std::vector<double> filter_valid(const std::vector<double>& img, std::int64_t h, std::int64_t w, const std::vector<double>& k) {
  const std::int64_t kn = static_cast<std::int64_t>(k.size());
  const std::int64_t ow = w - kn + 1;
  const std::int64_t oh = h - kn + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h * ow));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < kn; ++t) acc += k[static_cast<std::size_t>(t)] * img[static_cast<std::size_t>(y * w + x + t)];
      tmp[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  std::vector<double> out(static_cast<std::size_t>(oh * ow));
  for (std::int64_t y = 0; y < oh; ++y)
    for (std::int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < kn; ++t) acc += k[static_cast<std::size_t>(t)] * tmp[static_cast<std::size_t>((y + t) * ow + x)];
      out[static_cast<std::size_t>(y * ow + x)] = acc;
    }
  return out;
}

}  // namespace

double ssim(const Volume& x, const Volume& y, double data_range) {
  require_same_shape(x.shape, y.shape, "ssim");
  const std::int64_t h = x.shape.h;
  const std::int64_t w = x.shape.w;
  const std::int64_t win = 2 * kSsimRadius + 1;
  if (h < win || w < win) throw ShapeError("ssim needs in-plane extent >= " + std::to_string(win));

  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);
  const auto k = gaussian_window();
  const auto plane = static_cast<std::size_t>(h * w);
  std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);

  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t z = 0; z < x.shape.d; ++z) {
    for (std::size_t i = 0; i < plane; ++i) {
      a[i] = x.data[static_cast<std::size_t>(z) * plane + i];
      b[i] = y.data[static_cast<std::size_t>(z) * plane + i];
      aa[i] = a[i] * a[i];
      bb[i] = b[i] * b[i];
      ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a, h, w, k);
    const auto mu_b = filter_valid(b, h, w, k);
    const auto e_aa = filter_valid(aa, h, w, k);
    const auto e_bb = filter_valid(bb, h, w, k);
    const auto e_ab = filter_valid(ab, h, w, k);
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
      const double va = e_aa[i] - mu_a[i] * mu_a[i];
      const double vb = e_bb[i] - mu_b[i] * mu_b[i];
      const double cov = e_ab[i] - mu_a[i] * mu_b[i];
      const double num = (2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2);
      const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double pearson(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw ShapeError("pearson: size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) throw DomainError("pearson correlation undefined for zero-variance input");
  return sab / std::sqrt(saa * sbb);
}

double uncertainty_error_correlation(const Volume& uncertainty, const Volume& pred, const Volume& target) {
  require_same_shape(uncertainty.shape, pred.shape, "uncertainty_error_correlation");
  require_same_shape(pred.shape, target.shape, "uncertainty_error_correlation");
  std::vector<float> err(pred.data.size());
  for (std::size_t i = 0; i < err.size(); ++i) err[i] = std::fabs(pred.data[i] - target.data[i]);
  return pearson(uncertainty.data, err);
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return out;
}

}  // namespace rehrseg
