#include <algorithm>
#include <cmath>

#include "rehrseg/volume_io.hpp"

namespace rehrseg {

namespace {

constexpr double kPole = -0.26794919243112270;  // sqrt(3) - 2
constexpr int kPad = 24;                        // |pole|^24 < 1e-13

// Interpolating cubic B-spline coefficients of `line`. The line is first
// extended by point-symmetric padding (s[-k] = 2 s[0] - s[k]), which keeps
// linear sequences linear, so the interpolant reproduces them exactly.
std::vector<double> bspline_coefficients(const std::vector<double>& line) {
  const int n = static_cast<int>(line.size());
  const int m = n + 2 * kPad;
  std::vector<double> c(static_cast<std::size_t>(m));
  for (int k = 0; k < m; ++k) {
    const int i = k - kPad;
    double v;
    if (i < 0) {
      v = 2.0 * line[0] - line[static_cast<std::size_t>(std::min(-i, n - 1))];
    } else if (i >= n) {
      v = 2.0 * line[static_cast<std::size_t>(n - 1)] - line[static_cast<std::size_t>(std::max(2 * (n - 1) - i, 0))];
    } else {
      v = line[static_cast<std::size_t>(i)];
    }
    c[static_cast<std::size_t>(k)] = 6.0 * v;
  }

  // Causal initialisation with mirror boundary, truncated sum.
  double zk = 1.0;
  double sum = 0.0;
  for (int k = 0; k < m; ++k) {
    sum += zk * c[static_cast<std::size_t>(k)];
    zk *= kPole;
    if (std::fabs(zk) < 1e-16) break;
  }
  c[0] = sum;
  for (int k = 1; k < m; ++k) c[static_cast<std::size_t>(k)] += kPole * c[static_cast<std::size_t>(k - 1)];
  c[static_cast<std::size_t>(m - 1)] =
      (kPole / (kPole * kPole - 1.0)) * (c[static_cast<std::size_t>(m - 1)] + kPole * c[static_cast<std::size_t>(m - 2)]);
  for (int k = m - 2; k >= 0; --k) {
    c[static_cast<std::size_t>(k)] = kPole * (c[static_cast<std::size_t>(k + 1)] - c[static_cast<std::size_t>(k)]);
  }
  return c;
}

double bspline_eval(const std::vector<double>& coef, double t) {
  const int m = static_cast<int>(coef.size());
  const double pos = t + kPad;
  const int i = static_cast<int>(std::floor(pos));
  const double u = pos - i;
  const double u2 = u * u;
  const double u3 = u2 * u;
  const double w[4] = {
      (1.0 - u) * (1.0 - u) * (1.0 - u) / 6.0,
      (4.0 - 6.0 * u2 + 3.0 * u3) / 6.0,
      (1.0 + 3.0 * u + 3.0 * u2 - 3.0 * u3) / 6.0,
      u3 / 6.0,
  };
  double acc = 0.0;
  for (int k = 0; k < 4; ++k) {
    const int j = std::clamp(i - 1 + k, 0, m - 1);
    acc += w[k] * coef[static_cast<std::size_t>(j)];
  }
  return acc;
}

std::int64_t nearest_source(std::int64_t i, double step, std::int64_t n) {
  return std::clamp<std::int64_t>(std::llround(static_cast<double>(i) * step), 0, n - 1);
}

template <typename G, typename LineFn>
G resample_lines(const G& g, int axis, std::int64_t n_out, LineFn&& fn) {
  if (axis < 0 || axis > 2) throw ShapeError("axis out of range: " + std::to_string(axis));
  if (n_out <= 0) throw ShapeError("resampled extent must be positive");
  G out = g;
  out.shape[axis] = n_out;
  out.data.assign(static_cast<std::size_t>(out.shape.voxels()), {});

  const std::int64_t n_in = g.shape[axis];
  const std::int64_t in_stride = g.stride(axis);
  const std::int64_t out_stride = out.stride(axis);
  // Iterate over all lines along `axis`: the other two axes.
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  using T = typename decltype(g.data)::value_type;
  std::vector<T> in_line(static_cast<std::size_t>(n_in));
  std::vector<T> out_line(static_cast<std::size_t>(n_out));
  for (std::int64_t p = 0; p < g.shape[a1]; ++p) {
    for (std::int64_t q = 0; q < g.shape[a2]; ++q) {
      const std::int64_t in_base = p * g.stride(a1) + q * g.stride(a2);
      const std::int64_t out_base = p * out.stride(a1) + q * out.stride(a2);
      for (std::int64_t k = 0; k < n_in; ++k) in_line[static_cast<std::size_t>(k)] = g.data[static_cast<std::size_t>(in_base + k * in_stride)];
      fn(in_line, out_line);
      for (std::int64_t k = 0; k < n_out; ++k) out.data[static_cast<std::size_t>(out_base + k * out_stride)] = out_line[static_cast<std::size_t>(k)];
    }
  }
  return out;
}

}  // namespace

Volume resample_axis(const Volume& v, int axis, std::int64_t n_out, double step, Interp method) {
  Volume out;
  if (method == Interp::Nearest) {
    out = resample_lines(v, axis, n_out, [&](const std::vector<float>& in, std::vector<float>& o) {
      const auto n = static_cast<std::int64_t>(in.size());
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[static_cast<std::size_t>(nearest_source(static_cast<std::int64_t>(i), step, n))];
    });
  } else {
    out = resample_lines(v, axis, n_out, [&](const std::vector<float>& in, std::vector<float>& o) {
      if (in.size() == 1) {
        std::fill(o.begin(), o.end(), in[0]);
        return;
      }
      const std::vector<double> line(in.begin(), in.end());
      const auto coef = bspline_coefficients(line);
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = static_cast<float>(bspline_eval(coef, static_cast<double>(i) * step));
    });
  }
  out.spacing[axis] = v.spacing[axis] * step;
  return out;
}

LabelVolume resample_axis(const LabelVolume& l, int axis, std::int64_t n_out, double step) {
  LabelVolume out = resample_lines(l, axis, n_out, [&](const std::vector<std::int32_t>& in, std::vector<std::int32_t>& o) {
    const auto n = static_cast<std::int64_t>(in.size());
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = in[static_cast<std::size_t>(nearest_source(static_cast<std::int64_t>(i), step, n))];
  });
  out.spacing[axis] = l.spacing[axis] * step;
  return out;
}

namespace {

template <typename G, typename AxisFn>
G resample_iso(const G& g, AxisFn&& per_axis) {
  const double target = g.spacing.min();
  G out = g;
  for (int a = 0; a < 3; ++a) {
    if (g.spacing[a] == target) continue;
    const double ratio = g.spacing[a] / target;
    const auto n_out = std::max<std::int64_t>(1, std::llround(static_cast<double>(g.shape[a]) * ratio));
    out = per_axis(out, a, n_out, 1.0 / ratio);
    out.spacing[a] = target;
  }
  return out;
}

}  // namespace

Volume resample_isotropic(const Volume& v, Interp method) {
  validate(v);
  return resample_iso(v, [method](const Volume& g, int a, std::int64_t n, double step) {
    return resample_axis(g, a, n, step, method);
  });
}

LabelVolume resample_isotropic(const LabelVolume& l, Interp method) {
  if (method != Interp::Nearest) throw DomainError("label volumes can only be resampled with nearest-neighbour interpolation");
  validate(l);
  return resample_iso(l, [](const LabelVolume& g, int a, std::int64_t n, double step) { return resample_axis(g, a, n, step); });
}

}  // namespace rehrseg
