#include "rehrseg/tensor_util.hpp"

#include <cstring>
#include <map>
#include <mutex>

#include "rehrseg/volume_io.hpp"

namespace rehrseg {

namespace {

std::vector<std::int64_t> dims(const Shape3& s) { return {s.d, s.h, s.w}; }

torch::Tensor squeeze_to_3d(const torch::Tensor& t) {
  auto out = t;
  while (out.dim() > 3 && out.size(0) == 1) out = out.squeeze(0);
  if (out.dim() != 3) throw ShapeError("expected a 3D tensor, got " + std::to_string(t.dim()) + " dims");
  return out.contiguous();
}

}  // namespace

torch::Tensor to_tensor(const Volume& v) {
  return torch::from_blob(const_cast<float*>(v.data.data()), dims(v.shape), torch::kFloat32).clone();
}

torch::Tensor to_tensor(const LabelVolume& l) {
  return torch::from_blob(const_cast<std::int32_t*>(l.data.data()), dims(l.shape), torch::kInt32).to(torch::kInt64);
}

Volume to_volume(const torch::Tensor& t, const Spacing& spacing) {
  const auto x = squeeze_to_3d(t.detach()).to(torch::kFloat32).contiguous();
  Volume v({x.size(0), x.size(1), x.size(2)}, spacing);
  std::memcpy(v.data.data(), x.data_ptr<float>(), v.data.size() * sizeof(float));
  return v;
}

LabelVolume to_labels(const torch::Tensor& t, const Spacing& spacing, int num_classes) {
  const auto x = squeeze_to_3d(t.detach()).to(torch::kInt32).contiguous();
  LabelVolume l({x.size(0), x.size(1), x.size(2)}, spacing, num_classes);
  std::memcpy(l.data.data(), x.data_ptr<std::int32_t>(), l.data.size() * sizeof(std::int32_t));
  return l;
}

torch::Tensor one_hot(const torch::Tensor& labels, int num_classes) {
  return torch::one_hot(labels, num_classes).permute({0, 4, 1, 2, 3}).to(torch::kFloat32);
}

torch::Tensor decimate(const torch::Tensor& t, std::int64_t dim, int r, int offset) {
  if (offset < 0 || offset >= r) throw DomainError("offset outside [0, r)");
  return t.slice(dim, offset, t.size(dim), r);
}

torch::Tensor upsample_aligned(const torch::Tensor& t, std::int64_t dim, int r) {
  if (r == 1) return t;
  const auto n = t.size(dim);
  auto next = torch::cat({t.narrow(dim, 1, n - 1), t.narrow(dim, n - 1, 1)}, dim);
  std::vector<torch::Tensor> phases;
  phases.reserve(static_cast<std::size_t>(r));
  for (int k = 0; k < r; ++k) {
    const double a = static_cast<double>(k) / r;
    phases.push_back(t * (1.0 - a) + next * a);
  }
  // Interleave: output index d * r + k.
  auto stacked = torch::stack(phases, dim + 1);
  auto sizes = t.sizes().vec();
  sizes[static_cast<std::size_t>(dim)] = n * r;
  return stacked.reshape(sizes);
}

namespace {

// (r n, n) interpolation matrix, built by resampling unit impulses.
torch::Tensor bspline_matrix(std::int64_t n, int r) {
  static std::mutex mu;
  static std::map<std::pair<std::int64_t, int>, torch::Tensor> cache;
  std::lock_guard lock(mu);
  auto& m = cache[{n, r}];
  if (!m.defined()) {
    m = torch::zeros({n * r, n}, torch::kFloat64);
    auto acc = m.accessor<double, 2>();
    for (std::int64_t j = 0; j < n; ++j) {
      Volume impulse(Shape3{n, 1, 1}, Spacing{1.0, 1.0, 1.0});
      impulse.data[static_cast<std::size_t>(j)] = 1.0f;
      const auto out = resample_axis(impulse, 0, n * r, 1.0 / r, Interp::BSpline3);
      for (std::int64_t i = 0; i < n * r; ++i) acc[i][j] = out.data[static_cast<std::size_t>(i)];
    }
  }
  return m;
}

}  // namespace

torch::Tensor bspline_upsample(const torch::Tensor& t, std::int64_t dim, int r) {
  if (r == 1) return t;
  const auto m = bspline_matrix(t.size(dim), r).to(t.options());
  return torch::tensordot(m, t, {1}, {dim}).movedim(0, dim);
}

void require_finite(const torch::Tensor& t, const std::string& what) {
  if (!torch::isfinite(t).all().item<bool>()) throw TrainingError("non-finite value in " + what);
}

}  // namespace rehrseg
