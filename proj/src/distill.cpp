#include "rehrseg/distill.hpp"

#include "rehrseg/errors.hpp"

namespace rehrseg {

namespace F = torch::nn::functional;

namespace {

// Adds a batch dim to (C,D,H,W) input; reports whether it did.
std::pair<torch::Tensor, bool> batched(const torch::Tensor& t) {
  if (t.dim() == 4) return {t.unsqueeze(0), true};
  if (t.dim() == 5) return {t, false};
  throw ShapeError("feature maps must be (C,D,H,W) or (B,C,D,H,W)");
}

}  // namespace

torch::Tensor align_features(const torch::Tensor& features, const std::array<std::int64_t, 3>& target) {
  for (auto t : target) {
    if (t <= 0) throw ShapeError("alignment target extents must be positive");
  }
  auto [x, added] = batched(features);
  if (x.size(2) == target[0] && x.size(3) == target[1] && x.size(4) == target[2]) return features;
  auto out = F::interpolate(x, F::InterpolateFuncOptions()
                                   .size(std::vector<std::int64_t>{target[0], target[1], target[2]})
                                   .mode(torch::kTrilinear)
                                   .align_corners(false));
  return added ? out.squeeze(0) : out;
}

torch::Tensor crop_to_granularity(const torch::Tensor& features, const Granularity& beta) {
  auto [x, added] = batched(features);
  const std::int64_t b[3] = {beta.z, beta.y, beta.x};
  for (int i = 0; i < 3; ++i) {
    const auto n = x.size(2 + i) / b[i] * b[i];
    if (n == 0) throw ShapeError("feature map is smaller than the affinity granularity");
    x = x.slice(2 + i, 0, n);
  }
  return added ? x.squeeze(0) : x;
}

torch::Tensor build_affinity(const torch::Tensor& features, const Granularity& beta) {
  if (beta.z < 1 || beta.y < 1 || beta.x < 1) throw ShapeError("granularity components must be positive");
  auto [x, added] = batched(features);
  const std::int64_t b[3] = {beta.z, beta.y, beta.x};
  for (int i = 0; i < 3; ++i) {
    if (x.size(2 + i) % b[i] != 0) {
      throw ShapeError("feature extent " + std::to_string(x.size(2 + i)) + " is not divisible by granularity " + std::to_string(b[i]));
    }
  }
  const auto pooled = F::avg_pool3d(x, F::AvgPool3dFuncOptions({beta.z, beta.y, beta.x}));
  // (B,C,n) -> unit node vectors (B,n,C).
  const auto nodes = F::normalize(pooled.flatten(2).transpose(1, 2), F::NormalizeFuncOptions().dim(2).eps(1e-12));
  auto a = torch::bmm(nodes, nodes.transpose(1, 2));
  return added ? a.squeeze(0) : a;
}

torch::Tensor correlation_loss(const torch::Tensor& affinity_sr, const torch::Tensor& affinity_seg) {
  if (affinity_sr.sizes() != affinity_seg.sizes()) throw ShapeError("affinity matrices differ in shape");
  auto a = affinity_sr.dim() == 2 ? affinity_sr.unsqueeze(0) : affinity_sr;
  auto s = affinity_seg.dim() == 2 ? affinity_seg.unsqueeze(0) : affinity_seg;
  if (a.dim() != 3 || a.size(1) != a.size(2)) throw ShapeError("affinity matrices must be square");
  const auto n = static_cast<double>(a.size(1));
  return ((a - s).pow(2).sum({1, 2}) / n).mean();
}

AdaptorImpl::AdaptorImpl(int student_channels, int teacher_channels) {
  conv = register_module("conv", torch::nn::Conv3d(torch::nn::Conv3dOptions(student_channels, teacher_channels, 1)));
}

torch::Tensor cosine_distance_loss(const torch::Tensor& adapted_student, const torch::Tensor& teacher) {
  if (adapted_student.sizes() != teacher.sizes()) throw ShapeError("adapted student and teacher features differ in shape");
  const auto t = teacher.detach();
  const auto t_norm = t.norm(2, 1);
  const auto valid = (t_norm > 0).to(adapted_student.scalar_type());
  const auto count = valid.sum();
  if (count.item<double>() == 0.0) return (adapted_student * 0.0).sum();
  const auto s_norm = adapted_student.norm(2, 1).clamp_min(1e-12);
  const auto cos = (adapted_student * t).sum(1) / (s_norm * t_norm.clamp_min(1e-12));
  return ((1.0 - cos) * valid).sum() / count;
}

torch::Tensor spatial_loss(const torch::Tensor& student, const torch::Tensor& teacher, Adaptor& adaptor) {
  return cosine_distance_loss(adaptor->forward(student), teacher);
}

}  // namespace rehrseg
