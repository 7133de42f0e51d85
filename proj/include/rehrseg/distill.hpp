#pragma once

#include <torch/torch.h>

#include <array>

namespace rehrseg {

// Pooling patch (bz, by, bx) that defines one affinity-graph node.
struct Granularity {
  std::int64_t z = 1;
  std::int64_t y = 2;
  std::int64_t x = 2;

  std::int64_t volume() const { return z * y * x; }
};

// Resamples teacher features (B,C,D,H,W) or (C,D,H,W) trilinearly to the
// student's spatial extent. Same extent returns the input unchanged.
torch::Tensor align_features(const torch::Tensor& features, const std::array<std::int64_t, 3>& target);

// Crops spatial dims down to the largest multiple of the granularity.
torch::Tensor crop_to_granularity(const torch::Tensor& features, const Granularity& beta);

// Average-pools (B,C,D,H,W) or (C,D,H,W) features with window = stride = beta
// and returns pairwise cosine similarities, (B,n,n) or (n,n). Throws
// ShapeError when a spatial extent is not divisible by beta.
torch::Tensor build_affinity(const torch::Tensor& features, const Granularity& beta);

// (1/n) sum_ij (a_sr - a_seg)^2, averaged over the batch.
torch::Tensor correlation_loss(const torch::Tensor& affinity_sr, const torch::Tensor& affinity_seg);

// Student adaptor: one 1x1x1 convolution onto the teacher's channels.
class AdaptorImpl : public torch::nn::Module {
 public:
  AdaptorImpl(int student_channels, int teacher_channels);
  torch::Tensor forward(const torch::Tensor& x) { return conv->forward(x); }

  torch::nn::Conv3d conv{nullptr};
};
TORCH_MODULE(Adaptor);

// Mean over voxels of 1 - cos(adapted student, teacher), channel-wise. The
// teacher is detached; voxels where the teacher vector is zero are left out
// of the average. Both inputs are (B,C,D,H,W) after adaptation.
torch::Tensor cosine_distance_loss(const torch::Tensor& adapted_student, const torch::Tensor& teacher);
torch::Tensor spatial_loss(const torch::Tensor& student, const torch::Tensor& teacher, Adaptor& adaptor);

}  // namespace rehrseg
