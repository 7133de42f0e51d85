#pragma once

#include <torch/torch.h>

#include <vector>

namespace rehrseg {

// Logits are (B,K,spatial...), integer targets (B,spatial...). All losses are
// dtype-generic so they can be checked at double precision.

// Per-voxel cross entropy, shape (B,spatial...). Throws DomainError when a
// target id falls outside [0,K).
torch::Tensor cross_entropy_map(const torch::Tensor& logits, const torch::Tensor& target);

// 1 - mean_k (2 sum(p_k g_k) + eps) / (sum p_k + sum g_k + eps), summed over
// the whole batch, every class included.
torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& target, double eps = 1e-5);

// mean cross entropy + soft Dice.
torch::Tensor ce_dice_loss(const torch::Tensor& logits, const torch::Tensor& target);

inline constexpr double kUncertaintyFloor = 1e-4;

// mean(|pred - target| / U + log U) with U clamped to [1e-4, 1 - 1e-4].
// Throws DomainError if U leaves [0,1] or holds NaN.
torch::Tensor sr_uncertainty_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& uncertainty);

// Label branch of the self-SR head: cross entropy + soft Dice, no uncertainty.
torch::Tensor sr_label_loss(const torch::Tensor& logits, const torch::Tensor& target);

// HR segmentation head loss against pseudo HR labels: cross entropy + soft Dice.
torch::Tensor hr_seg_loss(const torch::Tensor& logits, const torch::Tensor& target);

// 1 - minmax(U) per batch item. A constant item normalises to zeros, i.e.
// full weight. Input (B,spatial...) or (B,1,spatial...); result is detached.
torch::Tensor uncertainty_weight_map(const torch::Tensor& uncertainty_lr);

// mean over voxels of weight * cross entropy.
torch::Tensor weighted_cross_entropy(const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& weight);

// Uncertainty-weighted LR segmentation loss. `uncertainty_hr` is (B,[1,]rD,H,W);
// item b is decimated along depth with offsets[b] before normalisation.
torch::Tensor uncertainty_weighted_seg_loss(const torch::Tensor& lr_logits, const torch::Tensor& target,
                                            const torch::Tensor& uncertainty_hr, int r, const std::vector<int>& offsets);

}  // namespace rehrseg
