#include "rehrseg/losses.hpp"

#include "rehrseg/errors.hpp"
#include "rehrseg/tensor_util.hpp"

namespace rehrseg {

namespace {

void check_targets(const torch::Tensor& logits, const torch::Tensor& target) {
  if (logits.dim() != target.dim() + 1) throw ShapeError("logits must have one more dim (classes) than targets");
  if (logits.size(0) != target.size(0)) throw ShapeError("batch size mismatch between logits and targets");
  for (std::int64_t d = 1; d < target.dim(); ++d) {
    if (logits.size(d + 1) != target.size(d)) throw ShapeError("spatial shape mismatch between logits and targets");
  }
  const auto k = logits.size(1);
  if (target.numel() > 0) {
    const auto lo = target.min().item<std::int64_t>();
    const auto hi = target.max().item<std::int64_t>();
    if (lo < 0 || hi >= k) {
      throw DomainError("class id " + std::to_string(lo < 0 ? lo : hi) + " outside [0," + std::to_string(k) + ")");
    }
  }
}

torch::Tensor flatten_item_channel(const torch::Tensor& t) {
  // (B,1,...) -> (B,...)
  return (t.dim() >= 2 && t.size(1) == 1) ? t.squeeze(1) : t;
}

}  // namespace

torch::Tensor cross_entropy_map(const torch::Tensor& logits, const torch::Tensor& target) {
  check_targets(logits, target);
  return -torch::log_softmax(logits, 1).gather(1, target.unsqueeze(1)).squeeze(1);
}

torch::Tensor soft_dice_loss(const torch::Tensor& logits, const torch::Tensor& target, double eps) {
  check_targets(logits, target);
  const auto k = logits.size(1);
  const auto probs = torch::softmax(logits, 1);
  const auto truth = torch::one_hot(target, k).movedim(-1, 1).to(probs.scalar_type());
  std::vector<std::int64_t> reduce{0};
  for (std::int64_t d = 2; d < probs.dim(); ++d) reduce.push_back(d);
  const auto inter = (probs * truth).sum(reduce);
  const auto denom = probs.sum(reduce) + truth.sum(reduce);
  const auto per_class = (2.0 * inter + eps) / (denom + eps);
  return 1.0 - per_class.mean();
}

torch::Tensor ce_dice_loss(const torch::Tensor& logits, const torch::Tensor& target) {
  return cross_entropy_map(logits, target).mean() + soft_dice_loss(logits, target);
}

torch::Tensor sr_uncertainty_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& uncertainty) {
  if (pred.sizes() != target.sizes() || pred.sizes() != uncertainty.sizes()) {
    throw ShapeError("sr_uncertainty_loss: prediction, target and uncertainty shapes differ");
  }
  {
    torch::NoGradGuard guard;
    const bool in_range = (uncertainty >= 0).logical_and(uncertainty <= 1).all().item<bool>();
    if (!in_range) throw DomainError("uncertainty map must lie in (0,1)");
  }
  const auto u = uncertainty.clamp(kUncertaintyFloor, 1.0 - kUncertaintyFloor);
  return ((pred - target).abs() / u + torch::log(u)).mean();
}

torch::Tensor sr_label_loss(const torch::Tensor& logits, const torch::Tensor& target) { return ce_dice_loss(logits, target); }

torch::Tensor hr_seg_loss(const torch::Tensor& logits, const torch::Tensor& target) { return ce_dice_loss(logits, target); }

torch::Tensor uncertainty_weight_map(const torch::Tensor& uncertainty_lr) {
  torch::NoGradGuard guard;
  const auto u = flatten_item_channel(uncertainty_lr.detach());
  const auto flat = u.reshape({u.size(0), -1});
  const auto lo = std::get<0>(flat.min(1, true));
  const auto hi = std::get<0>(flat.max(1, true));
  const auto range = hi - lo;
  const auto degenerate = range <= 0;
  const auto norm = torch::where(degenerate, torch::zeros_like(flat), (flat - lo) / torch::where(degenerate, torch::ones_like(range), range));
  return (1.0 - norm).reshape(u.sizes());
}

torch::Tensor weighted_cross_entropy(const torch::Tensor& logits, const torch::Tensor& target, const torch::Tensor& weight) {
  const auto ce = cross_entropy_map(logits, target);
  const auto w = flatten_item_channel(weight);
  if (w.sizes() != ce.sizes()) throw ShapeError("uncertainty weight map does not match the LR segmentation shape");
  return (ce * w.to(ce.scalar_type())).mean();
}

torch::Tensor uncertainty_weighted_seg_loss(const torch::Tensor& lr_logits, const torch::Tensor& target,
                                            const torch::Tensor& uncertainty_hr, int r, const std::vector<int>& offsets) {
  const auto u = flatten_item_channel(uncertainty_hr);
  if (static_cast<std::int64_t>(offsets.size()) != u.size(0)) throw ShapeError("one decimation offset is needed per batch item");
  std::vector<torch::Tensor> items;
  for (std::int64_t b = 0; b < u.size(0); ++b) items.push_back(decimate(u[b], 0, r, offsets[static_cast<std::size_t>(b)]));
  const auto u_lr = torch::stack(items);
  return weighted_cross_entropy(lr_logits, target, uncertainty_weight_map(u_lr));
}

}  // namespace rehrseg
