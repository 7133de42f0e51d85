#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rehrseg/distill.hpp"
#include "rehrseg/selfsr.hpp"
#include "rehrseg/volume.hpp"

namespace rehrseg {

struct SegConfig {
  int base_channels = 16;
  int levels = 3;
  int num_classes = 2;
  int r = 4;
  double lambda = 1.0;
  int epochs = 50;
  int batch_size = 2;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool pseudo_data_on = true;  // train on the r-offset pseudo-LR set as well
  bool uncertainty_on = true;
  bool distill_on = true;
  bool hr_head_on = true;
  int hr_hidden_channels = 8;
  // Decoder level supplying F_seg for distillation: 0 is full resolution,
  // levels - 2 is the stage right after the bottleneck.
  int feature_level = 1;
  Granularity beta{1, 2, 2};
  std::int64_t crop_height = 32;  // in-plane training crop; 0 keeps the full extent
  std::int64_t crop_width = 32;

  void validate() const;
};

struct SegOutputs {
  torch::Tensor lr_logits;  // (B,K,D,H,W)
  torch::Tensor hr_logits;  // (B,K,rD,H,W); undefined when the HR head is off
  torch::Tensor features;   // F_seg at the configured decoder level
};

// U-Net encoder-decoder with an LR segmentation head and an optional HR head
// that upsamples the pre-classifier features by r along depth, then applies
// conv -> ReLU -> conv. Input extents must be multiples of 2^(levels-1).
class SegNetImpl : public torch::nn::Module {
 public:
  explicit SegNetImpl(const SegConfig& cfg);
  SegOutputs forward(const torch::Tensor& image);

  int feature_channels() const;
  bool has_hr_head() const { return !hr_head_.is_empty(); }

 private:
  SegConfig cfg_;
  std::vector<torch::nn::Sequential> encoders_;
  std::vector<torch::nn::ConvTranspose3d> ups_;
  std::vector<torch::nn::Sequential> decoders_;
  torch::nn::Conv3d lr_head_{nullptr};
  torch::nn::Sequential hr_head_{nullptr};
};
TORCH_MODULE(SegNet);

// One training sample: an LR volume (real or pseudo) and what supervises it.
struct SegSample {
  Volume image;
  LabelVolume labels;
  int offset = 0;                          // decimation offset that produced it
  std::optional<LabelVolume> hr_labels;    // pseudo HR labels, already shifted by offset
  std::optional<Volume> uncertainty_hr;    // U at HR depth (unshifted)
};

// All variants derived from one acquired case. Each epoch visits every case
// once and draws one of its variants.
struct SegCase {
  std::string id;
  std::vector<SegSample> variants;
};

// Pseudo HR labels aligned to an LR sample decimated with `offset`: output
// slice j takes source slice min(j + offset, depth - 1).
LabelVolume shift_hr_labels(const LabelVolume& hr_labels, int offset);

// Builds the variants of one case: the real LR sample first, then (if
// cfg.pseudo_data_on) the r pseudo-LR samples synthesised from the bundle.
SegCase make_seg_case(const std::string& id, const Volume& lr, const LabelVolume& lr_labels, const PseudoHRBundle* bundle,
                      const SegConfig& cfg);

struct LossBreakdown {
  torch::Tensor u_seg, hr_seg, corr, spatial, total;
};

struct SegBatch {
  torch::Tensor image;           // (B,1,D,H,W)
  torch::Tensor labels;          // (B,D,H,W)
  torch::Tensor hr_labels;       // (B,rD,H,W) or undefined
  torch::Tensor uncertainty_hr;  // (B,1,rD,H,W) or undefined
  std::vector<int> offsets;
  torch::Tensor teacher;         // (B,C_sr,D,H,W) or undefined
};

// L = L_u_seg + L_HR_seg + lambda (L_corr + L_spatial); disabled terms are 0.
LossBreakdown total_loss(const SegOutputs& out, const SegBatch& batch, Adaptor* adaptor, const SegConfig& cfg);

struct SegTraceRow {
  std::int64_t iter = 0;
  int epoch = 0;
  double u_seg = 0, hr_seg = 0, corr = 0, spatial = 0, total = 0;
};

struct SegModel {
  SegConfig config;
  SegNet net{nullptr};
  Adaptor adaptor{nullptr};  // present when distillation is on
  std::vector<SegTraceRow> trace;
  std::vector<double> epoch_loss;  // mean total loss per epoch
};

SegModel make_seg_model(const SegConfig& cfg, int teacher_channels = 0);

// Optimises the total loss. The frozen self-SR model supplies teacher
// features when distillation is on (may be null otherwise).
SegModel train_segmenter(const std::vector<SegCase>& dataset, const SegConfig& cfg, const SelfSRModel* teacher);

void save_seg_checkpoint(const SegModel& model, const std::filesystem::path& dir);
SegModel load_seg_checkpoint(const std::filesystem::path& dir);

struct SegPrediction {
  LabelVolume lr;
  std::optional<LabelVolume> hr;
};

SegPrediction infer_segmenter(const Volume& lr, const SegModel& model);

}  // namespace rehrseg
