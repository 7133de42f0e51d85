#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>
#include <vector>

#include "rehrseg/degrade.hpp"
#include "rehrseg/volume.hpp"

namespace rehrseg {

struct SelfSRConfig {
  int r = 4;
  int channels = 16;        // backbone feature channels C
  int merge_channels = 8;   // per-depth channels of the merged head features
  int branches = 4;         // N intermediate predictions
  int num_classes = 2;
  std::int64_t iters_total = 3000;
  std::int64_t iters_uncertainty_on = 2600;  // first iteration using the uncertainty loss
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  std::string backbone_init;  // optional externally pretrained backbone weights

  void validate() const;
};

// Backbone input channels: the image plus one indicator per foreground class.
inline int selfsr_input_channels(int num_classes) { return num_classes; }

// 3-level 3D encoder-decoder with skip connections. Emits C channels at the
// input resolution; every spatial extent must be a multiple of 4 and depth >= 4.
class SRBackboneImpl : public torch::nn::Module {
 public:
  SRBackboneImpl(int in_channels, int channels);
  torch::Tensor forward(const torch::Tensor& x);
  int channels() const { return channels_; }

 private:
  int channels_;
  torch::nn::Sequential enc1_{nullptr}, enc2_{nullptr}, bottleneck_{nullptr}, dec2_{nullptr}, dec1_{nullptr};
  torch::nn::ConvTranspose3d up2_{nullptr}, up1_{nullptr};
};
TORCH_MODULE(SRBackbone);

struct UASROutput {
  torch::Tensor branch_images;   // (B,N,rD,H,W), tanh-activated
  torch::Tensor branch_labels;   // (B,N,K,rD,H,W) logits
  torch::Tensor attention;       // (B,N,rD,H,W), softmax over N
  torch::Tensor image;           // (B,1,rD,H,W)  sum_j A_j * I_j (+ B-spline upsampled input in SelfSRNet)
  torch::Tensor label_logits;    // (B,K,rD,H,W)  sum_j A_j * Y_j
  torch::Tensor uncertainty;     // (B,1,rD,H,W)  sigmoid(conv(A))
};

// Uncertainty-aware SR head. Depth is folded into channels by a merge
// convolution producing r * merge_channels maps per LR slice, which are then
// unfolded into r output slices (output slice d * r + k).
class UASRHeadImpl : public torch::nn::Module {
 public:
  UASRHeadImpl(int in_channels, int merge_channels, int branches, int num_classes, int r);
  UASROutput forward(const torch::Tensor& features);

  int branches() const { return branches_; }
  int num_classes() const { return num_classes_; }
  int r() const { return r_; }

  torch::nn::Conv3d merge{nullptr}, image_filters{nullptr}, label_filters{nullptr}, attention_filters{nullptr}, uncertainty_conv{nullptr};

 private:
  int in_channels_, merge_channels_, branches_, num_classes_, r_;
};
TORCH_MODULE(UASRHead);

struct SelfSROutput {
  torch::Tensor features;  // (B,C,D,H,W)
  UASROutput head;
};

class SelfSRNetImpl : public torch::nn::Module {
 public:
  explicit SelfSRNetImpl(const SelfSRConfig& cfg);
  // image (B,1,D,H,W) float; labels (B,D,H,W) int64.
  SelfSROutput forward(const torch::Tensor& image, const torch::Tensor& labels);
  torch::Tensor backbone_features(const torch::Tensor& image, const torch::Tensor& labels);

  SRBackbone backbone{nullptr};
  UASRHead head{nullptr};

 private:
  torch::Tensor encode_input(const torch::Tensor& image, const torch::Tensor& labels) const;
  int num_classes_;
};
TORCH_MODULE(SelfSRNet);

struct SelfSRTraceRow {
  std::int64_t iter = 0;
  double l1 = 0.0;
  double label = 0.0;
  double uncertainty = 0.0;  // 0 before the uncertainty loss is switched on
  double total = 0.0;
};

struct SelfSRModel {
  SelfSRConfig config;
  SelfSRNet net{nullptr};
  std::unique_ptr<torch::optim::Adam> optimizer;
  std::int64_t iteration = 0;
  std::vector<SelfSRTraceRow> trace;
};

// Fresh model with seeded initialisation (and backbone_init if set).
SelfSRModel make_selfsr_model(const SelfSRConfig& cfg);

// Runs until model.iteration == cfg.iters_total. Pixel loss is mean L1 before
// iters_uncertainty_on and the uncertainty loss afterwards; the label loss is
// cross entropy + Dice throughout. Throws TrainingError on non-finite loss.
// A non-negative `until` stops early at that iteration.
void train_selfsr(SelfSRModel& model, const PairSet& pairs, std::int64_t until = -1);
SelfSRModel train_selfsr(const PairSet& pairs, const SelfSRConfig& cfg);

// Writes model.pt, optimizer.pt, manifest.json and loss_trace.csv.
void save_selfsr_checkpoint(const SelfSRModel& model, const std::filesystem::path& dir);
SelfSRModel load_selfsr_checkpoint(const std::filesystem::path& dir);

struct PseudoHRBundle {
  Volume image;            // Ĩ_HR, clamped to [0,1]
  LabelVolume labels;      // Ỹ_HR
  Volume uncertainty;      // U in (0,1)
  torch::Tensor features;  // (C,D,H,W) backbone features of the LR input
};

// Super-resolves along z by r. Inputs must be aligned LR volumes.
PseudoHRBundle infer_selfsr(const Volume& lr, const LabelVolume& lr_labels, const SelfSRModel& model);

// Backbone features of an LR volume, (C,D,H,W).
torch::Tensor selfsr_features(const Volume& lr, const LabelVolume& lr_labels, const SelfSRModel& model);

}  // namespace rehrseg
