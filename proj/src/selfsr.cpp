#include "rehrseg/selfsr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"
#include "rehrseg/losses.hpp"
#include "rehrseg/tensor_util.hpp"

namespace rehrseg {

namespace F = torch::nn::functional;

void SelfSRConfig::validate() const {
  if (r < 2) throw ConfigError("self-SR scale factor r must be >= 2");
  if (branches < 2) throw ConfigError("UASR head needs at least 2 branches");
  if (channels < 1 || merge_channels < 1) throw ConfigError("channel counts must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (iters_total < 1) throw ConfigError("iters_total must be positive");
  if (iters_uncertainty_on < 0 || iters_uncertainty_on >= iters_total) {
    throw ConfigError("iters_uncertainty_on must lie in [0, iters_total)");
  }
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
}

namespace {

torch::nn::Sequential conv_block(int in, int out) {
  return torch::nn::Sequential(
      torch::nn::Conv3d(torch::nn::Conv3dOptions(in, out, 3).padding(1)),
      torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.1)),
      torch::nn::Conv3d(torch::nn::Conv3dOptions(out, out, 3).padding(1)),
      torch::nn::LeakyReLU(torch::nn::LeakyReLUOptions().negative_slope(0.1)));
}

std::int64_t round_up(std::int64_t n, std::int64_t m) { return (n + m - 1) / m * m; }

}  // namespace

SRBackboneImpl::SRBackboneImpl(int in_channels, int channels) : channels_(channels) {
  enc1_ = register_module("enc1", conv_block(in_channels, channels));
  enc2_ = register_module("enc2", conv_block(channels, 2 * channels));
  bottleneck_ = register_module("bottleneck", conv_block(2 * channels, 4 * channels));
  up2_ = register_module("up2", torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(4 * channels, 2 * channels, 2).stride(2)));
  dec2_ = register_module("dec2", conv_block(4 * channels, 2 * channels));
  up1_ = register_module("up1", torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(2 * channels, channels, 2).stride(2)));
  dec1_ = register_module("dec1", conv_block(2 * channels, channels));
}

torch::Tensor SRBackboneImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 5) throw ShapeError("backbone expects (B,C,D,H,W) input");
  if (x.size(2) < 4) throw ShapeError("depth " + std::to_string(x.size(2)) + " is too small for the encoder (need >= 4)");
  for (int d = 2; d < 5; ++d) {
    if (x.size(d) % 4 != 0) throw ShapeError("backbone spatial extents must be multiples of 4");
  }
  const auto e1 = enc1_->forward(x);
  const auto e2 = enc2_->forward(F::avg_pool3d(e1, F::AvgPool3dFuncOptions(2)));
  const auto b = bottleneck_->forward(F::avg_pool3d(e2, F::AvgPool3dFuncOptions(2)));
  const auto d2 = dec2_->forward(torch::cat({up2_->forward(b), e2}, 1));
  return dec1_->forward(torch::cat({up1_->forward(d2), e1}, 1));
}

UASRHeadImpl::UASRHeadImpl(int in_channels, int merge_channels, int branches, int num_classes, int r)
    : in_channels_(in_channels), merge_channels_(merge_channels), branches_(branches), num_classes_(num_classes), r_(r) {
  using torch::nn::Conv3dOptions;
  merge = register_module("merge", torch::nn::Conv3d(Conv3dOptions(in_channels, r * merge_channels, 3).padding(1)));
  image_filters = register_module("image_filters", torch::nn::Conv3d(Conv3dOptions(merge_channels, branches, 3).padding(1)));
  label_filters = register_module("label_filters", torch::nn::Conv3d(Conv3dOptions(merge_channels, branches * num_classes, 3).padding(1)));
  attention_filters = register_module("attention_filters", torch::nn::Conv3d(Conv3dOptions(merge_channels, branches, 3).padding(1)));
  uncertainty_conv = register_module("uncertainty_conv", torch::nn::Conv3d(Conv3dOptions(branches, 1, 3).padding(1)));
  // Residual branches start at zero.
  torch::NoGradGuard guard;
  image_filters->weight.zero_();
  image_filters->bias.zero_();
}

UASROutput UASRHeadImpl::forward(const torch::Tensor& features) {
  if (features.dim() != 5 || features.size(1) != in_channels_) {
    throw ShapeError("UASR head expects (B," + std::to_string(in_channels_) + ",D,H,W) features");
  }
  const auto b = features.size(0);
  const auto d = features.size(2);
  const auto h = features.size(3);
  const auto w = features.size(4);

  // Merge: per-slice features -> r * Cm channels; split: channels -> depth.
  auto fm = F::leaky_relu(merge->forward(features), F::LeakyReLUFuncOptions().negative_slope(0.2));
  fm = fm.view({b, merge_channels_, r_, d, h, w}).permute({0, 1, 3, 2, 4, 5}).reshape({b, merge_channels_, d * r_, h, w});

  UASROutput out;
  out.branch_images = torch::tanh(image_filters->forward(fm));
  out.branch_labels = label_filters->forward(fm).view({b, branches_, num_classes_, d * r_, h, w});
  out.attention = torch::softmax(attention_filters->forward(fm), 1);
  out.image = (out.attention * out.branch_images).sum(1, true);
  out.label_logits = (out.attention.unsqueeze(2) * out.branch_labels).sum(1);
  out.uncertainty = torch::sigmoid(uncertainty_conv->forward(out.attention));
  return out;
}

SelfSRNetImpl::SelfSRNetImpl(const SelfSRConfig& cfg) : num_classes_(cfg.num_classes) {
  backbone = register_module("backbone", SRBackbone(selfsr_input_channels(cfg.num_classes), cfg.channels));
  head = register_module("head", UASRHead(cfg.channels, cfg.merge_channels, cfg.branches, cfg.num_classes, cfg.r));
}

torch::Tensor SelfSRNetImpl::encode_input(const torch::Tensor& image, const torch::Tensor& labels) const {
  if (image.dim() != 5 || image.size(1) != 1) throw ShapeError("self-SR image input must be (B,1,D,H,W)");
  if (labels.dim() != 4 || labels.size(0) != image.size(0) || labels.size(1) != image.size(2) || labels.size(2) != image.size(3) ||
      labels.size(3) != image.size(4)) {
    throw ShapeError("self-SR label input must be (B,D,H,W) aligned with the image");
  }
  const auto indicators = one_hot(labels, num_classes_).slice(1, 1, num_classes_).to(image.scalar_type());
  return torch::cat({image, indicators}, 1);
}

torch::Tensor SelfSRNetImpl::backbone_features(const torch::Tensor& image, const torch::Tensor& labels) {
  auto x = encode_input(image, labels);
  const auto d = x.size(2), h = x.size(3), w = x.size(4);
  if (d < 4) throw ShapeError("depth " + std::to_string(d) + " is too small for the encoder (need >= 4)");
  const auto pd = round_up(d, 4) - d, ph = round_up(h, 4) - h, pw = round_up(w, 4) - w;
  if (pd || ph || pw) x = F::pad(x, F::PadFuncOptions({0, pw, 0, ph, 0, pd}).mode(torch::kReplicate));
  auto f = backbone->forward(x);
  if (pd || ph || pw) f = f.slice(2, 0, d).slice(3, 0, h).slice(4, 0, w);
  return f;
}

SelfSROutput SelfSRNetImpl::forward(const torch::Tensor& image, const torch::Tensor& labels) {
  SelfSROutput out;
  out.features = backbone_features(image, labels);
  out.head = head->forward(out.features);
  // Branches predict residuals over cubic B-spline upsampling of the input.
  out.head.image = out.head.image + bspline_upsample(image, 2, head->r());
  return out;
}

SelfSRModel make_selfsr_model(const SelfSRConfig& cfg) {
  cfg.validate();
  torch::manual_seed(cfg.seed);
  SelfSRModel m;
  m.config = cfg;
  m.net = SelfSRNet(cfg);
  if (!cfg.backbone_init.empty()) {
    try {
      torch::load(m.net->backbone, cfg.backbone_init);
    } catch (const c10::Error& e) {
      throw IoError("cannot load backbone weights from " + cfg.backbone_init + ": " + e.what_without_backtrace());
    }
  }
  m.optimizer = std::make_unique<torch::optim::Adam>(m.net->parameters(), torch::optim::AdamOptions(cfg.learning_rate));
  return m;
}

namespace {

struct PairTensors {
  torch::Tensor lr_image, hr_image;    // (P,1,...)
  torch::Tensor lr_labels, hr_labels;  // (P,...) uint8
};

PairTensors stack_pairs(const PairSet& pairs, int r, int num_classes) {
  if (pairs.pairs.empty()) throw DomainError("self-SR training needs a non-empty pair set");
  if (pairs.r != r) throw ConfigError("pair set was built with r=" + std::to_string(pairs.r) + " but the model uses r=" + std::to_string(r));
  std::vector<torch::Tensor> li, hi, ll, hl;
  const auto& first = pairs.pairs.front();
  for (const auto& p : pairs.pairs) {
    if (!(p.lr_image.shape == first.lr_image.shape) || !(p.hr_image.shape == first.hr_image.shape)) {
      throw ShapeError("all self-SR pairs must share one patch shape");
    }
    if (p.lr_labels.num_classes != num_classes) throw ConfigError("pair labels disagree with the model's num_classes");
    li.push_back(to_tensor(p.lr_image));
    hi.push_back(to_tensor(p.hr_image));
    ll.push_back(to_tensor(p.lr_labels).to(torch::kUInt8));
    hl.push_back(to_tensor(p.hr_labels).to(torch::kUInt8));
  }
  return {torch::stack(li).unsqueeze(1), torch::stack(hi).unsqueeze(1), torch::stack(ll), torch::stack(hl)};
}

double cosine_lr(double base, std::int64_t iter, std::int64_t total) {
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(iter) / static_cast<double>(total)));
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

nlohmann::json config_json(const SelfSRConfig& c) {
  return {{"r", c.r},
          {"channels", c.channels},
          {"merge_channels", c.merge_channels},
          {"branches", c.branches},
          {"num_classes", c.num_classes},
          {"iters_total", c.iters_total},
          {"iters_uncertainty_on", c.iters_uncertainty_on},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"backbone_init", c.backbone_init}};
}

SelfSRConfig config_from_json(const nlohmann::json& j) {
  SelfSRConfig c;
  c.r = j.at("r").get<int>();
  c.channels = j.at("channels").get<int>();
  c.merge_channels = j.at("merge_channels").get<int>();
  c.branches = j.at("branches").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.iters_total = j.at("iters_total").get<std::int64_t>();
  c.iters_uncertainty_on = j.at("iters_uncertainty_on").get<std::int64_t>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.backbone_init = j.value("backbone_init", std::string{});
  return c;
}

}  // namespace

void train_selfsr(SelfSRModel& model, const PairSet& pairs, std::int64_t until) {
  const auto& cfg = model.config;
  cfg.validate();
  const PairTensors data = stack_pairs(pairs, cfg.r, cfg.num_classes);
  const auto n = data.lr_image.size(0);
  model.net->train();

  const std::int64_t stop = until >= 0 ? std::min(until, cfg.iters_total) : cfg.iters_total;
  while (model.iteration < stop) {
    const std::int64_t it = model.iteration;
    // Batch composition depends only on (seed, iteration) so resumed runs match.
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), static_cast<std::uint32_t>(it)};
    std::mt19937_64 rng(seq);
    std::uniform_int_distribution<std::int64_t> pick(0, n - 1);
    std::vector<std::int64_t> idx(static_cast<std::size_t>(cfg.batch_size));
    for (auto& i : idx) i = pick(rng);
    const auto index = torch::tensor(idx, torch::kInt64);
    auto lr_img = data.lr_image.index_select(0, index);
    auto hr_img = data.hr_image.index_select(0, index);
    auto lr_lab = data.lr_labels.index_select(0, index).to(torch::kInt64);
    auto hr_lab = data.hr_labels.index_select(0, index).to(torch::kInt64);
    // In-plane flips.
    std::bernoulli_distribution coin(0.5);
    for (std::int64_t dim : {3, 4}) {
      if (coin(rng)) {
        lr_img = lr_img.flip(dim);
        hr_img = hr_img.flip(dim);
        lr_lab = lr_lab.flip(dim - 1);
        hr_lab = hr_lab.flip(dim - 1);
      }
    }

    set_lr(*model.optimizer, cosine_lr(cfg.learning_rate, it, cfg.iters_total));
    model.optimizer->zero_grad();
    const auto out = model.net->forward(lr_img, lr_lab);
    const auto l1 = (out.head.image - hr_img).abs().mean();
    const auto label = sr_label_loss(out.head.label_logits, hr_lab);
    const bool use_uncertainty = it >= cfg.iters_uncertainty_on;
    torch::Tensor pixel = use_uncertainty ? sr_uncertainty_loss(out.head.image, hr_img, out.head.uncertainty) : l1;
    const auto total = pixel + label;
    if (!std::isfinite(total.item<double>())) {
      throw TrainingError("self-SR loss diverged at iteration " + std::to_string(it) + " (l1=" + std::to_string(l1.item<double>()) +
                          ", label=" + std::to_string(label.item<double>()) + ")");
    }
    total.backward();
    model.optimizer->step();

    model.trace.push_back({it, l1.item<double>(), label.item<double>(), use_uncertainty ? pixel.item<double>() : 0.0, total.item<double>()});
    ++model.iteration;
  }
  model.net->eval();
}

SelfSRModel train_selfsr(const PairSet& pairs, const SelfSRConfig& cfg) {
  SelfSRModel model = make_selfsr_model(cfg);
  train_selfsr(model, pairs);
  return model;
}

void save_selfsr_checkpoint(const SelfSRModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  torch::save(model.net, (dir / "model.pt").string());
  torch::save(*model.optimizer, (dir / "optimizer.pt").string());

  std::ofstream csv(dir / "loss_trace.csv");
  if (!csv) throw IoError("cannot write " + (dir / "loss_trace.csv").string());
  csv << "iter,l1,label,uncertainty,total\n";
  csv.precision(9);
  for (const auto& row : model.trace) {
    csv << row.iter << "," << row.l1 << "," << row.label << "," << row.uncertainty << "," << row.total << "\n";
  }

  nlohmann::ordered_json j;
  j["kind"] = "selfsr";
  j["config"] = config_json(model.config);
  j["seed"] = model.config.seed;
  j["iteration"] = model.iteration;
  j["loss_trace"] = "loss_trace.csv";
  if (!model.trace.empty()) {
    const auto& last = model.trace.back();
    j["final_losses"] = {{"l1", last.l1}, {"label", last.label}, {"uncertainty", last.uncertainty}, {"total", last.total}};
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

SelfSRModel load_selfsr_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing self-SR checkpoint manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  SelfSRConfig cfg = config_from_json(j.at("config"));
  cfg.backbone_init.clear();
  SelfSRModel m = make_selfsr_model(cfg);
  try {
    torch::load(m.net, (dir / "model.pt").string());
    if (std::filesystem::exists(dir / "optimizer.pt")) torch::load(*m.optimizer, (dir / "optimizer.pt").string());
  } catch (const c10::Error& e) {
    throw IoError("cannot load self-SR checkpoint from " + dir.string() + ": " + e.what_without_backtrace());
  }
  m.iteration = j.at("iteration").get<std::int64_t>();

  std::ifstream csv(dir / "loss_trace.csv");
  std::string line;
  if (csv && std::getline(csv, line)) {
    while (std::getline(csv, line)) {
      SelfSRTraceRow row;
      if (std::sscanf(line.c_str(), "%ld,%lf,%lf,%lf,%lf", &row.iter, &row.l1, &row.label, &row.uncertainty, &row.total) == 5) {
        m.trace.push_back(row);
      }
    }
  }
  m.net->eval();
  return m;
}

torch::Tensor selfsr_features(const Volume& lr, const LabelVolume& lr_labels, const SelfSRModel& model) {
  require_same_shape(lr.shape, lr_labels.shape, "selfsr_features");
  torch::NoGradGuard guard;
  auto net = model.net;
  net->eval();
  return net->backbone_features(to_tensor(lr).unsqueeze(0).unsqueeze(0), to_tensor(lr_labels).unsqueeze(0)).squeeze(0);
}

PseudoHRBundle infer_selfsr(const Volume& lr, const LabelVolume& lr_labels, const SelfSRModel& model) {
  require_same_shape(lr.shape, lr_labels.shape, "infer_selfsr");
  if (lr_labels.num_classes != model.config.num_classes) {
    throw ShapeError("label volume has " + std::to_string(lr_labels.num_classes) + " classes, checkpoint expects " +
                     std::to_string(model.config.num_classes));
  }
  torch::NoGradGuard guard;
  auto net = model.net;
  net->eval();
  const auto out = net->forward(to_tensor(lr).unsqueeze(0).unsqueeze(0), to_tensor(lr_labels).unsqueeze(0));

  Spacing hr_spacing = lr.spacing;
  hr_spacing.z = lr.spacing.z / model.config.r;
  PseudoHRBundle bundle;
  bundle.image = to_volume(out.head.image.clamp(0.0, 1.0), hr_spacing);
  bundle.labels = to_labels(out.head.label_logits.argmax(1), hr_spacing, model.config.num_classes);
  bundle.uncertainty = to_volume(out.head.uncertainty, hr_spacing);
  bundle.features = out.features.squeeze(0);
  return bundle;
}

}  // namespace rehrseg
