#include "rehrseg/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "json.hpp"
#include "rehrseg/degrade.hpp"
#include "rehrseg/losses.hpp"
#include "rehrseg/tensor_util.hpp"

namespace rehrseg {

namespace F = torch::nn::functional;

void SegConfig::validate() const {
  if (base_channels < 1) throw ConfigError("base_channels must be positive");
  if (levels < 2) throw ConfigError("segmenter needs at least 2 levels");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (r < 2) throw ConfigError("scale factor r must be >= 2");
  if (!(lambda >= 0.0)) throw ConfigError("lambda must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (hr_hidden_channels < 1) throw ConfigError("hr_hidden_channels must be positive");
  if (feature_level < 0 || feature_level > levels - 2) throw ConfigError("feature_level must lie in [0, levels - 2]");
  if (beta.z < 1 || beta.y < 1 || beta.x < 1) throw ConfigError("granularity components must be positive");
  if (crop_height < 0 || crop_width < 0) throw ConfigError("crop extents must be >= 0");
}

namespace {

torch::nn::Sequential norm_block(int in, int out) {
  using namespace torch::nn;
  return Sequential(Conv3d(Conv3dOptions(in, out, 3).padding(1)), InstanceNorm3d(InstanceNorm3dOptions(out).affine(true)),
                    LeakyReLU(LeakyReLUOptions().negative_slope(0.01)), Conv3d(Conv3dOptions(out, out, 3).padding(1)),
                    InstanceNorm3d(InstanceNorm3dOptions(out).affine(true)), LeakyReLU(LeakyReLUOptions().negative_slope(0.01)));
}

int level_channels(const SegConfig& c, int level) { return c.base_channels << level; }

}  // namespace

SegNetImpl::SegNetImpl(const SegConfig& cfg) : cfg_(cfg) {
  cfg.validate();
  for (int l = 0; l < cfg.levels; ++l) {
    const int in = l == 0 ? 1 : level_channels(cfg, l - 1);
    encoders_.push_back(register_module("enc" + std::to_string(l), norm_block(in, level_channels(cfg, l))));
  }
  ups_.resize(static_cast<std::size_t>(cfg.levels - 1), nullptr);
  decoders_.resize(static_cast<std::size_t>(cfg.levels - 1), nullptr);
  for (int l = cfg.levels - 2; l >= 0; --l) {
    const int c = level_channels(cfg, l);
    ups_[static_cast<std::size_t>(l)] =
        register_module("up" + std::to_string(l), torch::nn::ConvTranspose3d(torch::nn::ConvTranspose3dOptions(2 * c, c, 2).stride(2)));
    decoders_[static_cast<std::size_t>(l)] = register_module("dec" + std::to_string(l), norm_block(2 * c, c));
  }
  lr_head_ = register_module("lr_head", torch::nn::Conv3d(torch::nn::Conv3dOptions(cfg.base_channels, cfg.num_classes, 1)));
  // Registered last so the LR path initialises identically with or without it.
  if (cfg.hr_head_on) {
    using namespace torch::nn;
    hr_head_ = register_module("hr_head", Sequential(Conv3d(Conv3dOptions(cfg.base_channels, cfg.hr_hidden_channels, 3).padding(1)), ReLU(),
                                                     Conv3d(Conv3dOptions(cfg.hr_hidden_channels, cfg.num_classes, 1))));
  }
}

int SegNetImpl::feature_channels() const { return level_channels(cfg_, cfg_.feature_level); }

SegOutputs SegNetImpl::forward(const torch::Tensor& image) {
  if (image.dim() != 5 || image.size(1) != 1) throw ShapeError("segmenter input must be (B,1,D,H,W)");
  const std::int64_t ladder = std::int64_t{1} << (cfg_.levels - 1);
  for (int d = 2; d < 5; ++d) {
    if (image.size(d) % ladder != 0) {
      throw ShapeError("segmenter input extent " + std::to_string(image.size(d)) + " is not a multiple of " + std::to_string(ladder));
    }
  }
  std::vector<torch::Tensor> skips;
  auto x = image;
  for (int l = 0; l < cfg_.levels; ++l) {
    if (l > 0) x = F::max_pool3d(x, F::MaxPool3dFuncOptions(2));
    x = encoders_[static_cast<std::size_t>(l)]->forward(x);
    skips.push_back(x);
  }
  SegOutputs out;
  for (int l = cfg_.levels - 2; l >= 0; --l) {
    x = ups_[static_cast<std::size_t>(l)]->forward(x);
    x = decoders_[static_cast<std::size_t>(l)]->forward(torch::cat({x, skips[static_cast<std::size_t>(l)]}, 1));
    if (l == cfg_.feature_level) out.features = x;
  }
  out.lr_logits = lr_head_->forward(x);
  if (!hr_head_.is_empty()) out.hr_logits = hr_head_->forward(upsample_aligned(x, 2, cfg_.r));
  return out;
}

LabelVolume shift_hr_labels(const LabelVolume& hr_labels, int offset) {
  if (offset < 0) throw DomainError("offset must be >= 0");
  LabelVolume out = hr_labels;
  const auto depth = hr_labels.shape.d;
  const auto plane = static_cast<std::size_t>(hr_labels.shape.h * hr_labels.shape.w);
  for (std::int64_t j = 0; j < depth; ++j) {
    const auto src = std::min<std::int64_t>(j + offset, depth - 1);
    std::copy_n(hr_labels.data.begin() + static_cast<std::ptrdiff_t>(src * static_cast<std::int64_t>(plane)), plane,
                out.data.begin() + static_cast<std::ptrdiff_t>(j * static_cast<std::int64_t>(plane)));
  }
  return out;
}

SegCase make_seg_case(const std::string& id, const Volume& lr, const LabelVolume& lr_labels, const PseudoHRBundle* bundle,
                      const SegConfig& cfg) {
  require_same_shape(lr.shape, lr_labels.shape, "make_seg_case");
  SegCase c;
  c.id = id;
  SegSample real{lr, lr_labels, 0, std::nullopt, std::nullopt};
  if (bundle) {
    if (bundle->labels.shape.d != lr.shape.d * cfg.r) throw ShapeError("pseudo HR bundle depth is not r x LR depth for case " + id);
    real.hr_labels = bundle->labels;
    real.uncertainty_hr = bundle->uncertainty;
  }
  c.variants.push_back(std::move(real));
  if (cfg.pseudo_data_on) {
    if (!bundle) throw ConfigError("pseudo data requested but no self-SR bundle is available for case " + id);
    for (auto& p : generate_pseudo_lr_set(bundle->image, bundle->labels, cfg.r)) {
      if (!(p.image.shape == lr.shape)) throw ShapeError("pseudo LR sample shape differs from the acquired LR shape for case " + id);
      c.variants.push_back({std::move(p.image), std::move(p.labels), p.offset, shift_hr_labels(bundle->labels, p.offset), bundle->uncertainty});
    }
  }
  return c;
}

LossBreakdown total_loss(const SegOutputs& out, const SegBatch& batch, Adaptor* adaptor, const SegConfig& cfg) {
  const auto zero = torch::zeros({}, out.lr_logits.options());
  LossBreakdown l{zero, zero, zero, zero, zero};

  if (cfg.uncertainty_on) {
    if (!batch.uncertainty_hr.defined()) throw ConfigError("uncertainty guidance needs self-SR uncertainty maps");
    l.u_seg = uncertainty_weighted_seg_loss(out.lr_logits, batch.labels, batch.uncertainty_hr, cfg.r, batch.offsets);
  } else {
    l.u_seg = cross_entropy_map(out.lr_logits, batch.labels).mean();
  }

  if (cfg.hr_head_on) {
    if (!out.hr_logits.defined()) throw ConfigError("hr_head_on is set but the network has no HR head");
    if (!batch.hr_labels.defined()) throw ConfigError("HR head training needs pseudo HR labels");
    l.hr_seg = hr_seg_loss(out.hr_logits, batch.hr_labels);
  }

  if (cfg.distill_on) {
    if (!batch.teacher.defined()) throw ConfigError("distillation needs teacher features");
    if (adaptor == nullptr || adaptor->is_empty()) throw ConfigError("distillation needs a student adaptor");
    const auto& student = out.features;
    const auto teacher = align_features(batch.teacher.detach(), {student.size(2), student.size(3), student.size(4)});
    const auto a_sr = build_affinity(crop_to_granularity(teacher, cfg.beta), cfg.beta);
    const auto a_seg = build_affinity(crop_to_granularity(student, cfg.beta), cfg.beta);
    l.corr = correlation_loss(a_sr, a_seg);
    l.spatial = spatial_loss(student, teacher, *adaptor);
  }

  const std::pair<const char*, const torch::Tensor*> parts[] = {
      {"L_u_seg", &l.u_seg}, {"L_HR_seg", &l.hr_seg}, {"L_corr", &l.corr}, {"L_spatial", &l.spatial}};
  for (const auto& [name, t] : parts) {
    if (!std::isfinite(t->item<double>())) throw TrainingError(std::string("non-finite loss component ") + name);
  }
  l.total = l.u_seg + l.hr_seg + cfg.lambda * (l.corr + l.spatial);
  return l;
}

SegModel make_seg_model(const SegConfig& cfg, int teacher_channels) {
  cfg.validate();
  torch::manual_seed(cfg.seed);
  SegModel m;
  m.config = cfg;
  m.net = SegNet(cfg);
  if (cfg.distill_on) {
    if (teacher_channels <= 0) throw ConfigError("distillation needs the teacher's channel count");
    m.adaptor = Adaptor(m.net->feature_channels(), teacher_channels);
  }
  return m;
}

namespace {

struct Crop {
  std::int64_t y0, x0, h, w;
  bool flip_y, flip_x;
  double scale, shift;
};

torch::Tensor apply_crop(const torch::Tensor& t, const Crop& c, std::int64_t ydim) {
  auto out = t.narrow(ydim, c.y0, c.h).narrow(ydim + 1, c.x0, c.w);
  if (c.flip_y) out = out.flip(ydim);
  if (c.flip_x) out = out.flip(ydim + 1);
  return out;
}

double cosine_lr(double base, std::int64_t iter, std::int64_t total) {
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(iter) / static_cast<double>(total)));
}

nlohmann::json seg_config_json(const SegConfig& c) {
  return {{"base_channels", c.base_channels},
          {"levels", c.levels},
          {"num_classes", c.num_classes},
          {"r", c.r},
          {"lambda", c.lambda},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed},
          {"pseudo_data_on", c.pseudo_data_on},
          {"uncertainty_on", c.uncertainty_on},
          {"distill_on", c.distill_on},
          {"hr_head_on", c.hr_head_on},
          {"hr_hidden_channels", c.hr_hidden_channels},
          {"feature_level", c.feature_level},
          {"beta", {c.beta.z, c.beta.y, c.beta.x}},
          {"crop", {c.crop_height, c.crop_width}}};
}

SegConfig seg_config_from_json(const nlohmann::json& j) {
  SegConfig c;
  c.base_channels = j.at("base_channels").get<int>();
  c.levels = j.at("levels").get<int>();
  c.num_classes = j.at("num_classes").get<int>();
  c.r = j.at("r").get<int>();
  c.lambda = j.at("lambda").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.pseudo_data_on = j.at("pseudo_data_on").get<bool>();
  c.uncertainty_on = j.at("uncertainty_on").get<bool>();
  c.distill_on = j.at("distill_on").get<bool>();
  c.hr_head_on = j.at("hr_head_on").get<bool>();
  c.hr_hidden_channels = j.at("hr_hidden_channels").get<int>();
  c.feature_level = j.at("feature_level").get<int>();
  const auto beta = j.at("beta");
  c.beta = {beta.at(0).get<std::int64_t>(), beta.at(1).get<std::int64_t>(), beta.at(2).get<std::int64_t>()};
  const auto crop = j.at("crop");
  c.crop_height = crop.at(0).get<std::int64_t>();
  c.crop_width = crop.at(1).get<std::int64_t>();
  return c;
}

}  // namespace

SegModel train_segmenter(const std::vector<SegCase>& dataset, const SegConfig& cfg, const SelfSRModel* teacher) {
  cfg.validate();
  if (dataset.empty()) throw DomainError("segmenter training needs at least one case");
  if (cfg.distill_on && teacher == nullptr) throw ConfigError("distillation needs a trained self-SR model");

  // Requirements and teacher features, per variant.
  std::vector<std::vector<torch::Tensor>> teacher_features(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& c = dataset[i];
    if (c.variants.empty()) throw DomainError("case " + c.id + " has no samples");
    for (const auto& s : c.variants) {
      require_same_shape(s.image.shape, c.variants.front().image.shape, "segmenter case " + c.id);
      if (cfg.uncertainty_on && !s.uncertainty_hr) throw ConfigError("uncertainty guidance needs a self-SR bundle for case " + c.id);
      if (cfg.hr_head_on && !s.hr_labels) throw ConfigError("HR head training needs pseudo HR labels for case " + c.id);
      if (cfg.distill_on) teacher_features[i].push_back(selfsr_features(s.image, s.labels, *teacher));
    }
  }

  SegModel model = make_seg_model(cfg, cfg.distill_on ? teacher->config.channels : 0);
  std::vector<torch::Tensor> params = model.net->parameters();
  if (cfg.distill_on) {
    const auto extra = model.adaptor->parameters();
    params.insert(params.end(), extra.begin(), extra.end());
  }
  torch::optim::Adam optimizer(params, torch::optim::AdamOptions(cfg.learning_rate));
  model.net->train();

  const std::int64_t per_epoch = (static_cast<std::int64_t>(dataset.size()) + cfg.batch_size - 1) / cfg.batch_size;
  const std::int64_t total_iters = per_epoch * cfg.epochs;
  std::int64_t iter = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);

    double epoch_sum = 0.0;
    std::int64_t epoch_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<torch::Tensor> imgs, labs, hr_labs, us, teach;
      SegBatch batch;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t ci = order[b];
        const auto& c = dataset[ci];
        std::uniform_int_distribution<std::size_t> variant(0, c.variants.size() - 1);
        const std::size_t vi = variant(rng);
        const auto& s = c.variants[vi];

        const auto h = s.image.shape.h, w = s.image.shape.w;
        Crop crop{};
        crop.h = cfg.crop_height > 0 ? std::min(cfg.crop_height, h) : h;
        crop.w = cfg.crop_width > 0 ? std::min(cfg.crop_width, w) : w;
        crop.y0 = std::uniform_int_distribution<std::int64_t>(0, h - crop.h)(rng);
        crop.x0 = std::uniform_int_distribution<std::int64_t>(0, w - crop.w)(rng);
        std::bernoulli_distribution coin(0.5);
        crop.flip_y = coin(rng);
        crop.flip_x = coin(rng);
        crop.scale = std::uniform_real_distribution<double>(0.9, 1.1)(rng);
        crop.shift = std::uniform_real_distribution<double>(-0.05, 0.05)(rng);

        imgs.push_back(apply_crop(to_tensor(s.image), crop, 1) * crop.scale + crop.shift);
        labs.push_back(apply_crop(to_tensor(s.labels), crop, 1));
        if (cfg.hr_head_on) hr_labs.push_back(apply_crop(to_tensor(*s.hr_labels), crop, 1));
        if (cfg.uncertainty_on) us.push_back(apply_crop(to_tensor(*s.uncertainty_hr), crop, 1));
        if (cfg.distill_on) teach.push_back(apply_crop(teacher_features[ci][vi], crop, 2));
        batch.offsets.push_back(s.offset);
      }
      batch.image = torch::stack(imgs).unsqueeze(1).contiguous();
      batch.labels = torch::stack(labs).contiguous();
      if (!hr_labs.empty()) batch.hr_labels = torch::stack(hr_labs).contiguous();
      if (!us.empty()) batch.uncertainty_hr = torch::stack(us).unsqueeze(1).contiguous();
      if (!teach.empty()) batch.teacher = torch::stack(teach).contiguous();

      for (auto& group : optimizer.param_groups()) {
        static_cast<torch::optim::AdamOptions&>(group.options()).lr(cosine_lr(cfg.learning_rate, iter, total_iters));
      }
      optimizer.zero_grad();
      const auto out = model.net->forward(batch.image);
      const auto loss = total_loss(out, batch, cfg.distill_on ? &model.adaptor : nullptr, cfg);
      const double total = loss.total.item<double>();
      if (!std::isfinite(total)) throw TrainingError("segmenter loss diverged at iteration " + std::to_string(iter));
      loss.total.backward();
      optimizer.step();

      model.trace.push_back({iter, epoch, loss.u_seg.item<double>(), loss.hr_seg.item<double>(), loss.corr.item<double>(),
                             loss.spatial.item<double>(), total});
      epoch_sum += total;
      ++epoch_batches;
      ++iter;
    }
    model.epoch_loss.push_back(epoch_sum / static_cast<double>(epoch_batches));
  }
  model.net->eval();
  if (cfg.distill_on) model.adaptor->eval();
  return model;
}

void save_seg_checkpoint(const SegModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  torch::save(model.net, (dir / "model.pt").string());
  int teacher_channels = 0;
  if (!model.adaptor.is_empty()) {
    torch::save(model.adaptor, (dir / "adaptor.pt").string());
    teacher_channels = static_cast<int>(model.adaptor->conv->options.out_channels());
  }

  std::ofstream csv(dir / "loss_trace.csv");
  if (!csv) throw IoError("cannot write " + (dir / "loss_trace.csv").string());
  csv << "iter,L_u_seg,L_HR_seg,L_corr,L_spatial,total\n";
  csv.precision(9);
  for (const auto& r : model.trace) {
    csv << r.iter << "," << r.u_seg << "," << r.hr_seg << "," << r.corr << "," << r.spatial << "," << r.total << "\n";
  }

  nlohmann::ordered_json j;
  j["kind"] = "segmenter";
  j["config"] = seg_config_json(model.config);
  j["seed"] = model.config.seed;
  j["teacher_channels"] = teacher_channels;
  j["epochs_completed"] = model.epoch_loss.size();
  j["epoch_loss"] = model.epoch_loss;
  j["loss_trace"] = "loss_trace.csv";
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

SegModel load_seg_checkpoint(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("missing segmenter checkpoint manifest: " + manifest_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest " + manifest_path.string() + ": " + e.what());
  }
  const SegConfig cfg = seg_config_from_json(j.at("config"));
  SegModel m = make_seg_model(cfg, j.at("teacher_channels").get<int>());
  try {
    torch::load(m.net, (dir / "model.pt").string());
    if (!m.adaptor.is_empty()) torch::load(m.adaptor, (dir / "adaptor.pt").string());
  } catch (const c10::Error& e) {
    throw IoError("cannot load segmenter checkpoint from " + dir.string() + ": " + e.what_without_backtrace());
  }
  m.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
  m.net->eval();
  return m;
}

SegPrediction infer_segmenter(const Volume& lr, const SegModel& model) {
  torch::NoGradGuard guard;
  auto net = model.net;
  net->eval();
  const auto out = net->forward(to_tensor(lr).unsqueeze(0).unsqueeze(0));
  SegPrediction p;
  p.lr = to_labels(out.lr_logits.argmax(1), lr.spacing, model.config.num_classes);
  if (out.hr_logits.defined()) {
    Spacing hr = lr.spacing;
    hr.z = lr.spacing.z / model.config.r;
    p.hr = to_labels(out.hr_logits.argmax(1), hr, model.config.num_classes);
  }
  return p;
}

}  // namespace rehrseg
