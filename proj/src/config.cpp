#include "rehrseg/config.hpp"

#include <cstdio>
#include <fstream>

#include "rehrseg/errors.hpp"

namespace rehrseg {

using nlohmann::json;
using nlohmann::ordered_json;

void Config::validate() const {
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (r < 2) throw ConfigError("r must be >= 2, got " + std::to_string(r));
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (phantom.n_cases < 1) throw ConfigError("phantom.n_cases must be positive");
  if (phantom.n_val < 0 || phantom.n_val >= phantom.n_cases) throw ConfigError("phantom.n_val must lie in [0, n_cases)");
  if (phantom.size % r != 0) throw ConfigError("phantom.size must be a multiple of r");
  if (selfsr.patch.lr_depth < 4 || selfsr.patch.height < 4 || selfsr.patch.width < 4) throw ConfigError("selfsr.patch extents must be >= 4");
  if (selfsr.patch.lr_depth_stride < 1 || selfsr.patch.inplane_stride < 1) throw ConfigError("selfsr.patch strides must be positive");
  for (double l : seg.lambda_sweep) {
    if (!(l >= 0.0)) throw ConfigError("seg.lambda_sweep values must be >= 0");
  }
  if (seg.run_name.empty()) throw ConfigError("seg.run_name must not be empty");
  if (eval.split != "val" && eval.split != "train" && eval.split != "all") throw ConfigError("eval.split must be val, train or all");
  selfsr_config().validate();
  seg_config(seg.lambda).validate();
}

SelfSRConfig Config::selfsr_config() const {
  SelfSRConfig c;
  c.r = r;
  c.channels = selfsr.channels;
  c.merge_channels = selfsr.merge_channels;
  c.branches = selfsr.branches;
  c.num_classes = num_classes;
  c.iters_total = selfsr.iters_total;
  c.iters_uncertainty_on = selfsr.iters_uncertainty_on;
  c.batch_size = selfsr.batch_size;
  c.learning_rate = selfsr.learning_rate;
  c.seed = seed;
  c.backbone_init = selfsr.backbone_init;
  return c;
}

SegConfig Config::seg_config(double lambda) const {
  SegConfig c;
  c.base_channels = seg.base_channels;
  c.levels = seg.levels;
  c.num_classes = num_classes;
  c.r = r;
  c.lambda = lambda;
  c.epochs = seg.epochs;
  c.batch_size = seg.batch_size;
  c.learning_rate = seg.learning_rate;
  c.seed = seed;
  c.pseudo_data_on = seg.pseudo_data;
  c.uncertainty_on = seg.uncertainty;
  c.distill_on = seg.distill;
  c.hr_head_on = seg.hr_head;
  c.hr_hidden_channels = seg.hr_hidden_channels;
  c.feature_level = seg.feature_level;
  c.beta = seg.beta;
  c.crop_height = seg.crop_height;
  c.crop_width = seg.crop_width;
  return c;
}

BenchmarkOptions Config::benchmark_options() const {
  BenchmarkOptions o;
  o.n_cases = phantom.n_cases;
  o.n_val = phantom.n_val;
  o.r = r;
  o.seed = seed;
  o.phantom.size = phantom.size;
  o.phantom.n_blobs = phantom.n_blobs;
  o.phantom.texture_amplitude = phantom.texture_amplitude;
  o.phantom.min_radius = phantom.min_radius;
  o.phantom.max_radius = phantom.max_radius;
  return o;
}

std::vector<std::pair<std::string, double>> Config::seg_runs() const {
  if (seg.lambda_sweep.empty()) return {{seg.run_name, seg.lambda}};
  std::vector<std::pair<std::string, double>> runs;
  for (double l : seg.lambda_sweep) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_lambda%g", seg.run_name.c_str(), l);
    runs.emplace_back(buf, l);
  }
  return runs;
}

ordered_json to_json(const Config& c) {
  ordered_json j;
  j["output_dir"] = c.output_dir;
  j["seed"] = c.seed;
  j["r"] = c.r;
  j["num_classes"] = c.num_classes;
  j["phantom"] = {{"n_cases", c.phantom.n_cases},
                  {"n_val", c.phantom.n_val},
                  {"size", c.phantom.size},
                  {"n_blobs", c.phantom.n_blobs},
                  {"texture_amplitude", c.phantom.texture_amplitude},
                  {"min_radius", c.phantom.min_radius},
                  {"max_radius", c.phantom.max_radius}};
  const auto& p = c.selfsr.patch;
  j["selfsr"] = {{"channels", c.selfsr.channels},
                 {"merge_channels", c.selfsr.merge_channels},
                 {"branches", c.selfsr.branches},
                 {"iters_total", c.selfsr.iters_total},
                 {"iters_uncertainty_on", c.selfsr.iters_uncertainty_on},
                 {"batch_size", c.selfsr.batch_size},
                 {"learning_rate", c.selfsr.learning_rate},
                 {"backbone_init", c.selfsr.backbone_init},
                 {"patch",
                  {{"lr_depth", p.lr_depth},
                   {"height", p.height},
                   {"width", p.width},
                   {"lr_depth_stride", p.lr_depth_stride},
                   {"inplane_stride", p.inplane_stride},
                   {"include_y_axis", p.include_y_axis}}},
                 {"resume", c.selfsr.resume}};
  j["seg"] = {{"base_channels", c.seg.base_channels},
              {"levels", c.seg.levels},
              {"lambda", c.seg.lambda},
              {"lambda_sweep", c.seg.lambda_sweep},
              {"epochs", c.seg.epochs},
              {"batch_size", c.seg.batch_size},
              {"learning_rate", c.seg.learning_rate},
              {"pseudo_data", c.seg.pseudo_data},
              {"uncertainty", c.seg.uncertainty},
              {"distill", c.seg.distill},
              {"hr_head", c.seg.hr_head},
              {"hr_hidden_channels", c.seg.hr_hidden_channels},
              {"feature_level", c.seg.feature_level},
              {"beta", {c.seg.beta.z, c.seg.beta.y, c.seg.beta.x}},
              {"crop_height", c.seg.crop_height},
              {"crop_width", c.seg.crop_width},
              {"run_name", c.seg.run_name}};
  j["infer"] = {{"case", c.infer.case_id}, {"run", c.infer.run}};
  j["eval"] = {{"run", c.eval.run}, {"split", c.eval.split}};
  return j;
}

namespace {

std::string kind(const json& v) {
  if (v.is_boolean()) return "boolean";
  if (v.is_number_float()) return "number";
  if (v.is_number()) return "integer";
  if (v.is_string()) return "string";
  if (v.is_array()) return "array";
  if (v.is_object()) return "object";
  return "null";
}

bool compatible(const json& value, const json& def) {
  if (def.is_boolean()) return value.is_boolean();
  if (def.is_number_float()) return value.is_number();
  if (def.is_number_unsigned()) return value.is_number_unsigned() || (value.is_number_integer() && value.get<std::int64_t>() >= 0);
  if (def.is_number_integer()) return value.is_number_integer();
  if (def.is_string()) return value.is_string();
  return false;
}

void check_against(const json& doc, const json& def, const std::string& path) {
  if (!doc.is_object()) throw ConfigError("config " + (path.empty() ? std::string("root") : path) + " must be an object");
  for (const auto& [key, value] : doc.items()) {
    const std::string name = path.empty() ? key : path + "." + key;
    if (!def.contains(key)) throw ConfigError("unknown config key: " + name);
    const auto& d = def.at(key);
    if (d.is_object()) {
      check_against(value, d, name);
    } else if (d.is_array()) {
      if (!value.is_array()) throw ConfigError("config key " + name + " expects array, got " + kind(value));
      if (!d.empty() && value.size() != d.size()) {
        throw ConfigError("config key " + name + " expects " + std::to_string(d.size()) + " elements");
      }
      for (const auto& e : value) {
        const bool ok = d.empty() ? e.is_number() : compatible(e, d.front());
        if (!ok) throw ConfigError("config key " + name + " has an element of the wrong type (" + kind(e) + ")");
      }
    } else if (!compatible(value, d)) {
      throw ConfigError("config key " + name + " expects " + kind(d) + ", got " + kind(value));
    }
  }
}

}  // namespace

Config config_from_json(const json& doc) {
  const json defaults = to_json(Config{});
  check_against(doc, defaults, "");
  json j = defaults;
  j.merge_patch(doc);

  Config c;
  c.output_dir = j["output_dir"].get<std::string>();
  c.seed = j["seed"].get<std::uint64_t>();
  c.r = j["r"].get<int>();
  c.num_classes = j["num_classes"].get<int>();
  const auto& ph = j["phantom"];
  c.phantom.n_cases = ph["n_cases"].get<int>();
  c.phantom.n_val = ph["n_val"].get<int>();
  c.phantom.size = ph["size"].get<std::int64_t>();
  c.phantom.n_blobs = ph["n_blobs"].get<int>();
  c.phantom.texture_amplitude = ph["texture_amplitude"].get<double>();
  c.phantom.min_radius = ph["min_radius"].get<double>();
  c.phantom.max_radius = ph["max_radius"].get<double>();
  const auto& sr = j["selfsr"];
  c.selfsr.channels = sr["channels"].get<int>();
  c.selfsr.merge_channels = sr["merge_channels"].get<int>();
  c.selfsr.branches = sr["branches"].get<int>();
  c.selfsr.iters_total = sr["iters_total"].get<std::int64_t>();
  c.selfsr.iters_uncertainty_on = sr["iters_uncertainty_on"].get<std::int64_t>();
  c.selfsr.batch_size = sr["batch_size"].get<int>();
  c.selfsr.learning_rate = sr["learning_rate"].get<double>();
  c.selfsr.backbone_init = sr["backbone_init"].get<std::string>();
  c.selfsr.resume = sr["resume"].get<bool>();
  const auto& p = sr["patch"];
  c.selfsr.patch.lr_depth = p["lr_depth"].get<std::int64_t>();
  c.selfsr.patch.height = p["height"].get<std::int64_t>();
  c.selfsr.patch.width = p["width"].get<std::int64_t>();
  c.selfsr.patch.lr_depth_stride = p["lr_depth_stride"].get<std::int64_t>();
  c.selfsr.patch.inplane_stride = p["inplane_stride"].get<std::int64_t>();
  c.selfsr.patch.include_y_axis = p["include_y_axis"].get<bool>();
  const auto& s = j["seg"];
  c.seg.base_channels = s["base_channels"].get<int>();
  c.seg.levels = s["levels"].get<int>();
  c.seg.lambda = s["lambda"].get<double>();
  c.seg.lambda_sweep = s["lambda_sweep"].get<std::vector<double>>();
  c.seg.epochs = s["epochs"].get<int>();
  c.seg.batch_size = s["batch_size"].get<int>();
  c.seg.learning_rate = s["learning_rate"].get<double>();
  c.seg.pseudo_data = s["pseudo_data"].get<bool>();
  c.seg.uncertainty = s["uncertainty"].get<bool>();
  c.seg.distill = s["distill"].get<bool>();
  c.seg.hr_head = s["hr_head"].get<bool>();
  c.seg.hr_hidden_channels = s["hr_hidden_channels"].get<int>();
  c.seg.feature_level = s["feature_level"].get<int>();
  const auto beta = s["beta"].get<std::vector<std::int64_t>>();
  c.seg.beta = {beta[0], beta[1], beta[2]};
  c.seg.crop_height = s["crop_height"].get<std::int64_t>();
  c.seg.crop_width = s["crop_width"].get<std::int64_t>();
  c.seg.run_name = s["run_name"].get<std::string>();
  c.infer.case_id = j["infer"]["case"].get<std::string>();
  c.infer.run = j["infer"]["run"].get<std::string>();
  c.eval.run = j["eval"]["run"].get<std::string>();
  c.eval.split = j["eval"]["split"].get<std::string>();
  c.validate();
  return c;
}

json apply_overrides(json doc, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + o);
    const std::string key = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json* node = &doc;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError("malformed override key: " + key);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      json& child = (*node)[part];
      if (child.is_null()) child = json::object();
      if (!child.is_object()) throw ConfigError("override path " + key + " crosses a non-object value");
      node = &child;
      start = dot + 1;
    }
  }
  return doc;
}

Config load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return config_from_json(apply_overrides(std::move(doc), overrides));
}

}  // namespace rehrseg
