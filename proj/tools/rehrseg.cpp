// Command-line front end: one subcommand per pipeline stage.
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rehrseg/errors.hpp"
#include "rehrseg/pipeline.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation with self-supervised through-plane super-resolution"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  long long seed = -1;

  const std::vector<std::pair<std::string, std::string>> stages = {
      {"phantom", "generate the synthetic benchmark"},
      {"train-sr", "train the self-supervised SR model"},
      {"superres", "super-resolve every case and write the pseudo-LR set"},
      {"train-seg", "train the segmenter (one run per lambda)"},
      {"infer", "predict LR and HR masks for infer.case"},
      {"eval", "score a segmenter run and the SR outputs"}};
  for (const auto& [name, help] : stages) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--seed", seed, "override the config seed")->check(CLI::NonNegativeNumber);
    sub->add_option("--override", overrides, "key=value (dotted key path), repeatable");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (seed >= 0) overrides.push_back("seed=" + std::to_string(seed));
    const auto cfg = rehrseg::load_config(config_path, overrides);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "phantom") {
      rehrseg::cmd_phantom(cfg);
    } else if (cmd == "train-sr") {
      rehrseg::cmd_train_sr(cfg);
    } else if (cmd == "superres") {
      rehrseg::cmd_superres(cfg);
    } else if (cmd == "train-seg") {
      rehrseg::cmd_train_seg(cfg);
    } else if (cmd == "infer") {
      rehrseg::cmd_infer(cfg);
    } else {
      rehrseg::cmd_eval(cfg);
    }
  } catch (const rehrseg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
