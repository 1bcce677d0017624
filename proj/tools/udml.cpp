#include <CLI11.hpp>
#include <fmt/format.h>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include "udml/errors.hpp"
#include "udml/harness.hpp"

namespace {

constexpr int kConfigExit = 2;
constexpr int kIoExit = 3;

struct Options {
  std::string config;
  std::string out = ".";
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool has_seed = false;
};

udml::ExperimentConfig resolve(const Options& o, bool data_command) {
  udml::ExperimentConfig cfg = o.config.empty() ? udml::ExperimentConfig{} : udml::load_config(o.config);
  udml::apply_overrides(cfg, o.sets);
  if (o.has_seed) cfg.set(data_command ? "data_seed" : "seed", std::to_string(o.seed));
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unbiased dynamic multimodal learning experiments"};
  app.require_subcommand(1);
  Options o;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "flat key = value config file");
    sub->add_option("--out", o.out, "output directory");
    sub->add_option("--seed", o.seed, "seed (data_seed for gen-data)")->each([&](const std::string&) {
      o.has_seed = true;
    });
    sub->add_option("--set", o.sets, "key=value override (repeatable)")->take_all();
  };
  auto* gen = app.add_subcommand("gen-data", "write synthetic train/val/test splits");
  auto* train = app.add_subcommand("train", "train one model");
  auto* sweep = app.add_subcommand("sweep", "noise sweep on one modality of a trained model");
  auto* compare = app.add_subcommand("compare", "compare fusion strategies under corruption");
  auto* calibrate = app.add_subcommand("calibrate", "noise-estimator calibration of a trained model");
  for (auto* sub : {gen, train, sweep, compare, calibrate}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kConfigExit;
  }

  try {
    const std::filesystem::path out(o.out);
    if (gen->parsed()) {
      udml::cmd_gen_data(resolve(o, true), out);
    } else if (train->parsed()) {
      const auto record = udml::cmd_train(resolve(o, false), out);
      fmt::print("test_acc={:.4f} test_f1={:.4f}\n", record.final_test.accuracy, record.final_test.macro_f1);
    } else if (sweep->parsed()) {
      udml::cmd_sweep(resolve(o, false), out);
    } else if (compare->parsed()) {
      udml::cmd_compare(resolve(o, false), out);
    } else if (calibrate->parsed()) {
      udml::cmd_calibrate(resolve(o, false), out);
    }
  } catch (const udml::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfigExit;
  } catch (const udml::IoError& e) {
    fmt::print(stderr, "i/o error: {}\n", e.what());
    return kIoExit;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
