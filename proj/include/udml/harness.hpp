#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "udml/synthdata.hpp"
#include "udml/trainer.hpp"

namespace udml {

// Flat `key = value` experiment configuration. Every SyntheticSpec and
// TrainConfig field has a key; the remaining keys steer the commands.
struct ExperimentConfig {
  SyntheticSpec data;
  TrainConfig train;

  std::string preset = "default";  // default | asymmetric
  std::string data_dir;            // read split files from here instead of generating
  std::string run_dir;             // checkpoint directory read by sweep/calibrate
  std::size_t sweep_modality = 1;  // 1-based
  std::vector<double> sweep_sigmas{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12};
  std::vector<double> calib_sigmas{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  std::vector<std::string> compare_kinds{"clean", "salt", "gaussian"};
  std::vector<double> compare_epsilons{5, 10};
  std::vector<Strategy> compare_strategies{Strategy::Static, Strategy::Pe, Strategy::Udml};
  double corrupt_fraction = 0.5;
  std::vector<double> corrupt_weights;  // per modality; empty = uniform
  std::uint64_t eval_seed = 11;

  // Assigns one key. Throws ConfigError naming the key when it is unknown or
  // the value does not parse.
  void set(const std::string& key, const std::string& value);
  void validate() const;

  // Every key with its effective value, in a fixed order. Feeding the lines
  // back through parse_config reproduces this configuration.
  std::vector<std::pair<std::string, std::string>> echo() const;
};

// The two-modality spec with an easy modality A and a hard, warped modality B.
SyntheticSpec asymmetric_spec();

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Applies `key=value` overrides on top of `config`, in order.
void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& assignments);
std::string render_config(const ExperimentConfig& config);

DatasetSplits load_or_generate(const ExperimentConfig& config);

struct PlotSeries {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

// 800x500 line plot, linear axes, one polyline per series plus a legend.
void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<PlotSeries>& series);

void cmd_gen_data(const ExperimentConfig& config, const std::filesystem::path& out);

RunRecord cmd_train(const ExperimentConfig& config, const std::filesystem::path& out);

struct SweepRow {
  double sigma = 0.0;
  std::vector<double> w;     // UDML weights, mean over the test split
  std::vector<double> rho;
  std::vector<double> alpha;
  std::vector<double> pe_w;  // inverse-variance weights of the same model
  double acc_static = 0.0;
  double acc_pe = 0.0;
  double acc_udml = 0.0;
};

struct SweepTable {
  std::size_t modality = 0;  // 0-based
  std::vector<SweepRow> rows;
};

SweepTable cmd_sweep(const ExperimentConfig& config, const std::filesystem::path& out);

struct CompareRow {
  Strategy method;
  std::string noise;
  double epsilon = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

std::vector<CompareRow> cmd_compare(const ExperimentConfig& config, const std::filesystem::path& out);

struct CalibrationRow {
  double sigma = 0.0;
  std::size_t modality = 0;  // 0-based
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

std::vector<CalibrationRow> cmd_calibrate(const ExperimentConfig& config, const std::filesystem::path& out);

// Loads `dir`/model.ckpt into a model shaped by `config` and `data`.
UdmlModel load_model(const ExperimentConfig& config, const DatasetSplits& data, const std::filesystem::path& dir);

}  // namespace udml
