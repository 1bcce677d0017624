#include "udml/harness.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "udml/errors.hpp"

namespace udml {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("key '" + key + "': expected true|false, got '" + v + "'");
}

std::vector<double> to_doubles(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split_list(v)) out.push_back(to_double(key, item));
  return out;
}

std::string num(double v) { return fmt::format("{}", v); }
std::string flag(bool v) { return v ? "true" : "false"; }

std::string nums(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + num(v[i]);
  return out;
}

// "m3.separation" -> (2, "separation"); nullopt-like (npos) for other keys.
std::pair<std::size_t, std::string> modality_key(const std::string& key) {
  if (key.size() < 3 || key[0] != 'm') return {std::string::npos, ""};
  const auto dot = key.find('.');
  if (dot == std::string::npos || dot == 1) return {std::string::npos, ""};
  std::size_t idx = 0;
  const auto [ptr, ec] = std::from_chars(key.data() + 1, key.data() + dot, idx);
  if (ec != std::errc() || ptr != key.data() + dot || idx == 0) return {std::string::npos, ""};
  return {idx - 1, key.substr(dot + 1)};
}

constexpr const char* kCheckpoint = "model.ckpt";

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << text;
  if (!os) throw IoError("short write to " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

// Independent, reproducible stream for one evaluation cell.
Rng cell_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq s{seed, a, b};
  return Rng(s);
}

}  // namespace

SyntheticSpec asymmetric_spec() {
  SyntheticSpec spec;
  spec.modalities = {ModalitySpec{20, 8.0, false, 1.0}, ModalitySpec{20, 2.0, true, 1.0}};
  return spec;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  const std::string& v = value;
  TrainConfig& t = train;
  if (key == "preset") {
    if (v == "default") {
      data.modalities = SyntheticSpec{}.modalities;
    } else if (v == "asymmetric") {
      data.modalities = asymmetric_spec().modalities;
    } else {
      throw ConfigError("key 'preset': expected default|asymmetric, got '" + v + "'");
    }
    preset = v;
  } else if (key == "num_classes") {
    data.num_classes = to_uint(key, v);
  } else if (key == "modalities") {
    const auto m = to_uint(key, v);
    if (m == 0) throw ConfigError("key 'modalities': must be positive");
    data.modalities.resize(m);
  } else if (key == "n_train") {
    data.n_train = to_uint(key, v);
  } else if (key == "n_val") {
    data.n_val = to_uint(key, v);
  } else if (key == "n_test") {
    data.n_test = to_uint(key, v);
  } else if (key == "data_seed") {
    data.seed = to_uint(key, v);
  } else if (key == "epochs") {
    t.epochs = to_uint(key, v);
  } else if (key == "stage1_fraction") {
    t.stage1_fraction = to_double(key, v);
  } else if (key == "batch_size") {
    t.batch_size = to_uint(key, v);
  } else if (key == "optimizer") {
    try {
      t.optimizer = nn::parse_optimizer_kind(v);
    } catch (const std::exception&) {
      throw ConfigError("key 'optimizer': expected sgd|adam, got '" + v + "'");
    }
  } else if (key == "lr") {
    t.lr = to_double(key, v);
  } else if (key == "momentum") {
    t.momentum = to_double(key, v);
  } else if (key == "weight_decay") {
    t.weight_decay = to_double(key, v);
  } else if (key == "est_lr") {
    t.est_lr = to_double(key, v);
  } else if (key == "seed") {
    t.seed = to_uint(key, v);
  } else if (key == "strategy") {
    t.strategy = parse_strategy(v);
  } else if (key == "nue_off") {
    t.ablations.nue_off = to_bool(key, v);
  } else if (key == "mc_off") {
    t.ablations.mc_off = to_bool(key, v);
  } else if (key == "pos_off") {
    t.ablations.pos_off = to_bool(key, v);
  } else if (key == "noise_grid") {
    t.noise_grid = NoiseGrid(to_doubles(key, v));
  } else if (key == "alpha_mode") {
    t.alpha_mode = parse_alpha_mode(v);
  } else if (key == "alpha_decay") {
    t.alpha_decay = to_double(key, v);
  } else if (key == "est_grad_scope") {
    t.est_grad_scope = v;
  } else if (key == "eval_sample") {
    t.eval_sample = to_bool(key, v);
  } else if (key == "stage2_dynamic_task") {
    t.stage2_dynamic_task = to_bool(key, v);
  } else if (key == "stage2_noisy_task") {
    t.stage2_noisy_task = to_bool(key, v);
  } else if (key == "estimator_input") {
    t.estimator_input = parse_estimator_input(v);
  } else if (key == "hidden") {
    t.hidden = to_uint(key, v);
  } else if (key == "embed_dim") {
    t.embed_dim = to_uint(key, v);
  } else if (key == "trunk_depth") {
    t.trunk_depth = to_uint(key, v);
  } else if (key == "est_hidden") {
    t.est_hidden = to_uint(key, v);
  } else if (key == "plateau_patience") {
    t.plateau_patience = to_uint(key, v);
  } else if (key == "data_dir") {
    data_dir = v;
  } else if (key == "run_dir") {
    run_dir = v;
  } else if (key == "sweep_modality") {
    sweep_modality = to_uint(key, v);
  } else if (key == "sweep_sigmas") {
    sweep_sigmas = to_doubles(key, v);
  } else if (key == "calib_sigmas") {
    calib_sigmas = to_doubles(key, v);
  } else if (key == "compare_kinds") {
    compare_kinds = split_list(v);
  } else if (key == "compare_epsilons") {
    compare_epsilons = to_doubles(key, v);
  } else if (key == "compare_strategies") {
    compare_strategies.clear();
    for (const auto& s : split_list(v)) compare_strategies.push_back(parse_strategy(s));
  } else if (key == "corrupt_fraction") {
    corrupt_fraction = to_double(key, v);
  } else if (key == "corrupt_weights") {
    corrupt_weights = to_doubles(key, v);
  } else if (key == "eval_seed") {
    eval_seed = to_uint(key, v);
  } else {
    const auto [idx, field] = modality_key(key);
    if (idx == std::string::npos) throw ConfigError("unknown key '" + key + "'");
    if (idx >= data.modalities.size()) {
      throw ConfigError("key '" + key + "': only " + std::to_string(data.modalities.size()) + " modalities configured");
    }
    ModalitySpec& ms = data.modalities[idx];
    if (field == "feat_dim") {
      ms.feat_dim = to_uint(key, v);
    } else if (field == "separation") {
      ms.separation = to_double(key, v);
    } else if (field == "warp") {
      ms.warp = to_bool(key, v);
    } else if (field == "intra_class_std") {
      ms.intra_class_std = to_double(key, v);
    } else {
      throw ConfigError("unknown key '" + key + "'");
    }
  }
}

void ExperimentConfig::validate() const {
  data.validate();
  train.validate();
  const std::size_t m = data.modalities.size();
  if (sweep_modality == 0 || sweep_modality > m) {
    throw ConfigError("sweep_modality must lie in 1.." + std::to_string(m));
  }
  auto increasing = [](const std::vector<double>& v) {
    for (std::size_t i = 1; i < v.size(); ++i) {
      if (!(v[i] > v[i - 1])) return false;
    }
    return !v.empty() && v.front() >= 0.0;
  };
  if (!increasing(sweep_sigmas)) throw ConfigError("sweep_sigmas must be nonnegative and strictly increasing");
  if (!increasing(calib_sigmas)) throw ConfigError("calib_sigmas must be nonnegative and strictly increasing");
  for (const auto& k : compare_kinds) {
    if (k != "clean") parse_corruption_kind(k);
  }
  for (double e : compare_epsilons) {
    if (e < 0.0) throw ConfigError("compare_epsilons must be nonnegative");
  }
  if (!(corrupt_fraction >= 0.0 && corrupt_fraction <= 1.0)) throw ConfigError("corrupt_fraction must lie in [0,1]");
  if (!corrupt_weights.empty()) {
    if (corrupt_weights.size() != m) throw ConfigError("corrupt_weights needs one weight per modality");
    double total = 0.0;
    for (double w : corrupt_weights) {
      if (w < 0.0) throw ConfigError("corrupt_weights must be nonnegative");
      total += w;
    }
    if (!(total > 0.0)) throw ConfigError("corrupt_weights must not all be zero");
  }
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::echo() const {
  std::vector<std::pair<std::string, std::string>> out;
  auto add = [&](std::string k, std::string v) { out.emplace_back(std::move(k), std::move(v)); };
  const TrainConfig& t = train;
  add("preset", preset);
  add("num_classes", std::to_string(data.num_classes));
  add("modalities", std::to_string(data.modalities.size()));
  for (std::size_t i = 0; i < data.modalities.size(); ++i) {
    const auto& ms = data.modalities[i];
    const std::string p = "m" + std::to_string(i + 1) + ".";
    add(p + "feat_dim", std::to_string(ms.feat_dim));
    add(p + "separation", num(ms.separation));
    add(p + "warp", flag(ms.warp));
    add(p + "intra_class_std", num(ms.intra_class_std));
  }
  add("n_train", std::to_string(data.n_train));
  add("n_val", std::to_string(data.n_val));
  add("n_test", std::to_string(data.n_test));
  add("data_seed", std::to_string(data.seed));
  add("epochs", std::to_string(t.epochs));
  add("stage1_fraction", num(t.stage1_fraction));
  add("batch_size", std::to_string(t.batch_size));
  add("optimizer", nn::to_string(t.optimizer));
  add("lr", num(t.lr));
  add("momentum", num(t.momentum));
  add("weight_decay", num(t.weight_decay));
  add("est_lr", num(t.est_lr));
  add("seed", std::to_string(t.seed));
  add("strategy", to_string(t.strategy));
  add("nue_off", flag(t.ablations.nue_off));
  add("mc_off", flag(t.ablations.mc_off));
  add("pos_off", flag(t.ablations.pos_off));
  add("noise_grid", nums(t.noise_grid.levels()));
  add("alpha_mode", to_string(t.alpha_mode));
  add("alpha_decay", num(t.alpha_decay));
  add("est_grad_scope", t.est_grad_scope);
  add("eval_sample", flag(t.eval_sample));
  add("stage2_dynamic_task", flag(t.stage2_dynamic_task));
  add("stage2_noisy_task", flag(t.stage2_noisy_task));
  add("estimator_input", to_string(t.estimator_input));
  add("hidden", std::to_string(t.hidden));
  add("embed_dim", std::to_string(t.embed_dim));
  add("trunk_depth", std::to_string(t.trunk_depth));
  add("est_hidden", std::to_string(t.est_hidden));
  add("plateau_patience", std::to_string(t.plateau_patience));
  add("data_dir", data_dir);
  add("run_dir", run_dir);
  add("sweep_modality", std::to_string(sweep_modality));
  add("sweep_sigmas", nums(sweep_sigmas));
  add("calib_sigmas", nums(calib_sigmas));
  std::string kinds;
  for (std::size_t i = 0; i < compare_kinds.size(); ++i) kinds += (i ? "," : "") + compare_kinds[i];
  add("compare_kinds", kinds);
  add("compare_epsilons", nums(compare_epsilons));
  std::string strategies;
  for (std::size_t i = 0; i < compare_strategies.size(); ++i) {
    strategies += (i ? "," : "") + to_string(compare_strategies[i]);
  }
  add("compare_strategies", strategies);
  add("corrupt_fraction", num(corrupt_fraction));
  add("corrupt_weights", nums(corrupt_weights));
  add("eval_seed", std::to_string(eval_seed));
  return out;
}

ExperimentConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(fmt::format("line {}: expected 'key = value', got '{}'", lineno, line));
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(fmt::format("line {}: missing key", lineno));
    entries.emplace_back(key, trim(line.substr(eq + 1)));
  }
  // preset and modality count reshape the spec, so they apply before the
  // per-modality keys regardless of where they appear.
  ExperimentConfig config;
  for (const char* first : {"preset", "modalities"}) {
    for (const auto& [k, v] : entries) {
      if (k == first) config.set(k, v);
    }
  }
  for (const auto& [k, v] : entries) {
    if (k != "preset" && k != "modalities") config.set(k, v);
  }
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

void apply_overrides(ExperimentConfig& config, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + a + "' is not key=value");
    config.set(trim(a.substr(0, eq)), trim(a.substr(eq + 1)));
  }
}

std::string render_config(const ExperimentConfig& config) {
  std::string out;
  for (const auto& [k, v] : config.echo()) out += k + " = " + v + "\n";
  return out;
}

DatasetSplits load_or_generate(const ExperimentConfig& config) {
  if (config.data_dir.empty()) return generate(config.data);
  const fs::path dir(config.data_dir);
  DatasetSplits out;
  LoadedSplit train = read_dataset(dir / "train.csv");
  LoadedSplit val = read_dataset(dir / "val.csv");
  LoadedSplit test = read_dataset(dir / "test.csv");
  if (val.num_classes != train.num_classes || test.num_classes != train.num_classes) {
    throw IoError("split files in " + dir.string() + " disagree on the number of classes");
  }
  out.num_classes = train.num_classes;
  out.train = std::move(train.batch);
  out.val = std::move(val.batch);
  out.test = std::move(test.batch);
  return out;
}

void write_line_plot(const fs::path& path, const std::string& title, const std::string& x_label,
                     const std::string& y_label, const std::vector<PlotSeries>& series) {
  constexpr double W = 800, H = 500, left = 70, right = 170, top = 40, bottom = 60;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      if (first) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        first = false;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  y0 = std::min(y0, 0.0);
  if (x1 <= x0) x1 = x0 + 1;
  if (y1 <= y0) y1 = y0 + 1;
  const double pw = W - left - right, ph = H - top - bottom;
  auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * ph; };
  auto esc = [](const std::string& s) {
    std::string o;
    for (char c : s) {
      if (c == '&') o += "&amp;";
      else if (c == '<') o += "&lt;";
      else if (c == '>') o += "&gt;";
      else o += c;
    }
    return o;
  };
  static const char* colors[] = {"#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::string svg;
  svg += fmt::format(
      "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect x=\"0\" y=\"0\" width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n",
      W, H);
  svg += fmt::format("<text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n", left + pw / 2,
                     esc(title));
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left, top + ph, left + pw);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top, top + ph);
  for (int i = 0; i <= 5; ++i) {
    const double xv = x0 + (x1 - x0) * i / 5.0, yv = y0 + (y1 - y0) * i / 5.0;
    svg += fmt::format("<line x1=\"{0:.2f}\" y1=\"{1}\" x2=\"{0:.2f}\" y2=\"{2}\" stroke=\"black\"/>\n", px(xv),
                       top + ph, top + ph + 5);
    svg += fmt::format("<text x=\"{:.2f}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{:.3g}</text>\n", px(xv),
                       top + ph + 20, xv);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2}\" y2=\"{1:.2f}\" stroke=\"black\"/>\n", left - 5,
                       py(yv), left);
    svg += fmt::format("<text x=\"{}\" y=\"{:.2f}\" font-size=\"12\" text-anchor=\"end\">{:.3g}</text>\n", left - 8,
                       py(yv) + 4, yv);
  }
  svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n", left + pw / 2,
                     H - 15, esc(x_label));
  svg += fmt::format(
      "<text x=\"18\" y=\"{0}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {0})\">{1}</text>\n",
      top + ph / 2, esc(y_label));
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = colors[k % std::size(colors)];
    std::string pts;
    for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
      pts += fmt::format("{}{:.2f},{:.2f}", i ? " " : "", px(s.x[i]), py(s.y[i]));
    }
    svg += fmt::format("<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n", color, pts);
    const double ly = top + 10 + 20.0 * static_cast<double>(k);
    svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                       left + pw + 15, ly, left + pw + 40, color);
    svg += fmt::format("<text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n", left + pw + 45, ly + 4, esc(s.name));
  }
  svg += "</svg>\n";
  write_text(path, svg);
}

void cmd_gen_data(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const DatasetSplits d = generate(config.data);
  ensure_dir(out);
  write_dataset(out / "train.csv", d.train, d.num_classes);
  write_dataset(out / "val.csv", d.val, d.num_classes);
  write_dataset(out / "test.csv", d.test, d.num_classes);
  write_text(out / "config.txt", render_config(config));
}

namespace {

RunRecord train_into(const ExperimentConfig& config, const DatasetSplits& data, const fs::path& out) {
  ensure_dir(out);
  TrainResult result = train(config.train, data);
  result.record.config_echo = config.echo();
  result.record.checkpoint = kCheckpoint;  // relative to the run directory
  result.model.save(out / kCheckpoint);
  write_run_csv(out / "run.csv", result.record);
  write_summary(out / "summary.txt", result.record);
  write_text(out / "config.txt", render_config(config));
  return result.record;
}

fs::path run_directory(const ExperimentConfig& config, const fs::path& out) {
  return config.run_dir.empty() ? out : fs::path(config.run_dir);
}

}  // namespace

RunRecord cmd_train(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  return train_into(config, load_or_generate(config), out);
}

UdmlModel load_model(const ExperimentConfig& config, const DatasetSplits& data, const fs::path& dir) {
  std::vector<std::size_t> dims;
  for (const auto& f : data.train.features) dims.push_back(f.size(1));
  UdmlModel model(dims, data.num_classes, config.train);
  const fs::path ckpt = dir / kCheckpoint;
  if (!fs::exists(ckpt)) throw IoError("no checkpoint at " + ckpt.string());
  model.load(ckpt);
  return model;
}

SweepTable cmd_sweep(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const DatasetSplits data = load_or_generate(config);
  const UdmlModel model = load_model(config, data, run_directory(config, out));
  const std::size_t m = config.sweep_modality - 1;
  const std::size_t mods = model.modalities();

  SweepTable table;
  table.modality = m;
  for (std::size_t i = 0; i < config.sweep_sigmas.size(); ++i) {
    const double sigma = config.sweep_sigmas[i];
    Rng rng = cell_rng(config.eval_seed, 1, i);
    const ModalityBatch noisy = corrupt_modality(data.test, m, CorruptionKind::Gaussian, sigma, {}, rng);
    const EvalMetrics st = evaluate(model, noisy, Strategy::Static);
    const EvalMetrics pe = evaluate(model, noisy, Strategy::Pe);
    const EvalMetrics ud = evaluate(model, noisy, Strategy::Udml);
    table.rows.push_back(
        {sigma, ud.mean_w, ud.mean_rho, model.dependency.alpha(), ud.mean_pe_w, st.accuracy, pe.accuracy, ud.accuracy});
  }

  ensure_dir(out);
  std::string csv = "sigma";
  for (const char* col : {"w", "rho", "alpha"}) {
    for (std::size_t k = 0; k < mods; ++k) csv += fmt::format(",{}_m{}", col, k + 1);
  }
  csv += ",acc_static,acc_pe,acc_udml\n";
  for (const auto& r : table.rows) {
    csv += fmt::format("{:.10g}", r.sigma);
    for (const auto* v : {&r.w, &r.rho, &r.alpha}) {
      for (double x : *v) csv += fmt::format(",{:.10g}", x);
    }
    csv += fmt::format(",{:.10g},{:.10g},{:.10g}\n", r.acc_static, r.acc_pe, r.acc_udml);
  }
  write_text(out / "sweep.csv", csv);

  std::vector<PlotSeries> series;
  for (std::size_t k = 0; k < mods; ++k) {
    PlotSeries s{fmt::format("UDML w_m{}", k + 1), {}, {}};
    for (const auto& r : table.rows) {
      s.x.push_back(r.sigma);
      s.y.push_back(r.w[k]);
    }
    series.push_back(std::move(s));
  }
  PlotSeries pe{fmt::format("PE w_m{}", m + 1), {}, {}};
  for (const auto& r : table.rows) {
    pe.x.push_back(r.sigma);
    pe.y.push_back(r.pe_w[m]);
  }
  series.push_back(std::move(pe));
  write_line_plot(out / "sweep.svg", fmt::format("Fusion weights, Gaussian noise on modality {}", m + 1), "sigma",
                  "mean weight", series);
  return table;
}

std::vector<CompareRow> cmd_compare(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const DatasetSplits data = load_or_generate(config);
  ensure_dir(out);

  std::vector<FeatureStats> stats;
  for (const auto& f : data.train.features) stats.push_back(feature_stats(f));

  struct Setting {
    std::string noise;
    double epsilon;
    ModalityBatch batch;
  };
  std::vector<Setting> settings;
  for (std::size_t ki = 0; ki < config.compare_kinds.size(); ++ki) {
    const std::string& kind = config.compare_kinds[ki];
    if (kind == "clean") {
      settings.push_back({kind, 0.0, data.test});
      continue;
    }
    for (std::size_t ei = 0; ei < config.compare_epsilons.size(); ++ei) {
      const double eps = config.compare_epsilons[ei];
      Rng rng = cell_rng(config.eval_seed, 2 + ki, ei);
      settings.push_back({kind, eps,
                          corrupt_split(data.test, config.corrupt_fraction, parse_corruption_kind(kind), eps, stats,
                                        rng, config.corrupt_weights)});
    }
  }

  std::vector<CompareRow> rows;
  for (Strategy s : config.compare_strategies) {
    ExperimentConfig sub = config;
    sub.train.strategy = s;
    const fs::path dir = out / to_string(s);
    if (!fs::exists(dir / kCheckpoint)) train_into(sub, data, dir);
    const UdmlModel model = load_model(sub, data, dir);
    for (const auto& st : settings) {
      const EvalMetrics e = evaluate(model, st.batch, s);
      rows.push_back({s, st.noise, st.epsilon, e.accuracy, e.macro_f1});
    }
  }

  std::string csv = "method,noise,epsilon,acc,f1\n";
  for (const auto& r : rows) {
    csv += fmt::format("{},{},{:.10g},{:.10g},{:.10g}\n", to_string(r.method), r.noise, r.epsilon, r.accuracy,
                       r.macro_f1);
  }
  write_text(out / "compare.csv", csv);
  return rows;
}

std::vector<CalibrationRow> cmd_calibrate(const ExperimentConfig& config, const fs::path& out) {
  config.validate();
  const DatasetSplits data = load_or_generate(config);
  const UdmlModel model = load_model(config, data, run_directory(config, out));

  std::vector<CalibrationRow> rows;
  for (std::size_t i = 0; i < config.calib_sigmas.size(); ++i) {
    const double sigma = config.calib_sigmas[i];
    for (std::size_t m = 0; m < model.modalities(); ++m) {
      Rng rng = cell_rng(config.eval_seed, 100 + m, i);
      const Tensor noisy = inject_gaussian(data.test.features[m], sigma, rng);
      const std::vector<double> est = estimate_sigma(model, noisy, m);
      double mean = 0.0, var = 0.0;
      for (double v : est) mean += v;
      mean /= static_cast<double>(est.size());
      for (double v : est) var += (v - mean) * (v - mean);
      var /= static_cast<double>(est.size());
      rows.push_back({sigma, m, mean, std::sqrt(var), est.size()});
    }
  }

  ensure_dir(out);
  std::string csv = "sigma,modality,sigma_hat_mean,sigma_hat_std,n\n";
  for (const auto& r : rows) {
    csv += fmt::format("{:.10g},{},{:.10g},{:.10g},{}\n", r.sigma, r.modality + 1, r.mean, r.stddev, r.n);
  }
  write_text(out / "calibration.csv", csv);
  return rows;
}

}  // namespace udml
