#include "udml/trainer.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "udml/errors.hpp"

namespace udml {

AlphaMode parse_alpha_mode(const std::string& text) {
  if (text == "ema") return AlphaMode::Ema;
  if (text == "eval_pass") return AlphaMode::EvalPass;
  throw ConfigError("unknown alpha_mode '" + text + "' (expected ema|eval_pass)");
}

std::string to_string(AlphaMode mode) { return mode == AlphaMode::Ema ? "ema" : "eval_pass"; }

void TrainConfig::validate() const {
  if (epochs < 2) throw ConfigError("epochs must be >= 2");
  if (!(stage1_fraction > 0.0 && stage1_fraction < 1.0)) throw ConfigError("stage1_fraction must lie in (0,1)");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr > 0.0) || !(est_lr > 0.0)) throw ConfigError("learning rates must be positive");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (!(alpha_decay >= 0.0 && alpha_decay < 1.0)) throw ConfigError("alpha_decay must lie in [0,1)");
  if (est_grad_scope != "estimator_only") {
    throw ConfigError("est_grad_scope '" + est_grad_scope + "' is not supported (expected estimator_only)");
  }
  if (hidden == 0 || embed_dim == 0 || est_hidden == 0 || trunk_depth == 0) {
    throw ConfigError("layer sizes must be positive");
  }
}

std::size_t TrainConfig::stage1_epochs() const {
  if (ablations.pos_off) return 0;
  return static_cast<std::size_t>(std::ceil(stage1_fraction * static_cast<double>(epochs)));
}

// ---------------------------------------------------------------------------
// Model

UdmlModel::UdmlModel(std::span<const std::size_t> feat_dims, std::size_t num_classes, const TrainConfig& config)
    : head(feat_dims.size(), config.embed_dim, num_classes, config.strategy),
      dependency(feat_dims.size(), config.alpha_decay),
      ablations(config.ablations) {
  for (auto d : feat_dims) {
    encoders.emplace_back(EncoderShape{d, config.hidden, config.embed_dim, config.trunk_depth});
    const std::size_t est_in = config.estimator_input == EstimatorInput::Variance ? config.embed_dim : d;
    estimators.emplace_back(est_in, config.est_hidden, config.estimator_input);
  }
  nn::require_disjoint(task_parameters(), estimator_parameters());
}

void UdmlModel::init(Rng& rng) {
  for (auto& e : encoders) e.init(rng);
  head.init(rng);
  for (auto& e : estimators) e.init(rng);
}

nn::ParamList UdmlModel::task_parameters() const {
  nn::ParamList out;
  for (std::size_t m = 0; m < encoders.size(); ++m) nn::append_params(out, fmt::format("enc{}", m), encoders[m].parameters());
  nn::append_params(out, "head", head.parameters());
  return out;
}

nn::ParamList UdmlModel::estimator_parameters() const {
  nn::ParamList out;
  for (std::size_t m = 0; m < estimators.size(); ++m) nn::append_params(out, fmt::format("est{}", m), estimators[m].parameters());
  return out;
}

nn::ParamList UdmlModel::checkpoint_tensors() const {
  nn::ParamList out = task_parameters();
  const auto est = estimator_parameters();
  out.insert(out.end(), est.begin(), est.end());
  out.push_back({"dependency.alpha", Tensor::vector(dependency.alpha())});
  out.push_back({"dependency.raw_ema", Tensor::vector(dependency.raw_ema())});
  return out;
}

void UdmlModel::save(const std::filesystem::path& path) const { nn::save_checkpoint(path, checkpoint_tensors()); }

void UdmlModel::load(const std::filesystem::path& path) {
  const nn::ParamList stored = nn::load_checkpoint(path);
  nn::ParamList params = task_parameters();
  const auto est = estimator_parameters();
  params.insert(params.end(), est.begin(), est.end());
  nn::assign_params(params, stored);
  for (const auto& s : stored) {
    if (s.name == "dependency.alpha") {
      dependency.set_alpha(std::vector<double>(s.tensor.data().begin(), s.tensor.data().end()));
    }
  }
}

// ---------------------------------------------------------------------------
// Forward helpers

namespace {

std::vector<Tensor> sigma2_of(std::span<const GaussianEmbedding> emb) {
  std::vector<Tensor> out;
  for (const auto& e : emb) out.push_back(e.sigma2);
  return out;
}

std::vector<double> effective_alpha(const UdmlModel& model) {
  if (model.ablations.mc_off) return std::vector<double>(model.modalities(), 1.0);
  return model.dependency.alpha();
}

Tensor estimator_input(const NoiseEstimator& est, const GaussianEmbedding& emb, const Tensor& raw) {
  return est.input_mode() == EstimatorInput::Variance ? ad::detach(emb.sigma2) : ad::detach(raw);
}

}  // namespace

Tensor modality_uncertainty(const UdmlModel& model, std::span<const GaussianEmbedding> emb, std::span<const Tensor> raw,
                            bool use_pe) {
  ad::NoGradGuard no_grad;
  if (use_pe) return pe_uncertainty(sigma2_of(emb));
  std::vector<Tensor> cols;
  for (std::size_t m = 0; m < emb.size(); ++m) {
    cols.push_back(inference_uncertainty(model.estimators[m], estimator_input(model.estimators[m], emb[m], raw[m])));
  }
  return stack_columns(cols);
}

Tensor strategy_weights(const UdmlModel& model, Strategy strategy, std::span<const GaussianEmbedding> emb,
                        std::span<const Tensor> raw) {
  ad::NoGradGuard no_grad;
  const std::size_t batch = emb.front().mu.size(0);
  switch (strategy) {
    case Strategy::Static: return static_weights(batch, model.modalities());
    case Strategy::Pe: return pe_baseline_weights(sigma2_of(emb));
    case Strategy::Udml: {
      const Tensor rho = modality_uncertainty(model, emb, raw, model.ablations.nue_off);
      return unbiased_weights(rho, effective_alpha(model));
    }
  }
  throw ContractError("unreachable strategy");
}

Tensor drop_modality_logits(const FusionHead& head, std::span<const Tensor> z, const Tensor& w, std::size_t dropped) {
  if (dropped >= z.size()) {
    throw IndexError("drop_modality_logits: modality " + std::to_string(dropped) + " out of range");
  }
  std::vector<Tensor> parts(z.begin(), z.end());
  parts[dropped] = Tensor::zeros(z[dropped].shape());
  return fuse(head, parts, w);
}

Tensor drop_modality_logits(const UdmlModel& model, const ModalityBatch& batch, std::size_t dropped) {
  if (dropped >= model.modalities()) {
    throw IndexError("drop_modality_logits: modality " + std::to_string(dropped) + " out of range");
  }
  ad::NoGradGuard no_grad;
  std::vector<GaussianEmbedding> emb;
  std::vector<Tensor> z;
  for (std::size_t m = 0; m < model.modalities(); ++m) {
    emb.push_back(encode(model.encoders[m], batch.features[m]));
    z.push_back(emb.back().mu);
  }
  const Tensor w = strategy_weights(model, model.head.strategy(), emb, batch.features);
  return drop_modality_logits(model.head, z, w, dropped);
}

Tensor unimodal_logits(const FusionHead& head, std::span<const Tensor> z, std::size_t kept) {
  std::vector<Tensor> parts;
  for (std::size_t m = 0; m < z.size(); ++m) parts.push_back(m == kept ? z[m] : Tensor::zeros(z[m].shape()));
  return fuse(head, parts, static_weights(z[kept].size(0), z.size()));
}

// ---------------------------------------------------------------------------
// Steps

namespace {

std::vector<double> batch_dependency(const FusionHead& head, std::span<const Tensor> z, const Tensor& w,
                                     const Tensor& full_logits) {
  ad::NoGradGuard no_grad;
  std::vector<Tensor> dropped;
  for (std::size_t m = 0; m < z.size(); ++m) dropped.push_back(drop_modality_logits(head, z, w, m));
  return dependency_scores(full_logits, dropped);
}

struct TaskForward {
  std::vector<GaussianEmbedding> emb;
  std::vector<Tensor> z;
  Tensor w;
  Tensor logits;
  Tensor task_loss;
  Tensor uni_loss;
};

TaskForward task_forward(const UdmlModel& model, std::span<const Tensor> inputs, std::span<const std::size_t> labels,
                         Strategy weighting, Rng& task_rng) {
  TaskForward f;
  for (std::size_t m = 0; m < model.modalities(); ++m) {
    f.emb.push_back(encode(model.encoders[m], inputs[m]));
    f.z.push_back(embed_sample(f.emb.back(), EmbedMode::Train, task_rng));
  }
  f.w = strategy_weights(model, weighting, f.emb, inputs);
  f.logits = fuse(model.head, f.z, f.w);
  f.task_loss = ad::softmax_cross_entropy(f.logits, labels);
  f.uni_loss = ad::softmax_cross_entropy(unimodal_logits(model.head, f.z, 0), labels);
  for (std::size_t m = 1; m < model.modalities(); ++m) {
    f.uni_loss = ad::add(f.uni_loss, ad::softmax_cross_entropy(unimodal_logits(model.head, f.z, m), labels));
  }
  return f;
}

// Adds per-row noise of intensity sigma[i] to x.
Tensor inject_rows(const Tensor& x, std::span<const double> sigma, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor out = x.clone();
  out.set_requires_grad(false);
  auto data = out.mutable_data();
  const std::size_t d = x.size(1);
  for (std::size_t i = 0; i < x.size(0); ++i)
    for (std::size_t j = 0; j < d; ++j) data[i * d + j] += sigma[i] * normal(rng);
  return out;
}

}  // namespace

StepLosses stage1_step(UdmlModel& model, const ModalityBatch& batch, nn::Optimizer& opt, const TrainConfig& config,
                       Rng& task_rng) {
  ad::Tape tape;
  TaskForward f = task_forward(model, batch.features, batch.labels, Strategy::Static, task_rng);
  const Tensor total = ad::add(f.task_loss, f.uni_loss);
  opt.zero_grad();
  tape.backward(total);
  opt.step();
  if (config.alpha_mode == AlphaMode::Ema && !model.ablations.mc_off) {
    model.dependency.update(batch_dependency(model.head, f.z, f.w, f.logits));
  }
  return {f.task_loss.item(), f.uni_loss.item(), 0.0, total.item()};
}

StepLosses stage2_step(UdmlModel& model, const ModalityBatch& batch, nn::Optimizer& opt, nn::Optimizer& opt_est,
                       const TrainConfig& config, Rng& task_rng, Rng& noise_rng, bool with_estimator_loss) {
  const std::size_t mods = model.modalities();
  const std::size_t n = batch.size();
  const bool train_estimator = with_estimator_loss && !model.ablations.nue_off;

  std::vector<Tensor> noisy;
  std::vector<Tensor> sigma_true;
  if (train_estimator || config.stage2_noisy_task) {
    for (std::size_t m = 0; m < mods; ++m) {
      std::vector<double> sigma(n);
      for (auto& s : sigma) s = config.noise_grid.sample(noise_rng);
      noisy.push_back(inject_rows(batch.features[m], sigma, noise_rng));
      sigma_true.push_back(Tensor::vector(std::move(sigma)));
    }
  }

  ad::Tape tape;
  const Strategy weighting = config.stage2_dynamic_task ? config.strategy : Strategy::Static;
  std::span<const Tensor> task_inputs = config.stage2_noisy_task ? std::span<const Tensor>(noisy) : batch.features;
  TaskForward f = task_forward(model, task_inputs, batch.labels, weighting, task_rng);
  Tensor total = ad::add(f.task_loss, f.uni_loss);

  double est_value = 0.0;
  if (train_estimator) {
    Tensor est_loss;
    for (std::size_t m = 0; m < mods; ++m) {
      Tensor input;
      {
        ad::NoGradGuard no_grad;
        input = model.estimators[m].input_mode() == EstimatorInput::Variance
                    ? encode(model.encoders[m], noisy[m]).sigma2
                    : noisy[m];
      }
      const Tensor loss = estimator_loss(model.estimators[m], ad::detach(input), sigma_true[m]);
      est_loss = m == 0 ? loss : ad::add(est_loss, loss);
    }
    est_value = est_loss.item();
    total = ad::add(total, est_loss);
  }

  opt.zero_grad();
  opt_est.zero_grad();
  tape.backward(total);
  opt.step();
  if (train_estimator) opt_est.step();

  if (config.alpha_mode == AlphaMode::Ema && !model.ablations.mc_off) {
    model.dependency.update(batch_dependency(model.head, f.z, f.w, f.logits));
  }
  return {f.task_loss.item(), f.uni_loss.item(), est_value, total.item()};
}

// ---------------------------------------------------------------------------
// Evaluation

double macro_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> labels, std::size_t num_classes) {
  std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (predicted[i] == labels[i]) {
      tp[labels[i]] += 1.0;
    } else {
      fp[predicted[i]] += 1.0;
      fn[labels[i]] += 1.0;
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = 2.0 * tp[c] + fp[c] + fn[c];
    total += denom > 0.0 ? 2.0 * tp[c] / denom : 0.0;
  }
  return total / static_cast<double>(num_classes);
}

EvalMetrics evaluate(const UdmlModel& model, const ModalityBatch& batch, Strategy strategy, bool eval_sample,
                     std::uint64_t sample_seed) {
  ad::NoGradGuard no_grad;
  const std::size_t mods = model.modalities();
  const std::size_t k = model.num_classes();
  const std::size_t chunk = 512;
  Rng rng(sample_seed);
  EvalMetrics out;
  out.mean_w.assign(mods, 0.0);
  out.mean_rho.assign(mods, 0.0);
  out.mean_pe_w.assign(mods, 0.0);
  std::vector<std::size_t> predicted;
  predicted.reserve(batch.size());
  double loss_sum = 0.0;

  for (std::size_t start = 0; start < batch.size(); start += chunk) {
    const std::size_t end = std::min(batch.size(), start + chunk);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const ModalityBatch part = batch.select(idx);

    std::vector<GaussianEmbedding> emb;
    std::vector<Tensor> z;
    for (std::size_t m = 0; m < mods; ++m) {
      emb.push_back(encode(model.encoders[m], part.features[m]));
      z.push_back(embed_sample(emb.back(), eval_sample ? EmbedMode::Train : EmbedMode::Eval, rng));
    }
    const Tensor rho = modality_uncertainty(model, emb, part.features, model.ablations.nue_off);
    const Tensor w = strategy_weights(model, strategy, emb, part.features);
    std::vector<Tensor> s2;
    for (const auto& e : emb) s2.push_back(e.sigma2);
    const Tensor pe_w = pe_baseline_weights(s2);
    const Tensor logits = fuse(model.head, z, w);
    loss_sum += ad::softmax_cross_entropy(logits, part.labels).item() * static_cast<double>(part.size());

    for (std::size_t i = 0; i < part.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c)
        if (logits[i * k + c] > logits[i * k + best]) best = c;
      predicted.push_back(best);
      for (std::size_t m = 0; m < mods; ++m) {
        out.mean_w[m] += w[i * mods + m];
        out.mean_rho[m] += rho[i * mods + m];
        out.mean_pe_w[m] += pe_w[i * mods + m];
      }
    }
  }

  const double n = static_cast<double>(batch.size());
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) correct += predicted[i] == batch.labels[i];
  out.loss = loss_sum / n;
  out.accuracy = static_cast<double>(correct) / n;
  out.macro_f1 = macro_f1(predicted, batch.labels, k);
  for (std::size_t m = 0; m < mods; ++m) {
    out.mean_w[m] /= n;
    out.mean_rho[m] /= n;
    out.mean_pe_w[m] /= n;
  }
  return out;
}

std::vector<double> estimate_sigma(const UdmlModel& model, const Tensor& features, std::size_t modality) {
  if (modality >= model.modalities()) throw IndexError("estimate_sigma: modality out of range");
  ad::NoGradGuard no_grad;
  const auto& est = model.estimators[modality];
  const Tensor input =
      est.input_mode() == EstimatorInput::Variance ? encode(model.encoders[modality], features).sigma2 : features;
  const Tensor s = predict_sigma(est, input);
  return {s.data().begin(), s.data().end()};
}

std::vector<double> eval_pass_alpha(const UdmlModel& model, const ModalityBatch& batch) {
  ad::NoGradGuard no_grad;
  std::vector<GaussianEmbedding> emb;
  std::vector<Tensor> z;
  for (std::size_t m = 0; m < model.modalities(); ++m) {
    emb.push_back(encode(model.encoders[m], batch.features[m]));
    z.push_back(emb.back().mu);
  }
  const Tensor w = strategy_weights(model, model.head.strategy(), emb, batch.features);
  const Tensor full = fuse(model.head, z, w);
  return normalize_alpha(batch_dependency(model.head, z, w, full), model.modalities());
}

// ---------------------------------------------------------------------------
// Training loop

RunRngs::RunRngs(std::uint64_t seed) {
  std::seed_seq s_init{seed, std::uint64_t{0x1}};
  std::seed_seq s_task{seed, std::uint64_t{0x2}};
  std::seed_seq s_noise{seed, std::uint64_t{0x3}};
  init.seed(s_init);
  task.seed(s_task);
  noise.seed(s_noise);
}

TrainResult train(const TrainConfig& config, const DatasetSplits& data, const TrainHooks& hooks) {
  config.validate();
  std::vector<std::size_t> dims;
  for (const auto& f : data.train.features) dims.push_back(f.size(1));
  TrainResult result{UdmlModel(dims, data.num_classes, config), {}};
  UdmlModel& model = result.model;
  RunRngs rngs(config.seed);
  model.init(rngs.init);

  nn::OptimizerOptions task_opts{config.optimizer, config.lr, config.momentum, 0.999, 1e-8, config.weight_decay};
  nn::Optimizer opt(nn::tensors_of(model.task_parameters()), task_opts);
  nn::Optimizer opt_est(nn::tensors_of(model.estimator_parameters()),
                        {nn::OptimizerKind::Adam, config.est_lr, 0.9, 0.999, 1e-8, 0.0});
  nn::ReduceOnPlateau plateau(config.plateau_patience);

  const std::size_t stage1 = config.stage1_epochs();
  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const int stage = epoch < stage1 ? 1 : 2;
    if (stage == 2 && epoch == stage1 && stage1 > 0 && config.alpha_mode == AlphaMode::EvalPass &&
        !model.ablations.mc_off) {
      model.dependency.set_alpha(eval_pass_alpha(model, data.val));
    }
    std::shuffle(order.begin(), order.end(), rngs.task);
    StepLosses sum;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const ModalityBatch mb = data.train.select(std::span<const std::size_t>(order.data() + start, end - start));
      const StepLosses l = stage == 1 ? stage1_step(model, mb, opt, config, rngs.task)
                                      : stage2_step(model, mb, opt, opt_est, config, rngs.task, rngs.noise,
                                                    hooks.with_estimator_loss);
      sum.task += l.task;
      sum.uni += l.uni;
      sum.est += l.est;
      sum.total += l.total;
      ++steps;
    }
    const double inv = 1.0 / static_cast<double>(steps);
    EpochRow row;
    row.epoch = epoch;
    row.stage = stage;
    row.lr = opt.lr();
    row.train = {sum.task * inv, sum.uni * inv, sum.est * inv, sum.total * inv};
    const Strategy eval_strategy = stage == 1 ? Strategy::Static : config.strategy;
    const EvalMetrics val = evaluate(model, data.val, eval_strategy, config.eval_sample, config.seed);
    row.val_loss = val.loss;
    row.val_acc = val.accuracy;
    row.val_f1 = val.macro_f1;
    row.alpha = effective_alpha(model);
    row.mean_rho = val.mean_rho;
    row.mean_w = val.mean_w;
    result.record.epochs.push_back(row);
    plateau.observe(val.loss, opt);
    if (stage == 2 && hooks.after_epoch) hooks.after_epoch(epoch, model);
  }
  if (config.alpha_mode == AlphaMode::EvalPass && !model.ablations.mc_off) {
    model.dependency.set_alpha(eval_pass_alpha(model, data.val));
  }
  result.record.final_val = evaluate(model, data.val, config.strategy, config.eval_sample, config.seed);
  result.record.final_test = evaluate(model, data.test, config.strategy, config.eval_sample, config.seed);
  return result;
}

// ---------------------------------------------------------------------------
// Serialization

void write_run_csv(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  const std::size_t mods = record.epochs.empty() ? 0 : record.epochs.front().alpha.size();
  os << "epoch,stage,lr,train_task,train_uni,train_est,train_total,val_loss,val_acc,val_f1";
  for (std::size_t m = 0; m < mods; ++m) os << ",alpha_m" << m + 1;
  for (std::size_t m = 0; m < mods; ++m) os << ",rho_m" << m + 1;
  for (std::size_t m = 0; m < mods; ++m) os << ",w_m" << m + 1;
  os << '\n';
  for (const auto& r : record.epochs) {
    os << fmt::format("{},{},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g},{:.10g}", r.epoch, r.stage, r.lr,
                      r.train.task, r.train.uni, r.train.est, r.train.total, r.val_loss, r.val_acc, r.val_f1);
    for (double v : r.alpha) os << fmt::format(",{:.10g}", v);
    for (double v : r.mean_rho) os << fmt::format(",{:.10g}", v);
    for (double v : r.mean_w) os << fmt::format(",{:.10g}", v);
    os << '\n';
  }
  if (!os) throw IoError("short write to " + path.string());
}

namespace {

std::string join(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += fmt::format("{}{:.10g}", i ? "," : "", v[i]);
  return out;
}

}  // namespace

void write_summary(const std::filesystem::path& path, const RunRecord& record) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : record.config_echo) os << k << '=' << v << '\n';
  const auto& v = record.final_val;
  const auto& t = record.final_test;
  os << fmt::format("final.val_acc={:.10g}\nfinal.val_f1={:.10g}\n", v.accuracy, v.macro_f1);
  os << fmt::format("final.test_acc={:.10g}\nfinal.test_f1={:.10g}\n", t.accuracy, t.macro_f1);
  if (!record.epochs.empty()) os << "final.alpha=" << join(record.epochs.back().alpha) << '\n';
  os << "final.test_mean_w=" << join(t.mean_w) << '\n';
  os << "final.test_mean_rho=" << join(t.mean_rho) << '\n';
  std::size_t boundary = 0;
  bool has_boundary = false;
  for (std::size_t i = 1; i < record.epochs.size(); ++i) {
    if (record.epochs[i].stage != record.epochs[i - 1].stage) {
      boundary = record.epochs[i].epoch;
      has_boundary = true;
    }
  }
  if (has_boundary) os << "stage2_start_epoch=" << boundary << '\n';
  os << "checkpoint=" << record.checkpoint << '\n';
  if (!os) throw IoError("short write to " + path.string());
}

}  // namespace udml
