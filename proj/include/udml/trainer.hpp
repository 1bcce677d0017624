#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "udml/dependency.hpp"
#include "udml/encoder.hpp"
#include "udml/estimator.hpp"
#include "udml/fusion.hpp"
#include "udml/synthdata.hpp"

namespace udml {

enum class AlphaMode { Ema, EvalPass };

AlphaMode parse_alpha_mode(const std::string& text);
std::string to_string(AlphaMode mode);

struct Ablations {
  bool nue_off = false;  // no noise-aware estimator: rho := mean embedding variance
  bool mc_off = false;   // no dependency calculator: alpha := 1
  bool pos_off = false;  // no progressive schedule: combined loss from epoch 0
};

struct TrainConfig {
  std::size_t epochs = 60;
  double stage1_fraction = 0.5;
  std::size_t batch_size = 64;
  nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double est_lr = 1e-3;
  std::uint64_t seed = 1;
  Strategy strategy = Strategy::Udml;
  Ablations ablations;
  NoiseGrid noise_grid = NoiseGrid::integers(10);
  AlphaMode alpha_mode = AlphaMode::Ema;
  double alpha_decay = 0.99;
  std::string est_grad_scope = "estimator_only";
  bool eval_sample = false;
  bool stage2_dynamic_task = true;
  bool stage2_noisy_task = false;
  EstimatorInput estimator_input = EstimatorInput::Variance;
  std::size_t hidden = 128;
  std::size_t embed_dim = 32;
  std::size_t trunk_depth = 2;
  std::size_t est_hidden = 64;
  std::size_t plateau_patience = 5;

  void validate() const;
  // Number of stage-1 epochs; zero under pos_off.
  std::size_t stage1_epochs() const;
};

// Encoders, fusion head, per-modality noise estimators and the dependency
// state for one run.
class UdmlModel {
 public:
  UdmlModel(std::span<const std::size_t> feat_dims, std::size_t num_classes, const TrainConfig& config);

  void init(Rng& rng);

  std::size_t modalities() const { return encoders.size(); }
  std::size_t num_classes() const { return head.num_classes(); }

  // Encoders plus classifier: everything the task and unimodal losses train.
  nn::ParamList task_parameters() const;
  // Noise estimators only.
  nn::ParamList estimator_parameters() const;
  // Every tensor persisted in a checkpoint (parameters and dependency state).
  nn::ParamList checkpoint_tensors() const;

  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

  std::vector<ModalityEncoder> encoders;
  FusionHead head;
  std::vector<NoiseEstimator> estimators;
  DependencyState dependency;
  Ablations ablations;
};

// Uncertainty per sample and modality, [batch, M]. Reads the estimators,
// or the mean embedding variance when `use_pe` is set.
Tensor modality_uncertainty(const UdmlModel& model, std::span<const GaussianEmbedding> emb,
                            std::span<const Tensor> raw, bool use_pe);

// Per-sample fusion weights for `strategy`, [batch, M]. Off-tape.
Tensor strategy_weights(const UdmlModel& model, Strategy strategy, std::span<const GaussianEmbedding> emb,
                        std::span<const Tensor> raw);

// Logits with modality `dropped` replaced by zeros, through the shared head.
Tensor drop_modality_logits(const FusionHead& head, std::span<const Tensor> z, const Tensor& w, std::size_t dropped);

// Eval-mode forward over a whole batch with modality `dropped` removed.
Tensor drop_modality_logits(const UdmlModel& model, const ModalityBatch& batch, std::size_t dropped);

// Logits using only modality `kept` (static scaling, all others zero).
Tensor unimodal_logits(const FusionHead& head, std::span<const Tensor> z, std::size_t kept);

struct StepLosses {
  double task = 0.0;
  double uni = 0.0;
  double est = 0.0;
  double total = 0.0;
};

// Random streams of one run. The noise stream feeds only the estimator
// branch, so skipping that branch leaves the task stream untouched.
struct RunRngs {
  explicit RunRngs(std::uint64_t seed);
  Rng init;
  Rng task;
  Rng noise;
};

// Clean pre-training step: task + unimodal losses, static weights,
// dependency update.
StepLosses stage1_step(UdmlModel& model, const ModalityBatch& batch, nn::Optimizer& opt, const TrainConfig& config,
                       Rng& task_rng);

// Noise-aware step: task + unimodal losses on the clean batch (strategy
// weights), plus the estimator loss on noisy copies whose variance is
// detached before the estimator. `with_estimator_loss=false` skips the
// estimator branch entirely.
StepLosses stage2_step(UdmlModel& model, const ModalityBatch& batch, nn::Optimizer& opt, nn::Optimizer& opt_est,
                       const TrainConfig& config, Rng& task_rng, Rng& noise_rng, bool with_estimator_loss = true);

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> mean_w;
  std::vector<double> mean_rho;
  std::vector<double> mean_pe_w;  // inverse-variance weights, for comparison plots
};

double macro_f1(std::span<const std::size_t> predicted, std::span<const std::size_t> labels, std::size_t num_classes);

// Deterministic evaluation (embedding means unless eval_sample) with the
// given fusion strategy.
EvalMetrics evaluate(const UdmlModel& model, const ModalityBatch& batch, Strategy strategy, bool eval_sample = false,
                     std::uint64_t sample_seed = 0);

// Mean estimated noise level per sample for one modality.
std::vector<double> estimate_sigma(const UdmlModel& model, const Tensor& features, std::size_t modality);

// alpha from one eval-mode pass over `batch`.
std::vector<double> eval_pass_alpha(const UdmlModel& model, const ModalityBatch& batch);

struct EpochRow {
  std::size_t epoch = 0;
  int stage = 1;
  double lr = 0.0;
  StepLosses train;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double val_f1 = 0.0;
  std::vector<double> alpha;
  std::vector<double> mean_rho;
  std::vector<double> mean_w;
};

struct RunRecord {
  std::vector<std::pair<std::string, std::string>> config_echo;
  std::vector<EpochRow> epochs;
  EvalMetrics final_val;
  EvalMetrics final_test;
  std::string checkpoint;
};

struct TrainResult {
  UdmlModel model;
  RunRecord record;
};

struct TrainHooks {
  // Called after every stage-2 epoch; used by tests that compare runs.
  std::function<void(std::size_t epoch, const UdmlModel&)> after_epoch;
  bool with_estimator_loss = true;
};

TrainResult train(const TrainConfig& config, const DatasetSplits& data, const TrainHooks& hooks = {});

void write_run_csv(const std::filesystem::path& path, const RunRecord& record);
void write_summary(const std::filesystem::path& path, const RunRecord& record);

}  // namespace udml
