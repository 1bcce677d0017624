#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "udml/autodiff.hpp"

namespace udml {

using ad::Rng;
using ad::Tensor;

struct ModalitySpec {
  std::size_t feat_dim = 20;
  double separation = 8.0;  // radius of the sphere the class means sit on
  bool warp = false;        // pass through a fixed random invertible nonlinearity
  double intra_class_std = 2.0;
};

struct SyntheticSpec {
  std::size_t num_classes = 6;
  std::vector<ModalitySpec> modalities{ModalitySpec{}, ModalitySpec{}};
  std::size_t n_train = 6000;
  std::size_t n_val = 1000;
  std::size_t n_test = 2000;
  std::uint64_t seed = 7;

  void validate() const;
};

enum class CorruptionKind { Gaussian, Salt };

CorruptionKind parse_corruption_kind(const std::string& text);
std::string to_string(CorruptionKind kind);

struct CorruptionTag {
  std::size_t modality;
  CorruptionKind kind;
  double epsilon;
};

// Samples of all modalities with a shared label vector.
struct ModalityBatch {
  std::vector<Tensor> features;  // per modality, [n, feat_dim]
  std::vector<std::size_t> labels;
  std::vector<std::optional<CorruptionTag>> tags;  // empty or one per sample

  std::size_t size() const { return labels.size(); }
  std::size_t modalities() const { return features.size(); }
  // Rows `indices` of every modality, in the given order.
  ModalityBatch select(std::span<const std::size_t> indices) const;
};

struct DatasetSplits {
  std::size_t num_classes = 0;
  ModalityBatch train;
  ModalityBatch val;
  ModalityBatch test;
};

DatasetSplits generate(const SyntheticSpec& spec);

// x + N(0, epsilon^2 I).
Tensor inject_gaussian(const Tensor& x, double epsilon, Rng& rng);

// Per-coordinate training statistics used as the salt reference.
struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
FeatureStats feature_stats(const Tensor& x);

inline double salt_probability(double epsilon) { return epsilon / 20.0 < 0.5 ? epsilon / 20.0 : 0.5; }

// Each coordinate is replaced, with probability salt_probability(epsilon),
// by mean_d +/- 5 stddev_d (sign uniform).
Tensor inject_salt(const Tensor& x, double epsilon, const FeatureStats& stats, Rng& rng);

// Corrupts one modality of a randomly chosen `fraction` of the samples.
// The modality is drawn from `modality_weights` (uniform when empty).
// `stats` is needed only for salt noise.
ModalityBatch corrupt_split(const ModalityBatch& batch, double fraction, CorruptionKind kind, double epsilon,
                            std::span<const FeatureStats> stats, Rng& rng,
                            std::span<const double> modality_weights = {});

// Applies the same noise to every row of one modality (used by sweeps).
ModalityBatch corrupt_modality(const ModalityBatch& batch, std::size_t modality, CorruptionKind kind, double epsilon,
                               std::span<const FeatureStats> stats, Rng& rng);

// Linear softmax probe trained on one modality; returns accuracy on `eval`.
double linear_probe_accuracy(const ModalityBatch& train, const ModalityBatch& eval, std::size_t modality,
                             std::size_t num_classes, std::uint64_t seed, std::size_t epochs = 30);

struct LoadedSplit {
  std::size_t num_classes = 0;
  ModalityBatch batch;
};

void write_dataset(const std::filesystem::path& path, const ModalityBatch& batch, std::size_t num_classes);
LoadedSplit read_dataset(const std::filesystem::path& path);

}  // namespace udml
