#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "udml/nn.hpp"

namespace udml {

using ad::Rng;
using ad::Tensor;

inline constexpr double kRhoFloor = 1e-3;

// What the estimator reads: the embedding variance of a (possibly noisy)
// input, or the raw noisy features themselves.
enum class EstimatorInput { Variance, Raw };

EstimatorInput parse_estimator_input(const std::string& text);
std::string to_string(EstimatorInput mode);

// Regresses the intensity of injected noise from one modality's input.
class NoiseEstimator {
 public:
  NoiseEstimator() = default;
  NoiseEstimator(std::size_t input_dim, std::size_t hidden, EstimatorInput mode);

  void init(Rng& rng);

  EstimatorInput input_mode() const { return mode_; }
  std::size_t input_dim() const { return net_.in_features(); }
  nn::Mlp& net() { return net_; }
  const nn::Mlp& net() const { return net_; }

  nn::ParamList parameters() const { return net_.parameters(); }

 private:
  nn::Mlp net_;
  EstimatorInput mode_ = EstimatorInput::Variance;
};

// Discrete set of training noise levels, sampled uniformly.
class NoiseGrid {
 public:
  NoiseGrid() = default;
  // Levels must be nonnegative, strictly increasing and include 0.
  explicit NoiseGrid(std::vector<double> levels);

  static NoiseGrid integers(int max_level);

  const std::vector<double>& levels() const { return levels_; }
  double sample(Rng& rng) const;

 private:
  std::vector<double> levels_{0.0};
};

// softplus(net(input)) per row: [batch, d] -> [batch]. Variance inputs are
// read on a log scale.
Tensor predict_sigma(const NoiseEstimator& est, const Tensor& input);

// Squared error of the predicted intensity against the injected one. The
// caller must pass an input with no gradient path back into the encoder.
Tensor estimator_loss(const NoiseEstimator& est, const Tensor& input_detached, const Tensor& sigma_true);

// rho = sigma_hat^2 + kRhoFloor, off-tape.
Tensor inference_uncertainty(const NoiseEstimator& est, const Tensor& input);

}  // namespace udml
