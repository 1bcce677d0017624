#include "udml/estimator.hpp"

#include "udml/errors.hpp"

namespace udml {

EstimatorInput parse_estimator_input(const std::string& text) {
  if (text == "variance") return EstimatorInput::Variance;
  if (text == "raw") return EstimatorInput::Raw;
  throw ConfigError("unknown estimator input '" + text + "' (expected variance|raw)");
}

std::string to_string(EstimatorInput mode) { return mode == EstimatorInput::Variance ? "variance" : "raw"; }

NoiseEstimator::NoiseEstimator(std::size_t input_dim, std::size_t hidden, EstimatorInput mode)
    : net_({input_dim, hidden, 1}), mode_(mode) {}

void NoiseEstimator::init(Rng& rng) { nn::init_params(net_, rng); }

NoiseGrid::NoiseGrid(std::vector<double> levels) : levels_(std::move(levels)) {
  if (levels_.empty() || levels_.front() != 0.0) throw ConfigError("noise grid must start at 0");
  for (std::size_t i = 1; i < levels_.size(); ++i) {
    if (!(levels_[i] > levels_[i - 1])) throw ConfigError("noise grid must be strictly increasing");
  }
}

NoiseGrid NoiseGrid::integers(int max_level) {
  std::vector<double> levels;
  for (int i = 0; i <= max_level; ++i) levels.push_back(i);
  return NoiseGrid(std::move(levels));
}

double NoiseGrid::sample(Rng& rng) const {
  std::uniform_int_distribution<std::size_t> pick(0, levels_.size() - 1);
  return levels_[pick(rng)];
}

Tensor predict_sigma(const NoiseEstimator& est, const Tensor& input) {
  if (input.dim() != 2 || input.size(1) != est.input_dim()) {
    throw DimensionError("predict_sigma: input " + ad::shape_str(input.shape()) + " but estimator expects [batch," +
                         std::to_string(est.input_dim()) + "]");
  }
  const Tensor x = est.input_mode() == EstimatorInput::Variance ? ad::log(input) : input;
  const Tensor out = ad::softplus(est.net().forward(x));
  return ad::reshape(out, {input.size(0)});
}

Tensor estimator_loss(const NoiseEstimator& est, const Tensor& input_detached, const Tensor& sigma_true) {
  if (input_detached.on_tape()) {
    throw ContractError("estimator_loss: input still carries a gradient path");
  }
  const Tensor pred = predict_sigma(est, input_detached);
  if (sigma_true.shape() != pred.shape()) {
    throw DimensionError("estimator_loss: batch size mismatch " + ad::shape_str(pred.shape()) + " vs " +
                         ad::shape_str(sigma_true.shape()));
  }
  return ad::mse(pred, sigma_true);
}

Tensor inference_uncertainty(const NoiseEstimator& est, const Tensor& input) {
  ad::NoGradGuard no_grad;
  Tensor sigma_hat = predict_sigma(est, input);
  std::vector<double> rho(sigma_hat.numel());
  for (std::size_t i = 0; i < rho.size(); ++i) rho[i] = sigma_hat[i] * sigma_hat[i] + kRhoFloor;
  return Tensor::vector(std::move(rho));
}

}  // namespace udml
