#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "udml/autodiff.hpp"

namespace udml {

inline constexpr double kAlphaFloor = 0.05;

// Per-modality dependency scores: d[m] is the batch mean of the row-wise L1
// distance between the full logits and the logits with modality m dropped.
std::vector<double> dependency_scores(const ad::Tensor& pi_full, std::span<const ad::Tensor> pi_dropped);

// alpha[m] = M * d[m] / sum(d), floored at kAlphaFloor with the remaining
// mass spread over the other modalities in proportion to d. All-zero d
// yields the uniform vector.
std::vector<double> normalize_alpha(std::span<const double> d, std::size_t modalities);

// Running estimate of the global dependency coefficients.
class DependencyState {
 public:
  DependencyState() = default;
  DependencyState(std::size_t modalities, double ema_decay);

  // raw <- decay * raw + (1 - decay) * d, then alpha <- normalize_alpha(raw).
  void update(std::span<const double> d);
  // Replaces alpha outright (eval-pass mode and checkpoint restore).
  void set_alpha(std::vector<double> alpha);

  const std::vector<double>& alpha() const { return alpha_; }
  const std::vector<double>& raw_ema() const { return raw_ema_; }
  double ema_decay() const { return decay_; }
  std::size_t modalities() const { return alpha_.size(); }
  std::size_t updates() const { return updates_; }

 private:
  std::vector<double> alpha_;
  std::vector<double> raw_ema_;
  double decay_ = 0.99;
  std::size_t updates_ = 0;
};

}  // namespace udml
