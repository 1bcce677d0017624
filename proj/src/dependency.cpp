#include "udml/dependency.hpp"

#include <cmath>
#include <string>

#include "udml/errors.hpp"

namespace udml {

std::vector<double> dependency_scores(const ad::Tensor& pi_full, std::span<const ad::Tensor> pi_dropped) {
  if (pi_full.dim() != 2) throw DimensionError("dependency_scores: logits must be [batch,K], got " + ad::shape_str(pi_full.shape()));
  const std::size_t batch = pi_full.size(0), k = pi_full.size(1);
  std::vector<double> d;
  d.reserve(pi_dropped.size());
  for (const auto& dropped : pi_dropped) {
    if (dropped.shape() != pi_full.shape()) {
      throw DimensionError("dependency_scores: shape mismatch " + ad::shape_str(pi_full.shape()) + " vs " +
                           ad::shape_str(dropped.shape()));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < k; ++j) row += std::abs(pi_full[i * k + j] - dropped[i * k + j]);
      total += row;
    }
    d.push_back(batch ? total / static_cast<double>(batch) : 0.0);
  }
  return d;
}

std::vector<double> normalize_alpha(std::span<const double> d, std::size_t modalities) {
  if (d.size() != modalities) {
    throw DimensionError("normalize_alpha: " + std::to_string(d.size()) + " scores for " + std::to_string(modalities) +
                         " modalities");
  }
  const double m = static_cast<double>(modalities);
  double total = 0.0;
  for (double v : d) {
    if (v < 0.0) throw DomainError("normalize_alpha: negative dependency score");
    total += v;
  }
  std::vector<double> alpha(modalities, 1.0);
  if (total <= 0.0) return alpha;

  // Water-fill: pin anything under the floor, redistribute the rest.
  std::vector<bool> pinned(modalities, false);
  for (;;) {
    double free_mass = m, free_score = 0.0;
    for (std::size_t i = 0; i < modalities; ++i) {
      if (pinned[i]) free_mass -= kAlphaFloor;
      else free_score += d[i];
    }
    bool changed = false;
    for (std::size_t i = 0; i < modalities; ++i) {
      if (pinned[i]) {
        alpha[i] = kAlphaFloor;
        continue;
      }
      alpha[i] = free_score > 0.0 ? free_mass * d[i] / free_score : kAlphaFloor;
      if (alpha[i] < kAlphaFloor) {
        pinned[i] = true;
        changed = true;
      }
    }
    if (!changed) break;
  }
  return alpha;
}

DependencyState::DependencyState(std::size_t modalities, double ema_decay)
    : alpha_(modalities, 1.0), raw_ema_(modalities, 0.0), decay_(ema_decay) {
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw ConfigError("dependency EMA decay must lie in [0,1)");
}

void DependencyState::update(std::span<const double> d) {
  if (d.size() != alpha_.size()) {
    throw DimensionError("update_dependency: " + std::to_string(d.size()) + " scores for " +
                         std::to_string(alpha_.size()) + " modalities");
  }
  for (std::size_t i = 0; i < d.size(); ++i) raw_ema_[i] = decay_ * raw_ema_[i] + (1.0 - decay_) * d[i];
  alpha_ = normalize_alpha(raw_ema_, alpha_.size());
  ++updates_;
}

void DependencyState::set_alpha(std::vector<double> alpha) {
  if (alpha.size() != alpha_.size()) throw DimensionError("set_alpha: wrong number of modalities");
  alpha_ = std::move(alpha);
}

}  // namespace udml
