#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "udml/nn.hpp"

namespace udml {

using ad::Tensor;

// How per-sample modality weights are formed.
//   Static: fixed 1/M.
//   Pe:     inverse mean embedding variance, row-normalized.
//   Udml:   inverse of (estimated uncertainty x dependency), row-normalized.
enum class Strategy { Static, Pe, Udml };

Strategy parse_strategy(const std::string& text);
std::string to_string(Strategy s);

// [batch, M] filled with 1/M.
Tensor static_weights(std::size_t batch, std::size_t modalities);

// w[i,m] = (1 / (rho[i,m] * alpha[m])) / sum_k 1 / (rho[i,k] * alpha[k]).
Tensor unbiased_weights(const Tensor& rho, std::span<const double> alpha);

// Row mean of each modality's embedding variance, stacked to [batch, M].
Tensor pe_uncertainty(std::span<const Tensor> sigma2);

// w[i,m] proportional to 1 / mean(sigma2[m] row i), row-normalized.
Tensor pe_baseline_weights(std::span<const Tensor> sigma2);

// Stacks M per-modality [batch] vectors into [batch, M].
Tensor stack_columns(std::span<const Tensor> columns);

// Weighted concatenation followed by a linear classifier over all modalities.
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(std::size_t modalities, std::size_t embed_dim, std::size_t num_classes, Strategy strategy);

  void init(ad::Rng& rng) { nn::init_params(classifier_, rng); }

  std::size_t modalities() const { return modalities_; }
  std::size_t embed_dim() const { return embed_dim_; }
  std::size_t num_classes() const { return classifier_.out_features(); }
  Strategy strategy() const { return strategy_; }

  nn::Linear& classifier() { return classifier_; }
  const nn::Linear& classifier() const { return classifier_; }
  nn::ParamList parameters() const { return classifier_.parameters(); }

 private:
  nn::Linear classifier_;
  std::size_t modalities_ = 0;
  std::size_t embed_dim_ = 0;
  Strategy strategy_ = Strategy::Udml;
};

// Scales z[m] row-wise by M * w[:, m], concatenates along features and
// applies the classifier. Returns logits [batch, K].
Tensor fuse(const FusionHead& head, std::span<const Tensor> z, const Tensor& w);

}  // namespace udml
