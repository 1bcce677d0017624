#pragma once

#include <cstddef>

#include "udml/nn.hpp"

namespace udml {

using ad::Rng;
using ad::Tensor;

inline constexpr double kVarianceFloor = 1e-6;

// Diagonal Gaussian over the embedding space, one row per sample.
struct GaussianEmbedding {
  Tensor mu;      // [batch, d]
  Tensor sigma2;  // [batch, d], >= kVarianceFloor
};

struct EncoderShape {
  std::size_t feat_dim = 20;
  std::size_t hidden = 128;
  std::size_t embed_dim = 32;
  std::size_t trunk_depth = 2;
};

// ReLU trunk with a linear last layer, followed by a mean head and a
// variance head reading the same trunk features.
class ModalityEncoder {
 public:
  ModalityEncoder() = default;
  explicit ModalityEncoder(const EncoderShape& shape);

  void init(Rng& rng);

  nn::Mlp& trunk() { return trunk_; }
  nn::Linear& mu_head() { return mu_head_; }
  nn::Linear& var_head() { return var_head_; }
  const nn::Mlp& trunk() const { return trunk_; }
  const nn::Linear& mu_head() const { return mu_head_; }
  const nn::Linear& var_head() const { return var_head_; }

  std::size_t feat_dim() const { return trunk_.in_features(); }
  std::size_t embed_dim() const { return mu_head_.out_features(); }

  nn::ParamList parameters() const;

 private:
  nn::Mlp trunk_;
  nn::Linear mu_head_;
  nn::Linear var_head_;
};

GaussianEmbedding encode(const ModalityEncoder& enc, const Tensor& x);

enum class EmbedMode { Train, Eval };

// Train: reparameterized draw from the embedding. Eval: the mean itself.
Tensor embed_sample(const GaussianEmbedding& e, EmbedMode mode, Rng& rng);

}  // namespace udml
