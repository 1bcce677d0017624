#include "udml/encoder.hpp"

#include <vector>

#include "udml/errors.hpp"

namespace udml {

ModalityEncoder::ModalityEncoder(const EncoderShape& shape) : mu_head_(shape.hidden, shape.embed_dim), var_head_(shape.hidden, shape.embed_dim) {
  if (shape.trunk_depth < 1) throw DimensionError("ModalityEncoder: trunk depth must be >= 1");
  std::vector<std::size_t> sizes{shape.feat_dim};
  for (std::size_t i = 0; i < shape.trunk_depth; ++i) sizes.push_back(shape.hidden);
  trunk_ = nn::Mlp(sizes, /*final_activation=*/false);
}

void ModalityEncoder::init(Rng& rng) {
  nn::init_params(trunk_, rng);
  nn::init_params(mu_head_, rng);
  nn::init_params(var_head_, rng);
}

nn::ParamList ModalityEncoder::parameters() const {
  nn::ParamList out;
  nn::append_params(out, "trunk", trunk_.parameters());
  nn::append_params(out, "mu", mu_head_.parameters());
  nn::append_params(out, "var", var_head_.parameters());
  return out;
}

GaussianEmbedding encode(const ModalityEncoder& enc, const Tensor& x) {
  const Tensor h = enc.trunk().forward(x);
  return {enc.mu_head().forward(h), ad::add_scalar(ad::softplus(enc.var_head().forward(h)), kVarianceFloor)};
}

Tensor embed_sample(const GaussianEmbedding& e, EmbedMode mode, Rng& rng) {
  if (mode == EmbedMode::Eval) return e.mu;
  return ad::gaussian_sample(e.mu, e.sigma2, rng);
}

}  // namespace udml
