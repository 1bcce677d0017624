#include "udml/fusion.hpp"

#include "udml/errors.hpp"

namespace udml {

Strategy parse_strategy(const std::string& text) {
  if (text == "static") return Strategy::Static;
  if (text == "pe") return Strategy::Pe;
  if (text == "udml") return Strategy::Udml;
  throw ConfigError("unknown strategy '" + text + "' (expected static|pe|udml)");
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::Static: return "static";
    case Strategy::Pe: return "pe";
    case Strategy::Udml: return "udml";
  }
  return "?";
}

Tensor static_weights(std::size_t batch, std::size_t modalities) {
  return Tensor::full({batch, modalities}, 1.0 / static_cast<double>(modalities));
}

Tensor unbiased_weights(const Tensor& rho, std::span<const double> alpha) {
  if (rho.dim() != 2 || rho.size(1) != alpha.size()) {
    throw DimensionError("unbiased_weights: rho " + ad::shape_str(rho.shape()) + " with " + std::to_string(alpha.size()) +
                         " dependency coefficients");
  }
  const std::size_t batch = rho.size(0), m = rho.size(1);
  std::vector<double> w(batch * m);
  for (std::size_t i = 0; i < batch; ++i) {
    double total = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      w[i * m + k] = 1.0 / (rho[i * m + k] * alpha[k]);
      total += w[i * m + k];
    }
    for (std::size_t k = 0; k < m; ++k) w[i * m + k] /= total;
  }
  return Tensor({batch, m}, std::move(w));
}

Tensor stack_columns(std::span<const Tensor> columns) {
  if (columns.empty()) throw DimensionError("stack_columns: no columns");
  const std::size_t batch = columns[0].numel(), m = columns.size();
  std::vector<double> out(batch * m);
  for (std::size_t k = 0; k < m; ++k) {
    if (columns[k].numel() != batch) throw DimensionError("stack_columns: ragged columns");
    for (std::size_t i = 0; i < batch; ++i) out[i * m + k] = columns[k][i];
  }
  return Tensor({batch, m}, std::move(out));
}

Tensor pe_uncertainty(std::span<const Tensor> sigma2) {
  std::vector<Tensor> cols;
  for (const auto& s : sigma2) {
    if (s.dim() != 2) throw DimensionError("pe_uncertainty: expected [batch,d], got " + ad::shape_str(s.shape()));
    const std::size_t batch = s.size(0), d = s.size(1);
    std::vector<double> mean(batch, 0.0);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t j = 0; j < d; ++j) mean[i] += s[i * d + j];
      mean[i] /= static_cast<double>(d);
    }
    cols.push_back(Tensor::vector(std::move(mean)));
  }
  return stack_columns(cols);
}

Tensor pe_baseline_weights(std::span<const Tensor> sigma2) {
  const Tensor s = pe_uncertainty(sigma2);
  const std::vector<double> ones(sigma2.size(), 1.0);
  return unbiased_weights(s, ones);
}

FusionHead::FusionHead(std::size_t modalities, std::size_t embed_dim, std::size_t num_classes, Strategy strategy)
    : classifier_(modalities * embed_dim, num_classes), modalities_(modalities), embed_dim_(embed_dim), strategy_(strategy) {
  if (modalities == 0) throw DimensionError("FusionHead: need at least one modality");
}

Tensor fuse(const FusionHead& head, std::span<const Tensor> z, const Tensor& w) {
  const std::size_t m = head.modalities();
  if (z.size() != m) {
    throw DimensionError("fuse: " + std::to_string(z.size()) + " embeddings for " + std::to_string(m) + " modalities");
  }
  const std::size_t batch = z[0].size(0);
  if (w.dim() != 2 || w.size(0) != batch || w.size(1) != m) {
    throw DimensionError("fuse: weights " + ad::shape_str(w.shape()) + " for batch " + std::to_string(batch) +
                         " and " + std::to_string(m) + " modalities");
  }
  std::vector<Tensor> scaled;
  scaled.reserve(m);
  for (std::size_t k = 0; k < m; ++k) {
    if (z[k].dim() != 2 || z[k].size(0) != batch || z[k].size(1) != head.embed_dim()) {
      throw DimensionError("fuse: embedding " + std::to_string(k) + " has shape " + ad::shape_str(z[k].shape()));
    }
    std::vector<double> factor(batch);
    for (std::size_t i = 0; i < batch; ++i) factor[i] = static_cast<double>(m) * w[i * m + k];
    scaled.push_back(ad::scale_rows(z[k], Tensor::vector(std::move(factor))));
  }
  return head.classifier().forward(ad::concat(scaled, 1));
}

}  // namespace udml
