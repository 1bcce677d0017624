#include "udml/synthdata.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "udml/errors.hpp"
#include "udml/nn.hpp"

namespace udml {

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (modalities.empty()) throw ConfigError("at least one modality is required");
  for (std::size_t m = 0; m < modalities.size(); ++m) {
    const auto& s = modalities[m];
    if (s.feat_dim < 2) throw ConfigError(fmt::format("m{}.feat_dim must be >= 2", m + 1));
    if (!(s.separation > 0.0)) throw ConfigError(fmt::format("m{}.separation must be > 0", m + 1));
    if (s.intra_class_std < 0.0) throw ConfigError(fmt::format("m{}.intra_class_std must be >= 0", m + 1));
  }
  if (n_train == 0 || n_val == 0 || n_test == 0) throw ConfigError("every split needs at least one sample");
}

CorruptionKind parse_corruption_kind(const std::string& text) {
  if (text == "gaussian") return CorruptionKind::Gaussian;
  if (text == "salt") return CorruptionKind::Salt;
  throw ConfigError("unknown noise kind '" + text + "' (expected gaussian|salt)");
}

std::string to_string(CorruptionKind kind) { return kind == CorruptionKind::Gaussian ? "gaussian" : "salt"; }

ModalityBatch ModalityBatch::select(std::span<const std::size_t> indices) const {
  ModalityBatch out;
  for (const auto& f : features) {
    const std::size_t d = f.size(1);
    std::vector<double> rows(indices.size() * d);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      std::copy_n(f.data().begin() + indices[r] * d, d, rows.begin() + r * d);
    }
    out.features.emplace_back(ad::Shape{indices.size(), d}, std::move(rows));
  }
  out.labels.reserve(indices.size());
  for (auto i : indices) out.labels.push_back(labels[i]);
  if (!tags.empty()) {
    for (auto i : indices) out.tags.push_back(tags[i]);
  }
  return out;
}

namespace {

// Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
std::vector<double> random_rotation(std::size_t d, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> q(d * d);
  for (auto& v : q) v = normal(rng);
  for (std::size_t i = 0; i < d; ++i) {
    double* row = q.data() + i * d;
    for (std::size_t j = 0; j < i; ++j) {
      const double* prev = q.data() + j * d;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += row[k] * prev[k];
      for (std::size_t k = 0; k < d; ++k) row[k] -= dot * prev[k];
    }
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += row[k] * row[k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < d; ++k) row[k] /= norm;
  }
  return q;
}

void apply_rotation(const std::vector<double>& q, std::span<const double> in, std::span<double> out) {
  const std::size_t d = in.size();
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < d; ++k) acc += q[i * d + k] * in[k];
    out[i] = acc;
  }
}

// Strictly increasing (derivative >= 0.1), so the warp stays invertible.
double wave(double u) { return u + 0.6 * std::sin(1.5 * u); }

struct Warp {
  std::vector<double> first, second;

  void apply(std::span<double> x) const {
    std::vector<double> tmp(x.size());
    apply_rotation(first, x, tmp);
    for (auto& v : tmp) v = wave(v);
    apply_rotation(second, tmp, x);
  }
};

}  // namespace

DatasetSplits generate(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t k = spec.num_classes;
  const std::size_t total = spec.n_train + spec.n_val + spec.n_test;

  std::vector<std::vector<double>> means;  // per modality, [K, d]
  std::vector<std::optional<Warp>> warps;
  for (const auto& ms : spec.modalities) {
    std::vector<double> mu(k * ms.feat_dim);
    for (std::size_t c = 0; c < k; ++c) {
      double norm = 0.0;
      for (std::size_t j = 0; j < ms.feat_dim; ++j) {
        mu[c * ms.feat_dim + j] = normal(rng);
        norm += mu[c * ms.feat_dim + j] * mu[c * ms.feat_dim + j];
      }
      norm = std::sqrt(norm);
      for (std::size_t j = 0; j < ms.feat_dim; ++j) mu[c * ms.feat_dim + j] *= ms.separation / norm;
    }
    means.push_back(std::move(mu));
    if (ms.warp) {
      Warp w{random_rotation(ms.feat_dim, rng), random_rotation(ms.feat_dim, rng)};
      warps.emplace_back(std::move(w));
    } else {
      warps.emplace_back(std::nullopt);
    }
  }

  std::vector<std::size_t> labels(total);
  for (std::size_t i = 0; i < total; ++i) labels[i] = i % k;
  std::shuffle(labels.begin(), labels.end(), rng);

  ModalityBatch all;
  all.labels = labels;
  for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
    const auto& ms = spec.modalities[m];
    const std::size_t d = ms.feat_dim;
    std::vector<double> x(total * d);
    for (std::size_t i = 0; i < total; ++i) {
      std::span<double> row(x.data() + i * d, d);
      for (std::size_t j = 0; j < d; ++j) row[j] = means[m][labels[i] * d + j] + ms.intra_class_std * normal(rng);
      if (warps[m]) warps[m]->apply(row);
    }
    all.features.emplace_back(ad::Shape{total, d}, std::move(x));
  }

  auto range = [](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    return idx;
  };
  DatasetSplits out;
  out.num_classes = k;
  out.train = all.select(range(0, spec.n_train));
  out.val = all.select(range(spec.n_train, spec.n_train + spec.n_val));
  out.test = all.select(range(spec.n_train + spec.n_val, total));
  return out;
}

Tensor inject_gaussian(const Tensor& x, double epsilon, Rng& rng) {
  if (epsilon < 0.0) throw DomainError("inject_gaussian: negative noise level");
  Tensor out = x.clone();
  out.set_requires_grad(false);
  if (epsilon == 0.0) return out;
  std::normal_distribution<double> normal(0.0, epsilon);
  for (auto& v : out.mutable_data()) v += normal(rng);
  return out;
}

FeatureStats feature_stats(const Tensor& x) {
  if (x.dim() != 2) throw DimensionError("feature_stats: expected [n,d], got " + ad::shape_str(x.shape()));
  const std::size_t n = x.size(0), d = x.size(1);
  FeatureStats s{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += x[i * d + j];
  for (auto& v : s.mean) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = x[i * d + j] - s.mean[j];
      s.stddev[j] += dv * dv;
    }
  for (auto& v : s.stddev) v = std::sqrt(v / static_cast<double>(n));
  return s;
}

Tensor inject_salt(const Tensor& x, double epsilon, const FeatureStats& stats, Rng& rng) {
  if (epsilon < 0.0) throw DomainError("inject_salt: negative noise level");
  const std::size_t d = x.shape().back();
  if (stats.mean.size() != d || stats.stddev.size() != d) {
    throw DimensionError("inject_salt: statistics for " + std::to_string(stats.mean.size()) + " features, input " +
                         ad::shape_str(x.shape()));
  }
  Tensor out = x.clone();
  out.set_requires_grad(false);
  const double p = salt_probability(epsilon);
  if (p == 0.0) return out;
  std::bernoulli_distribution hit(p), positive(0.5);
  auto data = out.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!hit(rng)) continue;
    const std::size_t j = i % d;
    data[i] = stats.mean[j] + (positive(rng) ? 5.0 : -5.0) * stats.stddev[j];
  }
  return out;
}

namespace {

void corrupt_row(Tensor& features, std::size_t row, CorruptionKind kind, double epsilon, const FeatureStats* stats,
                 Rng& rng) {
  const std::size_t d = features.size(1);
  auto data = features.mutable_data();
  Tensor r({1, d}, std::vector<double>(data.begin() + row * d, data.begin() + (row + 1) * d));
  Tensor noisy = kind == CorruptionKind::Gaussian ? inject_gaussian(r, epsilon, rng) : inject_salt(r, epsilon, *stats, rng);
  std::copy(noisy.data().begin(), noisy.data().end(), data.begin() + row * d);
}

const FeatureStats* stats_for(std::span<const FeatureStats> stats, std::size_t m, CorruptionKind kind) {
  if (kind == CorruptionKind::Gaussian) return nullptr;
  if (m >= stats.size()) throw ContractError("salt corruption needs feature statistics for every modality");
  return &stats[m];
}

ModalityBatch deep_copy(const ModalityBatch& batch) {
  ModalityBatch out = batch;
  for (auto& f : out.features) f = f.clone();
  return out;
}

}  // namespace

ModalityBatch corrupt_split(const ModalityBatch& batch, double fraction, CorruptionKind kind, double epsilon,
                            std::span<const FeatureStats> stats, Rng& rng, std::span<const double> modality_weights) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw DomainError("corrupt_split: fraction must lie in [0,1]");
  if (epsilon < 0.0) throw DomainError("corrupt_split: negative noise level");
  const std::size_t m = batch.modalities();
  if (!modality_weights.empty() && modality_weights.size() != m) {
    throw DimensionError("corrupt_split: " + std::to_string(modality_weights.size()) + " modality weights for " +
                         std::to_string(m) + " modalities");
  }
  ModalityBatch out = deep_copy(batch);
  out.tags.assign(batch.size(), std::nullopt);
  const auto chosen_count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(batch.size())));
  if (chosen_count == 0) return out;

  std::vector<std::size_t> order(batch.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> weights(modality_weights.begin(), modality_weights.end());
  if (weights.empty()) weights.assign(m, 1.0);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(chosen_count));
  std::sort(chosen.begin(), chosen.end());
  for (auto i : chosen) {
    const std::size_t mod = pick(rng);
    corrupt_row(out.features[mod], i, kind, epsilon, stats_for(stats, mod, kind), rng);
    out.tags[i] = CorruptionTag{mod, kind, epsilon};
  }
  return out;
}

ModalityBatch corrupt_modality(const ModalityBatch& batch, std::size_t modality, CorruptionKind kind, double epsilon,
                               std::span<const FeatureStats> stats, Rng& rng) {
  if (modality >= batch.modalities()) {
    throw IndexError("corrupt_modality: modality " + std::to_string(modality) + " out of range");
  }
  ModalityBatch out = deep_copy(batch);
  auto& f = out.features[modality];
  f = kind == CorruptionKind::Gaussian ? inject_gaussian(f, epsilon, rng)
                                       : inject_salt(f, epsilon, *stats_for(stats, modality, kind), rng);
  out.tags.assign(batch.size(), CorruptionTag{modality, kind, epsilon});
  return out;
}

double linear_probe_accuracy(const ModalityBatch& train, const ModalityBatch& eval, std::size_t modality,
                             std::size_t num_classes, std::uint64_t seed, std::size_t epochs) {
  Rng rng(seed);
  const std::size_t d = train.features.at(modality).size(1);
  nn::Linear probe(d, num_classes);
  nn::init_params(probe, rng);
  nn::Optimizer opt(nn::tensors_of(probe.parameters()), {nn::OptimizerKind::Adam, 1e-2});
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batch = 64;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const ModalityBatch mb = train.select(idx);
      ad::Tape tape;
      const Tensor loss = ad::softmax_cross_entropy(probe.forward(mb.features[modality]), mb.labels);
      opt.zero_grad();
      tape.backward(loss);
      opt.step();
    }
  }
  const Tensor logits = probe.forward(eval.features.at(modality));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < num_classes; ++c)
      if (logits[i * num_classes + c] > logits[i * num_classes + best]) best = c;
    correct += best == eval.labels[i];
  }
  return static_cast<double>(correct) / static_cast<double>(eval.size());
}

// ---------------------------------------------------------------------------
// File format

void write_dataset(const std::filesystem::path& path, const ModalityBatch& batch, std::size_t num_classes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write dataset " + path.string());
  std::string dims;
  for (std::size_t m = 0; m < batch.modalities(); ++m) {
    if (m) dims += ',';
    dims += std::to_string(batch.features[m].size(1));
  }
  os << fmt::format("# udml-dataset v1 K={} M={} dims={}\n", num_classes, batch.modalities(), dims);
  fmt::memory_buffer line;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    line.clear();
    fmt::format_to(std::back_inserter(line), "{}", batch.labels[i]);
    for (const auto& f : batch.features) {
      const std::size_t d = f.size(1);
      for (std::size_t j = 0; j < d; ++j) fmt::format_to(std::back_inserter(line), ",{:.17g}", f[i * d + j]);
    }
    line.push_back('\n');
    os.write(line.data(), static_cast<std::streamsize>(line.size()));
  }
  if (!os) throw IoError("short write to dataset " + path.string());
}

LoadedSplit read_dataset(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read dataset " + path.string());
  std::string header;
  std::getline(is, header);
  std::size_t k = 0, m = 0;
  std::vector<std::size_t> dims;
  {
    std::istringstream hs(header);
    std::string hash, magic, version, tok;
    hs >> hash >> magic >> version;
    if (hash != "#" || magic != "udml-dataset" || version != "v1") throw IoError("not a udml dataset: " + path.string());
    while (hs >> tok) {
      if (tok.rfind("K=", 0) == 0) k = std::stoul(tok.substr(2));
      else if (tok.rfind("M=", 0) == 0) m = std::stoul(tok.substr(2));
      else if (tok.rfind("dims=", 0) == 0) {
        std::istringstream ds(tok.substr(5));
        std::string d;
        while (std::getline(ds, d, ',')) dims.push_back(std::stoul(d));
      }
    }
  }
  if (k < 2 || m == 0 || dims.size() != m) throw IoError("malformed dataset header in " + path.string());
  std::vector<std::vector<double>> cols(m);
  LoadedSplit out;
  out.num_classes = k;
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    if (!std::getline(ls, cell, ',')) throw IoError(fmt::format("{}:{}: empty row", path.string(), lineno));
    const std::size_t label = std::stoul(cell);
    if (label >= k) throw IoError(fmt::format("{}:{}: label {} outside [0,{})", path.string(), lineno, label, k));
    out.batch.labels.push_back(label);
    for (std::size_t mm = 0; mm < m; ++mm) {
      for (std::size_t j = 0; j < dims[mm]; ++j) {
        if (!std::getline(ls, cell, ',')) throw IoError(fmt::format("{}:{}: too few columns", path.string(), lineno));
        cols[mm].push_back(std::stod(cell));
      }
    }
    if (std::getline(ls, cell, ',')) throw IoError(fmt::format("{}:{}: too many columns", path.string(), lineno));
  }
  const std::size_t n = out.batch.labels.size();
  for (std::size_t mm = 0; mm < m; ++mm) out.batch.features.emplace_back(ad::Shape{n, dims[mm]}, std::move(cols[mm]));
  return out;
}

}  // namespace udml
