#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "udml/autodiff.hpp"

namespace udml::nn {

using ad::Rng;
using ad::Tensor;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// Prefixes every name in `params` with `prefix` + '.' and appends to `out`.
void append_params(ParamList& out, const std::string& prefix, const ParamList& params);

// Throws ContractError if any storage appears in both lists.
void require_disjoint(const ParamList& a, const ParamList& b);

std::vector<Tensor> tensors_of(const ParamList& params);

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features);

  // x[batch, in] -> [batch, out]
  Tensor forward(const Tensor& x) const;

  std::size_t in_features() const { return weight_.size(1); }
  std::size_t out_features() const { return weight_.size(0); }

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

  ParamList parameters() const;

 private:
  Tensor weight_;  // [out, in]
  Tensor bias_;    // [out]
};

// Affine layers with ReLU between them. `final_activation` adds a ReLU
// after the last layer as well.
class Mlp {
 public:
  Mlp() = default;
  // sizes = {in, hidden..., out}; at least two entries.
  explicit Mlp(const std::vector<std::size_t>& sizes, bool final_activation = false);

  Tensor forward(const Tensor& x) const;

  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }
  std::vector<Linear>& layers() { return layers_; }
  const std::vector<Linear>& layers() const { return layers_; }

  ParamList parameters() const;

 private:
  std::vector<Linear> layers_;
  bool final_activation_ = false;
};

// Glorot-uniform weights, zero biases.
void init_params(Linear& layer, Rng& rng);
void init_params(Mlp& mlp, Rng& rng);

enum class OptimizerKind { Sgd, Adam };

OptimizerKind parse_optimizer_kind(const std::string& text);
std::string to_string(OptimizerKind kind);

struct OptimizerOptions {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 1e-3;
  double momentum = 0.9;  // SGD momentum, or Adam beta1
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// SGD with heavy-ball momentum or Adam, over one fixed parameter group.
class Optimizer {
 public:
  Optimizer(std::vector<Tensor> params, OptimizerOptions options);

  // Requires every parameter to carry a gradient (ContractError otherwise).
  void step();
  void zero_grad();

  double lr() const { return options_.lr; }
  void set_lr(double lr) { options_.lr = lr; }
  std::size_t step_count() const { return steps_; }
  const OptimizerOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  OptimizerOptions options_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t steps_ = 0;
};

// Halves the learning rate when the monitored loss has not improved for
// `patience` consecutive epochs.
class ReduceOnPlateau {
 public:
  explicit ReduceOnPlateau(std::size_t patience = 5, double factor = 0.5) : patience_(patience), factor_(factor) {}

  // Returns true if the learning rate was reduced.
  bool observe(double loss, Optimizer& opt);

 private:
  std::size_t patience_;
  double factor_;
  double best_ = 0.0;
  bool has_best_ = false;
  std::size_t bad_epochs_ = 0;
};

// Checkpoint layout: one manifest line per tensor, `name d0 d1 ...\n`, then
// the two bytes "\n\n", then all tensor data in manifest order as
// little-endian IEEE-754 doubles.
void save_checkpoint(const std::filesystem::path& path, const ParamList& tensors);
ParamList load_checkpoint(const std::filesystem::path& path);

// Copies values from `source` into the same-named tensors of `target`.
// Missing names or shape mismatches raise.
void assign_params(const ParamList& target, const ParamList& source);

}  // namespace udml::nn
