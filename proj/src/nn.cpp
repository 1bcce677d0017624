#include "udml/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

#include "udml/errors.hpp"

namespace udml::nn {

void append_params(ParamList& out, const std::string& prefix, const ParamList& params) {
  for (const auto& p : params) out.push_back({prefix + "." + p.name, p.tensor});
}

void require_disjoint(const ParamList& a, const ParamList& b) {
  for (const auto& x : a) {
    for (const auto& y : b) {
      if (x.tensor.same_storage(y.tensor)) {
        throw ContractError("parameter groups overlap: " + x.name + " aliases " + y.name);
      }
    }
  }
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

// ---------------------------------------------------------------------------

Linear::Linear(std::size_t in_features, std::size_t out_features)
    : weight_(Tensor::zeros({out_features, in_features}, true)), bias_(Tensor::zeros({out_features}, true)) {}

Tensor Linear::forward(const Tensor& x) const {
  if (x.dim() != 2 || x.size(1) != in_features()) {
    throw DimensionError("linear: input " + ad::shape_str(x.shape()) + " does not match weight " +
                         ad::shape_str(weight_.shape()));
  }
  return ad::add_bias(ad::matmul(x, ad::transpose(weight_)), bias_);
}

ParamList Linear::parameters() const { return {{"weight", weight_}, {"bias", bias_}}; }

Mlp::Mlp(const std::vector<std::size_t>& sizes, bool final_activation) : final_activation_(final_activation) {
  if (sizes.size() < 2) throw DimensionError("Mlp: need at least input and output sizes");
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) layers_.emplace_back(sizes[i], sizes[i + 1]);
}

Tensor Mlp::forward(const Tensor& x) const {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size() || final_activation_) h = ad::relu(h);
  }
  return h;
}

ParamList Mlp::parameters() const {
  ParamList out;
  for (std::size_t i = 0; i < layers_.size(); ++i) append_params(out, std::to_string(i), layers_[i].parameters());
  return out;
}

void init_params(Linear& layer, Rng& rng) {
  const double fan_in = static_cast<double>(layer.in_features());
  const double fan_out = static_cast<double>(layer.out_features());
  const double s = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-s, s);
  for (auto& w : layer.weight().mutable_data()) w = dist(rng);
  for (auto& b : layer.bias().mutable_data()) b = 0.0;
}

void init_params(Mlp& mlp, Rng& rng) {
  for (auto& layer : mlp.layers()) init_params(layer, rng);
}

// ---------------------------------------------------------------------------

OptimizerKind parse_optimizer_kind(const std::string& text) {
  if (text == "sgd") return OptimizerKind::Sgd;
  if (text == "adam") return OptimizerKind::Adam;
  throw ConfigError("unknown optimizer '" + text + "' (expected sgd|adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(std::vector<Tensor> params, OptimizerOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    if (options_.kind == OptimizerKind::Adam) v_.emplace_back(p.numel(), 0.0);
  }
}

void Optimizer::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw ContractError("optimizer step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  ++steps_;
  const auto& o = options_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    const auto g = params_[i].grad();
    auto& m = m_[i];
    if (o.kind == OptimizerKind::Sgd) {
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j] + o.weight_decay * p[j];
        m[j] = o.momentum * m[j] + gj;
        p[j] -= o.lr * m[j];
      }
    } else {
      auto& v = v_[i];
      const double t = static_cast<double>(steps_);
      const double c1 = 1.0 - std::pow(o.momentum, t);
      const double c2 = 1.0 - std::pow(o.beta2, t);
      for (std::size_t j = 0; j < p.size(); ++j) {
        const double gj = g[j] + o.weight_decay * p[j];
        m[j] = o.momentum * m[j] + (1.0 - o.momentum) * gj;
        v[j] = o.beta2 * v[j] + (1.0 - o.beta2) * gj * gj;
        p[j] -= o.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + o.eps);
      }
    }
  }
}

void Optimizer::zero_grad() { ad::zero_grad(params_); }

bool ReduceOnPlateau::observe(double loss, Optimizer& opt) {
  if (!has_best_ || loss < best_) {
    best_ = loss;
    has_best_ = true;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ < patience_) return false;
  opt.set_lr(opt.lr() * factor_);
  bad_epochs_ = 0;
  return true;
}

// ---------------------------------------------------------------------------

namespace {

void put_le(std::ostream& os, double value) {
  auto bits = std::bit_cast<std::uint64_t>(value);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
  os.write(bytes, 8);
}

double get_le(const unsigned char* bytes) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList& tensors) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint " + path.string());
  for (const auto& t : tensors) {
    if (t.name.empty() || t.name.find_first_of(" \n") != std::string::npos) {
      throw ContractError("checkpoint: invalid tensor name '" + t.name + "'");
    }
    os << t.name;
    for (auto d : t.tensor.shape()) os << ' ' << d;
    os << '\n';
  }
  os << "\n\n";
  for (const auto& t : tensors)
    for (double v : t.tensor.data()) put_le(os, v);
  if (!os) throw IoError("short write to checkpoint " + path.string());
}

ParamList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::vector<std::pair<std::string, ad::Shape>> manifest;
  std::string line;
  while (std::getline(is, line) && !line.empty()) {
    std::istringstream ls(line);
    std::string name;
    ls >> name;
    ad::Shape shape;
    std::size_t d;
    while (ls >> d) shape.push_back(d);
    if (name.empty() || shape.empty()) throw IoError("checkpoint: malformed manifest line '" + line + "'");
    manifest.emplace_back(name, shape);
  }
  if (is.get() != '\n') throw IoError("checkpoint: missing manifest terminator in " + path.string());
  std::vector<unsigned char> payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::size_t total = 0;
  for (const auto& [name, shape] : manifest) total += ad::shape_numel(shape);
  if (payload.size() != total * 8) {
    throw IoError("checkpoint: expected " + std::to_string(total * 8) + " data bytes, found " +
                  std::to_string(payload.size()));
  }
  ParamList out;
  std::size_t offset = 0;
  for (const auto& [name, shape] : manifest) {
    std::vector<double> values(ad::shape_numel(shape));
    for (auto& v : values) {
      v = get_le(payload.data() + offset);
      offset += 8;
    }
    out.push_back({name, Tensor(shape, std::move(values))});
  }
  return out;
}

void assign_params(const ParamList& target, const ParamList& source) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : source) by_name[s.name] = &s.tensor;
  for (const auto& t : target) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) throw IoError("checkpoint: missing tensor " + t.name);
    if (it->second->shape() != t.tensor.shape()) {
      throw DimensionError("checkpoint: tensor " + t.name + " has shape " + ad::shape_str(it->second->shape()) +
                           ", expected " + ad::shape_str(t.tensor.shape()));
    }
    auto dst = Tensor(t.tensor).mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), dst.begin());
  }
}

}  // namespace udml::nn
