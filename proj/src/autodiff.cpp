#include "udml/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "udml/errors.hpp"

namespace udml::ad {

namespace {

thread_local Tape* g_active_tape = nullptr;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.dim() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
  }
}

// Softplus that stays accurate for large |x|.
double softplus_value(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& t, Fwd fwd, Deriv deriv) {
  std::vector<double> out(t.numel());
  const auto in = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  Tensor result(t.shape(), std::move(out));
  return Tape::record(result, {t}, [t, result, deriv](std::span<const double> g, std::span<const std::span<double>> dst) {
    const auto x = t.data();
    const auto y = result.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[0][i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : impl_(std::make_shared<detail::Storage>()) {
  impl_->shape = {0};
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<detail::Storage>()) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("Tensor: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value) {
  const std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

std::size_t Tensor::size(std::size_t axis) const {
  if (axis >= dim()) throw IndexError("Tensor::size: axis out of range for " + shape_str(shape()));
  return impl_->shape[axis];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  return impl_->data[row * impl_->shape.back() + col];
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

Tensor Tensor::clone() const {
  return Tensor(impl_->shape, impl_->data, impl_->requires_grad);
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape() : previous_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = previous_; }

Tape* Tape::active() { return g_active_tape; }

Tensor Tape::record(Tensor output, std::vector<Tensor> inputs, BackwardFn fn) {
  Tape* tape = g_active_tape;
  if (tape == nullptr) return output;
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.impl_->node && in.impl_->tape != tape) {
      throw ContractError("Tape: operand was recorded on a different tape");
    }
    needs = needs || in.requires_grad();
  }
  if (!needs) return output;
  output.impl_->requires_grad = true;
  output.impl_->node = tape->nodes_.size();
  output.impl_->tape = tape;
  tape->nodes_.push_back(Node{std::move(inputs), output.numel(), std::move(fn)});
  return output;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (!loss.impl_->node || loss.impl_->tape != this) {
    throw ContractError("backward: loss is not recorded on this tape");
  }
  const std::size_t root = *loss.impl_->node;
  std::vector<std::vector<double>> adjoint(root + 1);
  adjoint[root].assign(1, 1.0);

  std::vector<std::span<double>> dst;
  for (std::size_t id = root + 1; id-- > 0;) {
    if (adjoint[id].empty()) continue;
    Node& node = nodes_[id];
    dst.assign(node.inputs.size(), std::span<double>{});
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      auto& in = node.inputs[k];
      if (in.impl_->node) {
        auto& buf = adjoint[*in.impl_->node];
        if (buf.empty()) buf.assign(in.numel(), 0.0);
        dst[k] = buf;
      } else if (in.requires_grad()) {
        dst[k] = in.mutable_grad();
      }
    }
    node.fn(adjoint[id], dst);
    std::vector<double>().swap(adjoint[id]);
  }
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->backward(loss);
}

void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tape::record(Tensor(a.shape(), std::move(out)), {a, b},
                      [](std::span<const double> g, std::span<const std::span<double>> dst) {
                        for (const auto& d : dst) {
                          if (d.empty()) continue;
                          for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                        }
                      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return Tape::record(Tensor(a.shape(), std::move(out)), {a, b},
                      [](std::span<const double> g, std::span<const std::span<double>> dst) {
                        if (!dst[0].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) dst[0][i] += g[i];
                        if (!dst[1].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) dst[1][i] -= g[i];
                      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return Tape::record(Tensor(a.shape(), std::move(out)), {a, b},
                      [a, b](std::span<const double> g, std::span<const std::span<double>> dst) {
                        if (!dst[0].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) dst[0][i] += g[i] * b[i];
                        if (!dst[1].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) dst[1][i] += g[i] * a[i];
                      });
}

Tensor relu(const Tensor& t) {
  return unary(
      t, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh(const Tensor& t) {
  return unary(
      t, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& t) {
  return unary(t, softplus_value, [](double x, double) { return sigmoid(x); });
}

Tensor exp(const Tensor& t) {
  return unary(
      t, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
  for (double v : t.data()) {
    if (!(v > 0.0)) throw DomainError("log: non-positive input");
  }
  return unary(
      t, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor square(const Tensor& t) {
  return unary(
      t, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor add_scalar(const Tensor& t, double c) {
  return unary(
      t, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& t, double c) {
  return unary(
      t, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

// ---------------------------------------------------------------------------
// Linear algebra and layout

namespace {

// c[n,m] += a[n,k] * b[k,m]
void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t n = a.size(0), k = a.size(1), m = b.size(1);
  if (b.size(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), n, k, m);
  return Tape::record(Tensor({n, m}, std::move(out)), {a, b},
                      [a, b, n, k, m](std::span<const double> g, std::span<const std::span<double>> dst) {
                        const double* ad = a.data().data();
                        const double* bd = b.data().data();
                        if (!dst[0].empty()) {
                          // dA[i,p] += sum_j g[i,j] * B[p,j]
                          for (std::size_t i = 0; i < n; ++i) {
                            const double* grow = g.data() + i * m;
                            for (std::size_t p = 0; p < k; ++p) {
                              const double* brow = bd + p * m;
                              double acc = 0.0;
                              for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
                              dst[0][i * k + p] += acc;
                            }
                          }
                        }
                        if (!dst[1].empty()) {
                          // dB[p,j] += sum_i A[i,p] * g[i,j]
                          double* db = dst[1].data();
                          for (std::size_t i = 0; i < n; ++i) {
                            const double* grow = g.data() + i * m;
                            for (std::size_t p = 0; p < k; ++p) {
                              const double av = ad[i * k + p];
                              if (av == 0.0) continue;
                              double* dbrow = db + p * m;
                              for (std::size_t j = 0; j < m; ++j) dbrow[j] += av * grow[j];
                            }
                          }
                        }
                      });
}

Tensor transpose(const Tensor& t) {
  require_rank("transpose", t, 2);
  const std::size_t r = t.size(0), c = t.size(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = t[i * c + j];
  return Tape::record(Tensor({c, r}, std::move(out)), {t},
                      [r, c](std::span<const double> g, std::span<const std::span<double>> dst) {
                        for (std::size_t i = 0; i < r; ++i)
                          for (std::size_t j = 0; j < c; ++j) dst[0][i * c + j] += g[j * r + i];
                      });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(t.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  return Tape::record(Tensor(std::move(shape), std::move(out)), {t},
                      [](std::span<const double> g, std::span<const std::span<double>> dst) {
                        for (std::size_t i = 0; i < g.size(); ++i) dst[0][i] += g[i];
                      });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", x, 2);
  require_rank("add_bias", bias, 1);
  const std::size_t n = x.size(0), m = x.size(1);
  if (bias.size(0) != m) {
    throw DimensionError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(bias.shape()));
  }
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] + bias[j];
  return Tape::record(Tensor({n, m}, std::move(out)), {x, bias},
                      [n, m](std::span<const double> g, std::span<const std::span<double>> dst) {
                        if (!dst[0].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) dst[0][i] += g[i];
                        if (!dst[1].empty())
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) dst[1][j] += g[i * m + j];
                      });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_rank("scale_rows", x, 2);
  require_rank("scale_rows", s, 1);
  const std::size_t n = x.size(0), m = x.size(1);
  if (s.size(0) != n) {
    throw DimensionError("scale_rows: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(s.shape()));
  }
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = x[i * m + j] * s[i];
  return Tape::record(Tensor({n, m}, std::move(out)), {x, s},
                      [x, s, n, m](std::span<const double> g, std::span<const std::span<double>> dst) {
                        if (!dst[0].empty())
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) dst[0][i * m + j] += g[i * m + j] * s[i];
                        if (!dst[1].empty())
                          for (std::size_t i = 0; i < n; ++i)
                            for (std::size_t j = 0; j < m; ++j) dst[1][i] += g[i * m + j] * x[i * m + j];
                      });
}

namespace {

// View a tensor as [outer, axis_len, inner] around `axis`.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

Tensor concat(std::span<const Tensor> tensors, std::size_t axis) {
  if (tensors.empty()) throw DimensionError("concat: no operands");
  const Shape& first = tensors[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const auto& t : tensors) {
    const Shape& s = t.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) throw DimensionError("concat: shape mismatch " + shape_str(first) + " vs " + shape_str(s));
    out_shape[axis] += s[axis];
  }
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<double> out(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    offsets.push_back(offset);
    const AxisView tv = axis_view(t.shape(), axis);
    const std::size_t chunk = tv.len * tv.inner;
    for (std::size_t o = 0; o < tv.outer; ++o) {
      std::copy_n(t.data().begin() + o * chunk, chunk, out.begin() + o * ov.len * ov.inner + offset * ov.inner);
    }
    offset += tv.len;
  }
  std::vector<Tensor> inputs(tensors.begin(), tensors.end());
  std::vector<AxisView> views;
  for (const auto& t : tensors) views.push_back(axis_view(t.shape(), axis));
  return Tape::record(Tensor(std::move(out_shape), std::move(out)), std::move(inputs),
                      [ov, views, offsets](std::span<const double> g, std::span<const std::span<double>> dst) {
                        for (std::size_t k = 0; k < dst.size(); ++k) {
                          if (dst[k].empty()) continue;
                          const std::size_t chunk = views[k].len * views[k].inner;
                          for (std::size_t o = 0; o < views[k].outer; ++o) {
                            const double* src = g.data() + o * ov.len * ov.inner + offsets[k] * ov.inner;
                            double* d = dst[k].data() + o * chunk;
                            for (std::size_t i = 0; i < chunk; ++i) d[i] += src[i];
                          }
                        }
                      });
}

Tensor slice(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= t.dim()) throw DimensionError("slice: axis out of range for " + shape_str(t.shape()));
  if (begin > end || end > t.size(axis)) {
    throw IndexError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                     shape_str(t.shape()));
  }
  Shape out_shape = t.shape();
  out_shape[axis] = end - begin;
  const AxisView tv = axis_view(t.shape(), axis);
  const std::size_t chunk = (end - begin) * tv.inner;
  std::vector<double> out(shape_numel(out_shape));
  for (std::size_t o = 0; o < tv.outer; ++o) {
    std::copy_n(t.data().begin() + o * tv.len * tv.inner + begin * tv.inner, chunk, out.begin() + o * chunk);
  }
  return Tape::record(Tensor(std::move(out_shape), std::move(out)), {t},
                      [tv, chunk, begin](std::span<const double> g, std::span<const std::span<double>> dst) {
                        for (std::size_t o = 0; o < tv.outer; ++o) {
                          double* d = dst[0].data() + o * tv.len * tv.inner + begin * tv.inner;
                          const double* src = g.data() + o * chunk;
                          for (std::size_t i = 0; i < chunk; ++i) d[i] += src[i];
                        }
                      });
}

// ---------------------------------------------------------------------------
// Reductions and losses

Tensor sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return Tape::record(Tensor::scalar(s), {t}, [](std::span<const double> g, std::span<const std::span<double>> dst) {
    for (auto& d : dst[0]) d += g[0];
  });
}

Tensor mean(const Tensor& t) {
  if (t.numel() == 0) throw DimensionError("mean: empty tensor");
  double s = 0.0;
  for (double v : t.data()) s += v;
  const double n = static_cast<double>(t.numel());
  return Tape::record(Tensor::scalar(s / n), {t},
                      [n](std::span<const double> g, std::span<const std::span<double>> dst) {
                        for (auto& d : dst[0]) d += g[0] / n;
                      });
}

Tensor detach(const Tensor& t) {
  return Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end()), false);
}

namespace {

// Row-wise log-softmax cross-entropy; fills probs with softmax(row).
double row_cross_entropy(std::span<const double> row, std::size_t label, std::span<double> probs) {
  const double mx = *std::max_element(row.begin(), row.end());
  double z = 0.0;
  for (std::size_t k = 0; k < row.size(); ++k) {
    probs[k] = std::exp(row[k] - mx);
    z += probs[k];
  }
  for (auto& p : probs) p /= z;
  return -(row[label] - mx - std::log(z));
}

}  // namespace

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  require_rank("softmax_cross_entropy", logits, 1);
  const std::size_t k = logits.size(0);
  if (k < 2) throw DimensionError("softmax_cross_entropy: need at least 2 classes, got " + shape_str(logits.shape()));
  if (label >= k) {
    throw IndexError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0," + std::to_string(k) + ")");
  }
  std::vector<double> probs(k);
  const double loss = row_cross_entropy(logits.data(), label, probs);
  return Tape::record(Tensor::scalar(loss), {logits},
                      [probs, label](std::span<const double> g, std::span<const std::span<double>> dst) {
                        for (std::size_t i = 0; i < probs.size(); ++i) {
                          dst[0][i] += g[0] * (probs[i] - (i == label ? 1.0 : 0.0));
                        }
                      });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels) {
  require_rank("softmax_cross_entropy", logits, 2);
  const std::size_t b = logits.size(0), k = logits.size(1);
  if (k < 2) throw DimensionError("softmax_cross_entropy: need at least 2 classes, got " + shape_str(logits.shape()));
  if (labels.size() != b) {
    throw DimensionError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  }
  std::vector<double> probs(b * k);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] >= k) {
      throw IndexError("softmax_cross_entropy: label " + std::to_string(labels[i]) + " outside [0," +
                       std::to_string(k) + ")");
    }
    total += row_cross_entropy(logits.data().subspan(i * k, k), labels[i], std::span(probs).subspan(i * k, k));
  }
  std::vector<std::size_t> lab(labels.begin(), labels.end());
  return Tape::record(Tensor::scalar(total / static_cast<double>(b)), {logits},
                      [probs, lab, b, k](std::span<const double> g, std::span<const std::span<double>> dst) {
                        const double scale = g[0] / static_cast<double>(b);
                        for (std::size_t i = 0; i < b; ++i)
                          for (std::size_t j = 0; j < k; ++j)
                            dst[0][i * k + j] += scale * (probs[i * k + j] - (j == lab[i] ? 1.0 : 0.0));
                      });
}

Tensor mse(const Tensor& a, const Tensor& b) {
  require_same_shape("mse", a, b);
  if (a.numel() == 0) throw DimensionError("mse: empty operands");
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return Tape::record(Tensor::scalar(s / n), {a, b},
                      [a, b, n](std::span<const double> g, std::span<const std::span<double>> dst) {
                        for (std::size_t i = 0; i < a.numel(); ++i) {
                          const double d = 2.0 * g[0] * (a[i] - b[i]) / n;
                          if (!dst[0].empty()) dst[0][i] += d;
                          if (!dst[1].empty()) dst[1][i] -= d;
                        }
                      });
}

double l1_distance(const Tensor& a, const Tensor& b) {
  require_same_shape("l1_distance", a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

Tensor gaussian_sample(const Tensor& mu, const Tensor& sigma2, Rng& rng) {
  require_same_shape("gaussian_sample", mu, sigma2);
  for (double v : sigma2.data()) {
    if (v < 0.0 || std::isnan(v)) throw DomainError("gaussian_sample: negative variance");
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t n = mu.numel();
  std::vector<double> eps(n), out(n);
  for (std::size_t i = 0; i < n; ++i) {
    eps[i] = normal(rng);
    out[i] = mu[i] + std::sqrt(sigma2[i]) * eps[i];
  }
  return Tape::record(Tensor(mu.shape(), std::move(out)), {mu, sigma2},
                      [sigma2, eps](std::span<const double> g, std::span<const std::span<double>> dst) {
                        if (!dst[0].empty())
                          for (std::size_t i = 0; i < g.size(); ++i) dst[0][i] += g[i];
                        if (!dst[1].empty()) {
                          for (std::size_t i = 0; i < g.size(); ++i) {
                            const double sd = std::sqrt(sigma2[i]);
                            // d sqrt(v)/dv is unbounded at v = 0; treat the degenerate case as flat.
                            if (sd > 0.0) dst[1][i] += g[i] * eps[i] / (2.0 * sd);
                          }
                        }
                      });
}

}  // namespace udml::ad
