#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// tensors of doubles.
//
// Operations record onto the thread's active Tape when any operand
// requires a gradient. A Tape is meant to live for exactly one forward /
// backward pass; when no Tape is active (or a NoGradGuard is in scope)
// operations compute values only.
//
// There is no broadcasting. Elementwise ops demand equal shapes, and the
// few row-wise ops (add_bias, scale_rows) spell out their layout.

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace udml::ad {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class Tape;

namespace detail {
struct Storage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::optional<std::size_t> node;
  const Tape* tape = nullptr;
};
}  // namespace detail

// Handle to shared tensor storage. Copying a Tensor aliases it; use
// clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const;
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool value) { impl_->requires_grad = value; }

  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad();
  void zero_grad();

  // True when this tensor is an interior node of some tape.
  bool on_tape() const { return impl_->node.has_value(); }

  Tensor clone() const;
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::Storage> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::Storage> impl_;
};

// Ordered record of operations for one forward pass. Constructing a Tape
// makes it the active tape on the calling thread; destruction restores the
// previously active one.
class Tape {
 public:
  // Receives the output adjoint and one destination per input; a
  // destination is empty when that input needs no gradient. Rules must
  // accumulate (+=) into destinations.
  using BackwardFn =
      std::function<void(std::span<const double> out_grad, std::span<const std::span<double>> in_grads)>;

  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();

  std::size_t size() const { return nodes_.size(); }

  // Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable
  // from `loss`. Interior adjoints are local to the call, so repeated calls
  // add the same amount again.
  void backward(const Tensor& loss);

  // Registers `output` as the result of an op over `inputs` if recording
  // applies; returns output either way.
  static Tensor record(Tensor output, std::vector<Tensor> inputs, BackwardFn fn);

 private:
  friend class NoGradGuard;
  struct Node {
    std::vector<Tensor> inputs;
    std::size_t numel;
    BackwardFn fn;
  };
  std::vector<Node> nodes_;
  Tape* previous_;
};

// Suspends recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

void backward(const Tensor& loss);
void zero_grad(std::span<Tensor> params);

// Elementwise (equal shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& t);
Tensor tanh(const Tensor& t);
Tensor softplus(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor square(const Tensor& t);
Tensor add_scalar(const Tensor& t, double c);
Tensor mul_scalar(const Tensor& t, double c);

// [n,k] x [k,m] -> [n,m]
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);
Tensor reshape(const Tensor& t, Shape shape);

// x[n,m] + b[m] on every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// Row r of x[n,m] multiplied by s[r], s of shape [n].
Tensor scale_rows(const Tensor& x, const Tensor& s);

Tensor concat(std::span<const Tensor> tensors, std::size_t axis);
// Half-open [begin, end) along `axis`.
Tensor slice(const Tensor& t, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

// Returns a tensor with the same values and no link to `t`'s history.
Tensor detach(const Tensor& t);

// -log softmax(logits)[label] for logits of shape [K].
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label);
// Batch mean of the above for logits [B,K].
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const std::size_t> labels);

Tensor mse(const Tensor& a, const Tensor& b);

// Off-tape sum of absolute differences.
double l1_distance(const Tensor& a, const Tensor& b);

// mu + sqrt(sigma2) * eps, eps ~ N(0, I). Differentiable in mu and sigma2.
Tensor gaussian_sample(const Tensor& mu, const Tensor& sigma2, Rng& rng);

}  // namespace udml::ad
