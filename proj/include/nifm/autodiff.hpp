#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// double-precision tensors.
//
// Operations record a backward closure on the thread's active Tape (see
// Recording) whenever one of their inputs requires a gradient. Without an
// active tape the same code path computes values only, so forward results do
// not depend on whether gradients are being recorded.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace nifm::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double v, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t size() const { return node_->value.size(); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  std::span<double> grad() { return node_->grad; }
  std::span<const double> grad() const { return node_->grad; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool on);
  void zero_grad();

  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }

  /// Deep copy without gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const { return node_; }
  static Tensor wrap(std::shared_ptr<Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

 private:
  std::shared_ptr<Node> node_;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

  /// Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. The loss must
  /// hold exactly one element. A tape can be replayed once.
  void backward(const Tensor& loss);

  std::size_t size() const { return ops_.size(); }
  bool consumed() const { return consumed_; }

 private:
  std::vector<std::function<void()>> ops_;
  bool consumed_ = false;
};

/// Makes `tape` the active tape of the calling thread for the scope lifetime.
class Recording {
 public:
  explicit Recording(Tape& tape);
  ~Recording();
  Recording(const Recording&) = delete;
  Recording& operator=(const Recording&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Builds an op from precomputed values. `backward` runs during replay and
/// must accumulate into the grads of `inputs` that require them.
Tensor custom_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                 std::function<void(const Node& out)> backward);

// Elementwise (identical shapes)
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor relu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);
Tensor lgamma(const Tensor& x);

/// x[..., n] + b[n]
Tensor add_bias(const Tensor& x, const Tensor& b);
/// a[m, k] @ b[k, n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// x[r, in] @ w[out, in]^T + b[out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
/// Cross-correlation: x[B, C, L], w[O, C, K], b[O] -> [B, O, (L + 2p - K) / s + 1]
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t padding);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;
};

/// x[B, F]. Training mode normalises by batch statistics and updates the
/// running estimates; evaluation mode is the affine map of the running ones.
Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   bool training);

/// Reduces the given axis by its mean (the axis is removed).
Tensor mean_axis(const Tensor& x, std::size_t axis);
/// Sum of all elements, shape {1}.
Tensor sum(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
/// Half-open slice [begin, end) of the last axis.
Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end);
/// Concatenation along the last axis.
Tensor concat_last(const std::vector<Tensor>& parts);
/// out[..., i] = x[..., index[i]] (indices may repeat).
Tensor gather_last(const Tensor& x, const std::vector<std::size_t>& index);

struct AdamConfig {
  double lr = 9e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update from the grads stored in `params`.
void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& config);

}  // namespace nifm::ad
