#include "nifm/autodiff.hpp"

#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <numeric>
#include <sstream>

#include "nifm/errors.hpp"
#include "nifm/kernels.hpp"

namespace nifm::ad {
namespace {

thread_local Tape* g_active_tape = nullptr;

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  if (requires_grad) n->grad.assign(n->value.size(), 0.0);
  return n;
}

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t->requires_grad()) return true;
  return false;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     to_string(t.shape()));
}

// Unary elementwise op with derivative expressed through (x, y).
template <class Fwd, class Deriv>
Tensor unary(const Tensor& x, Fwd fwd, Deriv deriv) {
  std::vector<double> out(x.size());
  const auto xv = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
  const bool track = tracking({&x});
  auto node = make_node(x.shape(), std::move(out), track);
  if (track) {
    auto xn = x.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, on, deriv] {
      for (std::size_t i = 0; i < on->value.size(); ++i)
        xn->grad[i] += on->grad[i] * deriv(xn->value[i], on->value[i]);
    });
  }
  return Tensor::wrap(node);
}

}  // namespace

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
  const std::size_t n = numel(shape);
  return wrap(make_node(std::move(shape), std::vector<double>(n, v), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (numel(shape) != values.size())
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     to_string(shape));
  return wrap(make_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

void Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on)
    node_->grad.assign(node_->value.size(), 0.0);
  else
    node_->grad.clear();
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item: tensor has shape " + to_string(shape()));
  return node_->value[0];
}

Tensor Tensor::detach() const { return from(shape(), node_->value, false); }

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("Tape::backward: tape already replayed; run a new forward pass");
  if (loss.size() != 1)
    throw ShapeError("Tape::backward: loss must be scalar, got " + to_string(loss.shape()));
  if (!loss.requires_grad()) throw std::logic_error("Tape::backward: loss does not require grad");
  consumed_ = true;
  loss.node()->grad[0] = 1.0;
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  ops_.clear();
}

Recording::Recording(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
Recording::~Recording() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

Tensor custom_op(Shape shape, std::vector<double> value, const std::vector<Tensor>& inputs,
                 std::function<void(const Node& out)> backward) {
  bool track = false;
  if (g_active_tape != nullptr)
    for (const auto& t : inputs) track = track || t.requires_grad();
  auto node = make_node(std::move(shape), std::move(value), track);
  if (track) {
    std::shared_ptr<Node> on = node;
    // the inputs are kept alive by the closure
    std::vector<std::shared_ptr<Node>> keep;
    for (const auto& t : inputs) keep.push_back(t.node());
    g_active_tape->record([on, keep = std::move(keep), backward = std::move(backward)] { backward(*on); });
  }
  return Tensor::wrap(node);
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  const bool track = tracking({&a, &b});
  auto node = make_node(a.shape(), std::move(out), track);
  if (track) {
    auto an = a.node(), bn = b.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([an, bn, on] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i];
    });
  }
  return Tensor::wrap(node);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  const bool track = tracking({&a, &b});
  auto node = make_node(a.shape(), std::move(out), track);
  if (track) {
    auto an = a.node(), bn = b.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([an, bn, on] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] -= on->grad[i];
    });
  }
  return Tensor::wrap(node);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  const bool track = tracking({&a, &b});
  auto node = make_node(a.shape(), std::move(out), track);
  if (track) {
    auto an = a.node(), bn = b.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([an, bn, on] {
      if (an->requires_grad)
        for (std::size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * bn->value[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i] += on->grad[i] * an->value[i];
    });
  }
  return Tensor::wrap(node);
}

Tensor scale(const Tensor& a, double s) {
  return unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& a, double s) {
  return unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  kernels::active().relu(out.size(), x.data().data(), out.data());
  const bool track = tracking({&x});
  auto node = make_node(x.shape(), std::move(out), track);
  if (track) {
    auto xn = x.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, on] {
      kernels::active().relu_backward(on->grad.size(), xn->value.data(), on->grad.data(), xn->grad.data());
    });
  }
  return Tensor::wrap(node);
}

Tensor softplus(const Tensor& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Tensor exp(const Tensor& x) {
  return unary(x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor lgamma(const Tensor& x) {
  return unary(x, [](double v) { return std::lgamma(v); },
               [](double v, double) { return boost::math::digamma(v); });
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
  require_rank("add_bias", b, 1);
  const std::size_t n = b.size();
  if (x.rank() == 0 || x.shape().back() != n)
    throw ShapeError("add_bias: shape mismatch " + to_string(x.shape()) + " vs " + to_string(b.shape()));
  std::vector<double> out(x.data().begin(), x.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
  const bool track = tracking({&x, &b});
  auto node = make_node(x.shape(), std::move(out), track);
  if (track) {
    auto xn = x.node(), bn = b.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, bn, on, n] {
      if (xn->requires_grad)
        for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < on->grad.size(); ++i) bn->grad[i % n] += on->grad[i];
    });
  }
  return Tensor::wrap(node);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<double> out(m * n);
  kernels::active().gemm_nn(m, n, k, a.data().data(), k, b.data().data(), n, out.data(), n, false);
  const bool track = tracking({&a, &b});
  auto node = make_node({m, n}, std::move(out), track);
  if (track) {
    auto an = a.node(), bn = b.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([an, bn, on, m, k, n] {
      const auto& kt = kernels::active();
      // dA = dC B^T, dB = A^T dC
      if (an->requires_grad)
        kt.gemm_nt(m, k, n, on->grad.data(), n, bn->value.data(), n, an->grad.data(), k, true);
      if (bn->requires_grad)
        kt.gemm_tn(k, n, m, an->value.data(), k, on->grad.data(), n, bn->grad.data(), n, true);
    });
  }
  return Tensor::wrap(node);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_rank("linear", x, 2);
  require_rank("linear", w, 2);
  const std::size_t r = x.dim(0), in = x.dim(1), out_f = w.dim(0);
  if (w.dim(1) != in || b.size() != out_f)
    throw ShapeError("linear: shape mismatch x" + to_string(x.shape()) + " w" + to_string(w.shape()) +
                     " b" + to_string(b.shape()));
  std::vector<double> out(r * out_f);
  kernels::active().gemm_nt(r, out_f, in, x.data().data(), in, w.data().data(), in, out.data(), out_f, false);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < out_f; ++j) out[i * out_f + j] += b[j];
  const bool track = tracking({&x, &w, &b});
  auto node = make_node({r, out_f}, std::move(out), track);
  if (track) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, wn, bn, on, r, in, out_f] {
      const auto& kt = kernels::active();
      const double* g = on->grad.data();
      if (xn->requires_grad) kt.gemm_nn(r, in, out_f, g, out_f, wn->value.data(), in, xn->grad.data(), in, true);
      if (wn->requires_grad) kt.gemm_tn(out_f, in, r, g, out_f, xn->value.data(), in, wn->grad.data(), in, true);
      if (bn->requires_grad)
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < out_f; ++j) bn->grad[j] += g[i * out_f + j];
    });
  }
  return Tensor::wrap(node);
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride, std::size_t padding) {
  require_rank("conv1d", x, 3);
  require_rank("conv1d", w, 3);
  const std::size_t B = x.dim(0), C = x.dim(1), L = x.dim(2);
  const std::size_t O = w.dim(0), K = w.dim(2);
  if (w.dim(1) != C || b.size() != O)
    throw ShapeError("conv1d: shape mismatch x" + to_string(x.shape()) + " w" + to_string(w.shape()) +
                     " b" + to_string(b.shape()));
  if (stride == 0 || L + 2 * padding < K) throw ShapeError("conv1d: invalid stride/padding for " + to_string(x.shape()));
  const std::size_t Lout = (L + 2 * padding - K) / stride + 1;
  const std::size_t CK = C * K;
  const std::size_t rows = B * Lout;

  // im2col: row (b, l) holds x[b, c, l*stride + j - padding] at column c*K + j
  auto cols = std::make_shared<std::vector<double>>(rows * CK, 0.0);
  const auto xv = x.data();
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t l = 0; l < Lout; ++l) {
      double* row = cols->data() + (bi * Lout + l) * CK;
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < K; ++j) {
          const std::ptrdiff_t pos = static_cast<std::ptrdiff_t>(l * stride + j) - static_cast<std::ptrdiff_t>(padding);
          if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) row[c * K + j] = xv[(bi * C + c) * L + pos];
        }
    }
  std::vector<double> tmp(rows * O);
  kernels::active().gemm_nt(rows, O, CK, cols->data(), CK, w.data().data(), CK, tmp.data(), O, false);
  std::vector<double> out(B * O * Lout);
  for (std::size_t bi = 0; bi < B; ++bi)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t l = 0; l < Lout; ++l) out[(bi * O + o) * Lout + l] = tmp[(bi * Lout + l) * O + o] + b[o];

  const bool track = tracking({&x, &w, &b});
  auto node = make_node({B, O, Lout}, std::move(out), track);
  if (track) {
    auto xn = x.node(), wn = w.node(), bn = b.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([=] {
      const auto& kt = kernels::active();
      std::vector<double> g(rows * O);
      for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t o = 0; o < O; ++o)
          for (std::size_t l = 0; l < Lout; ++l) g[(bi * Lout + l) * O + o] = on->grad[(bi * O + o) * Lout + l];
      if (bn->requires_grad)
        for (std::size_t i = 0; i < rows; ++i)
          for (std::size_t o = 0; o < O; ++o) bn->grad[o] += g[i * O + o];
      if (wn->requires_grad) kt.gemm_tn(O, CK, rows, g.data(), O, cols->data(), CK, wn->grad.data(), CK, true);
      if (xn->requires_grad) {
        std::vector<double> dcols(rows * CK);
        kt.gemm_nn(rows, CK, O, g.data(), O, wn->value.data(), CK, dcols.data(), CK, false);
        for (std::size_t bi = 0; bi < B; ++bi)
          for (std::size_t l = 0; l < Lout; ++l) {
            const double* row = dcols.data() + (bi * Lout + l) * CK;
            for (std::size_t c = 0; c < C; ++c)
              for (std::size_t j = 0; j < K; ++j) {
                const std::ptrdiff_t pos =
                    static_cast<std::ptrdiff_t>(l * stride + j) - static_cast<std::ptrdiff_t>(padding);
                if (pos >= 0 && pos < static_cast<std::ptrdiff_t>(L)) xn->grad[(bi * C + c) * L + pos] += row[c * K + j];
              }
          }
      }
    });
  }
  return Tensor::wrap(node);
}

Tensor batchnorm1d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   bool training) {
  require_rank("batchnorm1d", x, 2);
  const std::size_t B = x.dim(0), F = x.dim(1);
  if (gamma.size() != F || beta.size() != F || state.running_mean.size() != F || state.running_var.size() != F)
    throw ShapeError("batchnorm1d: feature mismatch for input " + to_string(x.shape()));
  const auto xv = x.data();
  std::vector<double> mean(F, 0.0), invstd(F);
  if (training) {
    std::vector<double> var(F, 0.0);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t f = 0; f < F; ++f) mean[f] += xv[i * F + f];
    for (auto& m : mean) m /= static_cast<double>(B);
    for (std::size_t i = 0; i < B; ++i)
      for (std::size_t f = 0; f < F; ++f) {
        const double d = xv[i * F + f] - mean[f];
        var[f] += d * d;
      }
    for (std::size_t f = 0; f < F; ++f) {
      const double biased = var[f] / static_cast<double>(B);
      const double unbiased = B > 1 ? var[f] / static_cast<double>(B - 1) : biased;
      invstd[f] = 1.0 / std::sqrt(biased + state.eps);
      state.running_mean[f] = (1.0 - state.momentum) * state.running_mean[f] + state.momentum * mean[f];
      state.running_var[f] = (1.0 - state.momentum) * state.running_var[f] + state.momentum * unbiased;
    }
  } else {
    for (std::size_t f = 0; f < F; ++f) {
      mean[f] = state.running_mean[f];
      invstd[f] = 1.0 / std::sqrt(state.running_var[f] + state.eps);
    }
  }
  std::vector<double> xhat(B * F), out(B * F);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t k = i * F + f;
      xhat[k] = (xv[k] - mean[f]) * invstd[f];
      out[k] = gamma[f] * xhat[k] + beta[f];
    }
  const bool track = tracking({&x, &gamma, &beta});
  auto node = make_node({B, F}, std::move(out), track);
  if (track) {
    auto xn = x.node(), gn = gamma.node(), bn = beta.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, gn, bn, on, B, F, training, xhat = std::move(xhat), invstd = std::move(invstd)] {
      const auto& g = on->grad;
      if (gn->requires_grad || bn->requires_grad)
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t f = 0; f < F; ++f) {
            if (gn->requires_grad) gn->grad[f] += g[i * F + f] * xhat[i * F + f];
            if (bn->requires_grad) bn->grad[f] += g[i * F + f];
          }
      if (!xn->requires_grad) return;
      if (!training) {
        for (std::size_t i = 0; i < B; ++i)
          for (std::size_t f = 0; f < F; ++f) xn->grad[i * F + f] += g[i * F + f] * gn->value[f] * invstd[f];
        return;
      }
      std::vector<double> s1(F, 0.0), s2(F, 0.0);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t f = 0; f < F; ++f) {
          const double dxh = g[i * F + f] * gn->value[f];
          s1[f] += dxh;
          s2[f] += dxh * xhat[i * F + f];
        }
      const double nb = static_cast<double>(B);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t f = 0; f < F; ++f) {
          const double dxh = g[i * F + f] * gn->value[f];
          xn->grad[i * F + f] += invstd[f] / nb * (nb * dxh - s1[f] - xhat[i * F + f] * s2[f]);
        }
    });
  }
  return Tensor::wrap(node);
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) throw ShapeError("mean_axis: axis out of range for " + to_string(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape = {1};
  std::vector<double> out(outer * inner, 0.0);
  const auto xv = x.data();
  const double invn = 1.0 / static_cast<double>(n);
  for (std::size_t o = 0; o < outer; ++o) {
    double* dst = out.data() + o * inner;
    for (std::size_t j = 0; j < n; ++j) {
      const double* src = xv.data() + (o * n + j) * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < inner; ++i) dst[i] *= invn;
  }
  const bool track = tracking({&x});
  auto node = make_node(std::move(shape), std::move(out), track);
  if (track) {
    auto xn = x.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, on, outer, inner, n, invn] {
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t j = 0; j < n; ++j) {
          double* dst = xn->grad.data() + (o * n + j) * inner;
          const double* src = on->grad.data() + o * inner;
          for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * invn;
        }
    });
  }
  return Tensor::wrap(node);
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  const bool track = tracking({&x});
  auto node = make_node({1}, {s}, track);
  if (track) {
    auto xn = x.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, on] {
      for (auto& g : xn->grad) g += on->grad[0];
    });
  }
  return Tensor::wrap(node);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  std::vector<double> out(x.data().begin(), x.data().end());
  const bool track = tracking({&x});
  auto node = make_node(std::move(shape), std::move(out), track);
  if (track) {
    auto xn = x.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, on] {
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return Tensor::wrap(node);
}

Tensor slice_last(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() == 0 || begin > end || end > x.shape().back())
    throw ShapeError("slice_last: [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for " +
                     to_string(x.shape()));
  const std::size_t width = x.shape().back();
  const std::size_t rows = x.size() / width;
  const std::size_t w = end - begin;
  Shape shape = x.shape();
  shape.back() = w;
  std::vector<double> out(rows * w);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(xv.data() + r * width + begin, w, out.data() + r * w);
  const bool track = tracking({&x});
  auto node = make_node(std::move(shape), std::move(out), track);
  if (track) {
    auto xn = x.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, on, rows, width, begin, w] {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) xn->grad[r * width + begin + j] += on->grad[r * w + j];
    });
  }
  return Tensor::wrap(node);
}

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_last: no inputs");
  Shape lead = parts[0].shape();
  lead.pop_back();
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape l = p.shape();
    l.pop_back();
    if (l != lead) throw ShapeError("concat_last: leading shape mismatch " + to_string(parts[0].shape()) + " vs " + to_string(p.shape()));
    total += p.shape().back();
  }
  const std::size_t rows = numel(lead);
  std::vector<double> out(rows * total);
  std::size_t off = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    const std::size_t w = p.shape().back();
    offsets.push_back(off);
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(p.data().data() + r * w, w, out.data() + r * total + off);
    off += w;
  }
  Shape shape = lead;
  shape.push_back(total);
  bool track = false;
  if (g_active_tape != nullptr)
    for (const auto& p : parts) track = track || p.requires_grad();
  auto node = make_node(std::move(shape), std::move(out), track);
  if (track) {
    std::vector<std::shared_ptr<Node>> ins;
    for (const auto& p : parts) ins.push_back(p.node());
    std::shared_ptr<Node> on = node;
    g_active_tape->record([ins, on, offsets, rows, total] {
      for (std::size_t k = 0; k < ins.size(); ++k) {
        if (!ins[k]->requires_grad) continue;
        const std::size_t w = ins[k]->shape.back();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < w; ++j) ins[k]->grad[r * w + j] += on->grad[r * total + offsets[k] + j];
      }
    });
  }
  return Tensor::wrap(node);
}

Tensor gather_last(const Tensor& x, const std::vector<std::size_t>& index) {
  if (x.rank() == 0) throw ShapeError("gather_last: scalar input");
  const std::size_t width = x.shape().back();
  for (std::size_t i : index)
    if (i >= width) throw ShapeError("gather_last: index " + std::to_string(i) + " out of range for " + to_string(x.shape()));
  const std::size_t rows = x.size() / width, w = index.size();
  Shape shape = x.shape();
  shape.back() = w;
  std::vector<double> out(rows * w);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < w; ++j) out[r * w + j] = xv[r * width + index[j]];
  const bool track = tracking({&x});
  auto node = make_node(std::move(shape), std::move(out), track);
  if (track) {
    auto xn = x.node();
    std::shared_ptr<Node> on = node;
    g_active_tape->record([xn, on, index, rows, width, w] {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) xn->grad[r * width + index[j]] += on->grad[r * w + j];
    });
  }
  return Tensor::wrap(node);
}

void adam_step(std::span<Tensor> params, AdamState& state, const AdamConfig& config) {
  if (state.m.size() != params.size()) {
    state.m.clear();
    state.v.clear();
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
    state.step = 0;
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto value = params[k].data();
    auto grad = params[k].grad();
    if (grad.size() != value.size()) throw ShapeError("adam_step: parameter without gradient buffer");
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * grad[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      value[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
    }
  }
}

}  // namespace nifm::ad
