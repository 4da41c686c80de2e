#include "nifm/nets.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "nifm/errors.hpp"
#include "nifm/simgen.hpp"
#include "nifm/special.hpp"

namespace nifm::nets {
namespace {

constexpr double kScaleFloor = 1e-6;

ad::Tensor uniform_tensor(ad::Shape shape, double bound, Rng& rng) {
  std::vector<double> v(ad::numel(shape));
  for (auto& x : v) x = bound * (2.0 * rng.uniform() - 1.0);
  return ad::Tensor::from(std::move(shape), std::move(v), true);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(static_cast<std::size_t>(std::stoull(tok)));
  return out;
}

const std::string& need(const std::map<std::string, std::string>& d, const std::string& key) {
  auto it = d.find(key);
  if (it == d.end()) throw IoError("checkpoint descriptor lacks '" + key + "'");
  return it->second;
}

void trace_push(std::vector<LayerTrace>* trace, std::string name, const ad::Shape& in, const ad::Shape& out,
                std::size_t params) {
  if (trace) trace->push_back({std::move(name), in, out, params});
}

ad::Tensor rows_tensor(const Matrix& m, std::size_t first, std::size_t count) {
  const auto cols = static_cast<std::size_t>(m.cols());
  std::vector<double> v(m.data() + first * cols, m.data() + (first + count) * cols);
  return ad::Tensor::from({count, cols}, std::move(v));
}

Matrix rows_block(const Matrix& m, std::size_t first, std::size_t count) {
  return m.middleRows(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count));
}

}  // namespace

// ---------------------------------------------------------------- posteriors

Eigen::VectorXd GaussianPosterior::sd() const {
  if (kind == Kind::MeanField) return chol.diagonal();
  return covariance().diagonal().array().sqrt();
}

Eigen::MatrixXd GaussianPosterior::covariance() const { return chol * chol.transpose(); }

void GaussianPosterior::validate() const {
  if (chol.rows() != mean.size() || chol.cols() != mean.size()) throw ShapeError("posterior: scale/mean size mismatch");
  for (Eigen::Index i = 0; i < mean.size(); ++i)
    if (!(chol(i, i) > 0.0) || !std::isfinite(mean(i))) throw NumericalError("posterior: invalid scale or mean");
}

Matrix sample_posterior(const GaussianPosterior& q, std::size_t J, Rng& rng) {
  const auto m = static_cast<Eigen::Index>(q.dim());
  Matrix out(static_cast<Eigen::Index>(J), m);
  Eigen::VectorXd eta(m);
  for (std::size_t j = 0; j < J; ++j) {
    for (Eigen::Index i = 0; i < m; ++i) eta(i) = rng.normal();
    out.row(static_cast<Eigen::Index>(j)) = (q.mean + q.chol.triangularView<Eigen::Lower>() * eta).transpose();
  }
  return out;
}

double posterior_logpdf(const GaussianPosterior& q, std::span<const double> theta) {
  const auto m = static_cast<Eigen::Index>(q.dim());
  if (static_cast<Eigen::Index>(theta.size()) != m) throw ShapeError("posterior_logpdf: dimension mismatch");
  Eigen::VectorXd r(m);
  for (Eigen::Index i = 0; i < m; ++i) r(i) = theta[static_cast<std::size_t>(i)] - q.mean(i);
  const Eigen::VectorXd w = q.chol.triangularView<Eigen::Lower>().solve(r);
  return -0.5 * static_cast<double>(m) * special::kLog2Pi - q.chol.diagonal().array().log().sum() - 0.5 * w.squaredNorm();
}

// -------------------------------------------------------------------- losses

ad::Tensor nll_full(const ad::Tensor& mean, const ad::Tensor& diag, const ad::Tensor& lower, const Matrix& target) {
  if (mean.rank() != 2 || diag.shape() != mean.shape())
    throw ShapeError("nll_full: mean " + ad::to_string(mean.shape()) + " vs diag " + ad::to_string(diag.shape()));
  const std::size_t B = mean.dim(0), m = mean.dim(1), nl = m * (m - 1) / 2;
  if (lower.rank() != 2 || lower.dim(0) != B || lower.dim(1) != nl)
    throw ShapeError("nll_full: lower " + ad::to_string(lower.shape()) + " for mean " + ad::to_string(mean.shape()));
  if (static_cast<std::size_t>(target.rows()) != B || static_cast<std::size_t>(target.cols()) != m)
    throw ShapeError("nll_full: target is " + std::to_string(target.rows()) + "x" + std::to_string(target.cols()) +
                     ", expected " + ad::to_string(mean.shape()));
  std::vector<double> gmean(B * m), gdiag(B * m), glower(B * nl);
  std::vector<double> L(m * m), w(m), v(m);
  double total = 0.0;
  const double invB = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    std::fill(L.begin(), L.end(), 0.0);
    std::size_t p = 0;
    for (std::size_t i = 0; i < m; ++i) {
      L[i * m + i] = diag[b * m + i];
      for (std::size_t j = 0; j < i; ++j) L[i * m + j] = lower[b * nl + p++];
    }
    double lp = 0.5 * static_cast<double>(m) * special::kLog2Pi;
    for (std::size_t i = 0; i < m; ++i) {
      double s = target(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) - mean[b * m + i];
      for (std::size_t j = 0; j < i; ++j) s -= L[i * m + j] * w[j];
      w[i] = s / L[i * m + i];
      lp += std::log(L[i * m + i]) + 0.5 * w[i] * w[i];
    }
    total += lp;
    // v = L^-T w
    for (std::size_t ii = m; ii-- > 0;) {
      double s = w[ii];
      for (std::size_t j = ii + 1; j < m; ++j) s -= L[j * m + ii] * v[j];
      v[ii] = s / L[ii * m + ii];
    }
    p = 0;
    for (std::size_t i = 0; i < m; ++i) {
      gmean[b * m + i] = -v[i] * invB;
      gdiag[b * m + i] = (1.0 / L[i * m + i] - v[i] * w[i]) * invB;
      for (std::size_t j = 0; j < i; ++j) glower[b * nl + p++] = -v[i] * w[j] * invB;
    }
  }
  auto mn = mean.node(), dn = diag.node(), ln = lower.node();
  return ad::custom_op({1}, {total * invB}, {mean, diag, lower},
                       [mn, dn, ln, gmean = std::move(gmean), gdiag = std::move(gdiag),
                        glower = std::move(glower)](const ad::Node& out) {
                         const double g = out.grad[0];
                         if (mn->requires_grad)
                           for (std::size_t i = 0; i < gmean.size(); ++i) mn->grad[i] += g * gmean[i];
                         if (dn->requires_grad)
                           for (std::size_t i = 0; i < gdiag.size(); ++i) dn->grad[i] += g * gdiag[i];
                         if (ln->requires_grad)
                           for (std::size_t i = 0; i < glower.size(); ++i) ln->grad[i] += g * glower[i];
                       });
}

ad::Tensor nll_mean_field(const ad::Tensor& mean, const ad::Tensor& var, const Matrix& target) {
  if (mean.rank() != 2 || var.shape() != mean.shape())
    throw ShapeError("nll_mean_field: mean " + ad::to_string(mean.shape()) + " vs var " + ad::to_string(var.shape()));
  const std::size_t B = mean.dim(0), m = mean.dim(1);
  if (static_cast<std::size_t>(target.rows()) != B || static_cast<std::size_t>(target.cols()) != m)
    throw ShapeError("nll_mean_field: target is " + std::to_string(target.rows()) + "x" +
                     std::to_string(target.cols()) + ", expected " + ad::to_string(mean.shape()));
  const double invB = 1.0 / static_cast<double>(B);
  std::vector<double> gmean(B * m), gvar(B * m);
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t k = b * m + i;
      const double r = target(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(i)) - mean[k];
      const double s2 = var[k];
      total += 0.5 * special::kLog2Pi + 0.5 * std::log(s2) + 0.5 * r * r / s2;
      gmean[k] = -r / s2 * invB;
      gvar[k] = (0.5 / s2 - 0.5 * r * r / (s2 * s2)) * invB;
    }
  auto mn = mean.node(), vn = var.node();
  return ad::custom_op({1}, {total * invB}, {mean, var},
                       [mn, vn, gmean = std::move(gmean), gvar = std::move(gvar)](const ad::Node& out) {
                         const double g = out.grad[0];
                         if (mn->requires_grad)
                           for (std::size_t i = 0; i < gmean.size(); ++i) mn->grad[i] += g * gmean[i];
                         if (vn->requires_grad)
                           for (std::size_t i = 0; i < gvar.size(); ++i) vn->grad[i] += g * gvar[i];
                       });
}

// ------------------------------------------------------------------- layers

LinearLayer::LinearLayer(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  w = uniform_tensor({out, in}, bound, rng);
  b = uniform_tensor({out}, bound, rng);
}

ConvLayer::ConvLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t s, std::size_t p, Rng& rng)
    : stride(s), padding(p) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_ch * kernel));
  w = uniform_tensor({out_ch, in_ch, kernel}, bound, rng);
  b = uniform_tensor({out_ch}, bound, rng);
}

BatchNormLayer::BatchNormLayer(std::size_t features) {
  gamma = ad::Tensor::full({features}, 1.0, true);
  beta = ad::Tensor::zeros({features}, true);
  state.running_mean.assign(features, 0.0);
  state.running_var.assign(features, 1.0);
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::vector<double> Network::state_vector() const {
  std::vector<double> v;
  for (const auto& p : params_) v.insert(v.end(), p.data().begin(), p.data().end());
  for (const auto* s : bn_states_) {
    v.insert(v.end(), s->running_mean.begin(), s->running_mean.end());
    v.insert(v.end(), s->running_var.begin(), s->running_var.end());
  }
  return v;
}

void Network::load_state_vector(std::span<const double> v) {
  std::size_t need_n = parameter_count();
  for (const auto* s : bn_states_) need_n += 2 * s->running_mean.size();
  if (v.size() != need_n)
    throw ShapeError("network state has " + std::to_string(v.size()) + " values, expected " + std::to_string(need_n));
  std::size_t p = 0;
  for (auto& t : params_) {
    auto d = t.data();
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(p), d.size(), d.begin());
    p += d.size();
  }
  for (auto* s : bn_states_) {
    for (auto& x : s->running_mean) x = v[p++];
    for (auto& x : s->running_var) x = v[p++];
  }
}

void Network::register_linear(LinearLayer& l) {
  params_.push_back(l.w);
  params_.push_back(l.b);
}

void Network::register_conv(ConvLayer& c) {
  params_.push_back(c.w);
  params_.push_back(c.b);
}

void Network::register_bn(BatchNormLayer& bn) {
  params_.push_back(bn.gamma);
  params_.push_back(bn.beta);
  bn_states_.push_back(&bn.state);
}

// ------------------------------------------------------------- marginal CNN

MarginalArch MarginalArch::full(std::size_t T, garch::ErrorKind kind) {
  MarginalArch a;
  a.T = T;
  a.kind = kind;
  return a;
}

MarginalArch MarginalArch::desk(std::size_t T, garch::ErrorKind kind) {
  MarginalArch a = full(T, kind);
  a.head_hidden = {128, 64, 32};
  return a;
}

std::size_t MarginalArch::conv_length(std::size_t layer) const {
  std::size_t L = T;
  for (std::size_t i = 0; i <= layer; ++i) {
    if (L + 2 * padding < kernel) throw ConfigError("marginal net: series too short for the convolution stack");
    L = (L + 2 * padding - kernel) / stride + 1;
  }
  return L;
}

std::size_t MarginalArch::flat_features() const { return channels.back() * conv_length(channels.size() - 1); }

MarginalNet::MarginalNet(const MarginalArch& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.T < 2) throw ConfigError("marginal net: T must be at least 2");
  if (arch.channels.empty() || arch.head_hidden.empty()) throw ConfigError("marginal net: empty layer list");
  Rng rng(seed);
  std::size_t in = 1;
  for (std::size_t c : arch.channels) {
    convs_.emplace_back(in, c, arch.kernel, arch.stride, arch.padding, rng);
    in = c;
  }
  const std::size_t m = arch.m();
  auto build = [&](Head& h, std::size_t out) {
    std::size_t prev = arch_.flat_features();
    for (std::size_t w : arch_.head_hidden) {
      h.layers.emplace_back(prev, w, rng);
      prev = w;
    }
    h.layers.emplace_back(prev, out, rng);
  };
  build(mean_head_, m);
  build(diag_head_, m);
  build(lower_head_, m * (m - 1) / 2);
  for (auto& c : convs_) register_conv(c);
  for (Head* h : {&mean_head_, &diag_head_, &lower_head_})
    for (auto& l : h->layers) register_linear(l);
}

ad::Tensor MarginalNet::run_head(const Head& h, const ad::Tensor& x, const std::string& name,
                                 std::vector<LayerTrace>* trace) const {
  ad::Tensor z = x;
  for (std::size_t i = 0; i < h.layers.size(); ++i) {
    const ad::Shape in = z.shape();
    z = h.layers[i](z);
    if (i + 1 < h.layers.size()) z = ad::relu(z);
    trace_push(trace, i == 0 ? "Linear (" + name + ")" : "Linear", in, z.shape(), h.layers[i].w.size() + h.layers[i].b.size());
  }
  return z;
}

MarginalOutputs MarginalNet::forward(const ad::Tensor& x, bool /*training*/, std::vector<LayerTrace>* trace) {
  if (x.rank() != 2 || x.dim(1) != arch_.T)
    throw ShapeError("marginal net expects [B, " + std::to_string(arch_.T) + "], got " + ad::to_string(x.shape()));
  const std::size_t B = x.dim(0);
  ad::Tensor h = ad::reshape(x, {B, 1, arch_.T});
  for (const auto& c : convs_) {
    const ad::Shape in = h.shape();
    h = ad::relu(c(h));
    trace_push(trace, "Conv1d", in, h.shape(), c.w.size() + c.b.size());
  }
  const ad::Shape in = h.shape();
  h = ad::reshape(h, {B, arch_.flat_features()});
  trace_push(trace, "Flatten", in, h.shape(), 0);
  MarginalOutputs out;
  out.mean = run_head(mean_head_, h, "Mean", trace);
  out.diag = ad::add_scalar(ad::softplus(run_head(diag_head_, h, "Diagonal", trace)), kScaleFloor);
  out.lower = run_head(lower_head_, h, "Lower", trace);
  return out;
}

std::vector<GaussianPosterior> MarginalNet::posteriors(const Matrix& y) {
  if (static_cast<std::size_t>(y.rows()) != arch_.T)
    throw ShapeError("marginal net trained for T=" + std::to_string(arch_.T) + ", data has " +
                     std::to_string(y.rows()) + " rows");
  const auto D = static_cast<std::size_t>(y.cols());
  std::vector<double> flat(D * arch_.T);
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t t = 0; t < arch_.T; ++t)
      flat[d * arch_.T + t] = y(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(d));
  const auto out = forward(ad::Tensor::from({D, arch_.T}, std::move(flat)), false);
  const std::size_t m = arch_.m(), nl = m * (m - 1) / 2;
  std::vector<GaussianPosterior> qs(D);
  for (std::size_t d = 0; d < D; ++d) {
    auto& q = qs[d];
    q.kind = GaussianPosterior::Kind::FullCholesky;
    q.mean.resize(static_cast<Eigen::Index>(m));
    q.chol = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    std::size_t p = 0;
    for (std::size_t i = 0; i < m; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      q.mean(ii) = out.mean[d * m + i];
      q.chol(ii, ii) = out.diag[d * m + i];
      for (std::size_t j = 0; j < i; ++j) q.chol(ii, static_cast<Eigen::Index>(j)) = out.lower[d * nl + p++];
    }
  }
  return qs;
}

GaussianPosterior MarginalNet::posterior(std::span<const double> y) {
  Matrix m(static_cast<Eigen::Index>(y.size()), 1);
  for (std::size_t t = 0; t < y.size(); ++t) m(static_cast<Eigen::Index>(t), 0) = y[t];
  return posteriors(m)[0];
}

std::map<std::string, std::string> MarginalNet::descriptor() const {
  return {{"net", "marginal"},
          {"T", std::to_string(arch_.T)},
          {"marginal_kind", garch::to_string(arch_.kind)},
          {"channels", join(arch_.channels)},
          {"kernel", std::to_string(arch_.kernel)},
          {"stride", std::to_string(arch_.stride)},
          {"padding", std::to_string(arch_.padding)},
          {"head_hidden", join(arch_.head_hidden)}};
}

MarginalArch MarginalNet::arch_from_descriptor(const std::map<std::string, std::string>& d) {
  if (need(d, "net") != "marginal") throw IoError("checkpoint holds a " + need(d, "net") + " network, not a marginal one");
  MarginalArch a;
  a.T = std::stoull(need(d, "T"));
  a.kind = garch::error_kind_from_string(need(d, "marginal_kind"));
  a.channels = split_sizes(need(d, "channels"));
  a.kernel = std::stoull(need(d, "kernel"));
  a.stride = std::stoull(need(d, "stride"));
  a.padding = std::stoull(need(d, "padding"));
  a.head_hidden = split_sizes(need(d, "head_hidden"));
  return a;
}

// ------------------------------------------------------- copula Deep Sets

CopulaArch CopulaArch::full(std::size_t T, int D, int k, copula::Family family) {
  CopulaArch a;
  a.T = T;
  a.D = D;
  a.k = k;
  a.family = family;
  if (k >= 4) {
    a.projection = 1024;
    a.trunk = {1536, 768, 512, 256};
  }
  return a;
}

CopulaArch CopulaArch::desk(std::size_t T, int D, int k, copula::Family family) {
  CopulaArch a = full(T, D, k, family);
  a.encoder = {32, 64, 64};
  a.projection = 0;
  a.trunk = {128, 64, 32};
  return a;
}

CopulaNet::CopulaNet(const CopulaArch& arch, std::uint64_t seed) : arch_(arch) {
  if (arch.D < 2) throw ConfigError("copula net: D must be at least 2");
  if (arch.k < 1 || arch.k > arch.D)
    throw ConfigError("copula net: need 1 <= k <= D, got k=" + std::to_string(arch.k));
  if (arch.encoder.empty() || arch.trunk.empty()) throw ConfigError("copula net: empty layer list");
  Rng rng(seed);
  std::size_t prev = static_cast<std::size_t>(arch.D);
  for (std::size_t w : arch.encoder) {
    encoder_.emplace_back(prev, w, rng);
    prev = w;
  }
  if (arch.projection > 0) {
    projection_.emplace(prev, arch.projection, rng);
    prev = arch.projection;
  }
  const std::size_t pooled = prev;
  const bool t = arch.family == copula::Family::StudentT;
  auto build = [&](Trunk& tr) {
    std::size_t p = pooled;
    for (std::size_t w : arch_.trunk) {
      tr.linears.emplace_back(p, w, rng);
      tr.norms.emplace_back(w);
      p = w;
    }
    for (int l = 0; l < arch_.k; ++l)
      tr.factor_heads.emplace_back(p, static_cast<std::size_t>(arch_.D - l) + ((l == 0 && t) ? 1 : 0), rng);
  };
  build(mean_trunk_);
  build(var_trunk_);
  for (auto& l : encoder_) register_linear(l);
  if (projection_) register_linear(*projection_);
  for (Trunk* tr : {&mean_trunk_, &var_trunk_}) {
    for (std::size_t i = 0; i < tr->linears.size(); ++i) {
      register_linear(tr->linears[i]);
      register_bn(tr->norms[i]);
    }
    for (auto& h : tr->factor_heads) register_linear(h);
  }
  // concatenated head outputs are column blocks of G~; map them to row-major order
  const copula::FactorLoadings shape{arch.D, arch.k, std::vector<double>(copula::FactorLoadings::free_count(arch.D, arch.k))};
  order_.assign(arch.m(), 0);
  std::size_t c = 0;
  for (int l = 0; l < arch.k; ++l) {
    for (int i = l; i < arch.D; ++i) order_[static_cast<std::size_t>(shape.index(i, l))] = c++;
    if (l == 0 && t) order_[arch.m() - 1] = c++;
  }
}

ad::Tensor CopulaNet::run_trunk(Trunk& tr, const ad::Tensor& pooled, bool training, const std::string& name,
                                std::vector<LayerTrace>* trace) {
  ad::Tensor z = pooled;
  for (std::size_t i = 0; i < tr.linears.size(); ++i) {
    ad::Shape in = z.shape();
    z = tr.linears[i](z);
    trace_push(trace, i == 0 ? "Linear (" + name + ")" : "Linear", in, z.shape(),
               tr.linears[i].w.size() + tr.linears[i].b.size());
    in = z.shape();
    z = ad::relu(tr.norms[i](z, training));
    trace_push(trace, "BatchNorm1d", in, z.shape(), 2 * tr.norms[i].gamma.size());
  }
  std::vector<ad::Tensor> heads;
  for (std::size_t l = 0; l < tr.factor_heads.size(); ++l) {
    heads.push_back(tr.factor_heads[l](z));
    trace_push(trace, "Linear (factor " + std::to_string(l + 1) + ")", z.shape(), heads.back().shape(),
               tr.factor_heads[l].w.size() + tr.factor_heads[l].b.size());
  }
  return ad::gather_last(heads.size() == 1 ? heads[0] : ad::concat_last(heads), order_);
}

CopulaOutputs CopulaNet::forward(const ad::Tensor& x, bool training, std::vector<LayerTrace>* trace) {
  const std::size_t T = arch_.T, D = static_cast<std::size_t>(arch_.D);
  if (x.rank() != 2 || x.dim(1) != T * D)
    throw ShapeError("copula net expects [B, " + std::to_string(T * D) + "] (T=" + std::to_string(T) +
                     ", D=" + std::to_string(D) + "), got " + ad::to_string(x.shape()));
  const std::size_t B = x.dim(0);
  ad::Tensor h = ad::reshape(x, {B * T, D});
  for (const auto& l : encoder_) {
    const ad::Shape in{B, T, l.in()};
    h = ad::relu(l(h));
    trace_push(trace, "Linear", in, {B, T, l.out()}, l.w.size() + l.b.size());
  }
  const std::size_t F = encoder_.back().out();
  ad::Tensor pooled = ad::mean_axis(ad::reshape(h, {B, T, F}), 1);
  trace_push(trace, "Mean", {B, T, F}, pooled.shape(), 0);
  if (projection_) {
    const ad::Shape in = pooled.shape();
    pooled = ad::relu((*projection_)(pooled));
    trace_push(trace, "Linear", in, pooled.shape(), projection_->w.size() + projection_->b.size());
  }
  CopulaOutputs out;
  out.mean = run_trunk(mean_trunk_, pooled, training, "Mean", trace);
  out.var = ad::add_scalar(ad::softplus(run_trunk(var_trunk_, pooled, training, "Diagonal", trace)), kScaleFloor);
  return out;
}

GaussianPosterior CopulaNet::posterior(const Matrix& u) {
  if (static_cast<std::size_t>(u.rows()) != arch_.T || u.cols() != arch_.D)
    throw ShapeError("copula net trained for " + std::to_string(arch_.T) + "x" + std::to_string(arch_.D) +
                     " data, got " + std::to_string(u.rows()) + "x" + std::to_string(u.cols()));
  std::vector<double> flat(u.data(), u.data() + u.size());
  const std::size_t width = flat.size();
  const auto out = forward(ad::Tensor::from({1, width}, std::move(flat)), false);
  const auto m = static_cast<Eigen::Index>(arch_.m());
  GaussianPosterior q;
  q.kind = GaussianPosterior::Kind::MeanField;
  q.mean.resize(m);
  q.chol = Eigen::MatrixXd::Zero(m, m);
  for (Eigen::Index i = 0; i < m; ++i) {
    q.mean(i) = out.mean[static_cast<std::size_t>(i)];
    q.chol(i, i) = std::sqrt(out.var[static_cast<std::size_t>(i)]);
  }
  return q;
}

std::map<std::string, std::string> CopulaNet::descriptor() const {
  return {{"net", "copula"},
          {"T", std::to_string(arch_.T)},
          {"D", std::to_string(arch_.D)},
          {"k", std::to_string(arch_.k)},
          {"family", copula::to_string(arch_.family)},
          {"encoder", join(arch_.encoder)},
          {"projection", std::to_string(arch_.projection)},
          {"trunk", join(arch_.trunk)}};
}

CopulaArch CopulaNet::arch_from_descriptor(const std::map<std::string, std::string>& d) {
  if (need(d, "net") != "copula") throw IoError("checkpoint holds a " + need(d, "net") + " network, not a copula one");
  CopulaArch a;
  a.T = std::stoull(need(d, "T"));
  a.D = std::stoi(need(d, "D"));
  a.k = std::stoi(need(d, "k"));
  a.family = copula::family_from_string(need(d, "family"));
  a.encoder = split_sizes(need(d, "encoder"));
  a.projection = std::stoull(need(d, "projection"));
  a.trunk = split_sizes(need(d, "trunk"));
  return a;
}

// ----------------------------------------------------------------- training

namespace {

template <class Net, class Batch, class Gen, class Loss>
TrainResult train_impl(Net& net, const TrainConfig& cfg, Gen gen, Loss loss) {
  if (cfg.batch < 2) throw ConfigError("train: batch size must be at least 2");
  if (!(cfg.val_frac > 0.0 && cfg.val_frac < 1.0)) throw ConfigError("train: val_frac must lie in (0, 1)");
  if (cfg.max_epochs == 0) throw ConfigError("train: max_epochs must be positive");
  const auto n_val = static_cast<std::size_t>(std::max(1.0, std::round(cfg.val_frac * static_cast<double>(cfg.n_per_epoch))));
  if (cfg.n_per_epoch <= n_val || cfg.n_per_epoch - n_val < cfg.batch)
    throw ConfigError("train: n_per_epoch too small for one training batch after the validation split");
  const std::size_t n_train = cfg.n_per_epoch - n_val;
  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t train_stream = Rng::derive(cfg.seed, 1), val_stream = Rng::derive(cfg.seed, 2);
  const Batch val = gen(simgen::SampleRange{val_stream, 0, cfg.threads}, n_val);

  auto evaluate = [&](const Batch& data) {
    const auto n = static_cast<std::size_t>(data.targets.rows());
    double sum = 0.0;
    for (std::size_t a = 0; a < n; a += 256) {
      const std::size_t c = std::min<std::size_t>(256, n - a);
      sum += loss(net, data, a, c, false).item() * static_cast<double>(c);
    }
    return sum / static_cast<double>(n);
  };

  TrainResult res;
  res.initial_val = evaluate(val);
  res.best_val = std::isfinite(res.initial_val) ? res.initial_val : std::numeric_limits<double>::infinity();
  std::vector<double> best_state = net.state_vector();
  ad::AdamState adam;
  std::optional<Batch> fixed;
  if (cfg.fixed_dataset) fixed = gen(simgen::SampleRange{train_stream, 0, cfg.threads}, n_train);
  int bad_in_a_row = 0;
  res.stop_reason = "max_epochs";
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const Batch train = fixed ? *fixed : gen(simgen::SampleRange{train_stream, (epoch - 1) * n_train, cfg.threads}, n_train);
    double train_sum = 0.0;
    std::size_t train_n = 0, batch_idx = 0;
    for (std::size_t a = 0; a + cfg.batch <= n_train; a += cfg.batch, ++batch_idx) {
      ad::Tape tape;
      ad::Tensor L;
      {
        ad::Recording rec(tape);
        L = loss(net, train, a, cfg.batch, true);
      }
      const double lv = L.item();
      if (!std::isfinite(lv)) {
        if (++bad_in_a_row >= 5)
          throw NumericalError("training loss non-finite for 5 consecutive batches (epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(batch_idx) + ")");
        continue;
      }
      bad_in_a_row = 0;
      for (auto& p : net.parameters()) p.zero_grad();
      tape.backward(L);
      ad::adam_step(net.parameters(), adam, cfg.adam);
      train_sum += lv;
      ++train_n;
    }
    const double tl = train_n ? train_sum / static_cast<double>(train_n) : std::numeric_limits<double>::quiet_NaN();
    const double vl = evaluate(val);
    res.curve.push_back({epoch, tl, vl});
    res.epochs_run = epoch;
    if (cfg.on_epoch) cfg.on_epoch(epoch, tl, vl);
    if (std::isfinite(vl) && vl < res.best_val) {
      res.best_val = vl;
      res.best_epoch = epoch;
      best_state = net.state_vector();
    } else if (epoch - res.best_epoch >= cfg.patience) {
      res.stop_reason = "patience";
      break;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg.max_seconds > 0.0 && secs >= cfg.max_seconds) {
      res.stop_reason = "time_limit";
      break;
    }
  }
  net.load_state_vector(best_state);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace

TrainResult train_marginal(MarginalNet& net, const priors::PriorSpec& spec, const TrainConfig& cfg) {
  if (spec.marginal_kind != net.arch().kind) throw ConfigError("train_marginal: prior and network error kinds differ");
  const std::size_t T = net.arch().T;
  auto gen = [&](const simgen::SampleRange& r, std::size_t n) { return simgen::gen_marginal_batch(spec, n, T, r); };
  auto loss = [](MarginalNet& m, const simgen::MarginalTrainingBatch& b, std::size_t first, std::size_t count,
                 bool training) {
    const auto out = m.forward(rows_tensor(b.inputs, first, count), training);
    return nll_full(out.mean, out.diag, out.lower, rows_block(b.targets, first, count));
  };
  return train_impl<MarginalNet, simgen::MarginalTrainingBatch>(net, cfg, gen, loss);
}

TrainResult train_copula(CopulaNet& net, const priors::PriorSpec& spec, const TrainConfig& cfg) {
  const auto& a = net.arch();
  if (spec.dim != a.D || spec.n_factors != a.k) throw ConfigError("train_copula: prior and network (D, k) differ");
  auto gen = [&](const simgen::SampleRange& r, std::size_t n) {
    return simgen::gen_copula_batch(spec, a.family, n, a.T, r);
  };
  auto loss = [](CopulaNet& c, const simgen::CopulaTrainingBatch& b, std::size_t first, std::size_t count,
                 bool training) {
    const auto out = c.forward(rows_tensor(b.inputs, first, count), training);
    return nll_mean_field(out.mean, out.var, rows_block(b.targets, first, count));
  };
  return train_impl<CopulaNet, simgen::CopulaTrainingBatch>(net, cfg, gen, loss);
}

void write_loss_csv(const std::string& path, const TrainResult& r) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(10);
  f << "epoch,train_loss,val_loss\n";
  f << 0 << ",," << r.initial_val << '\n';
  for (const auto& e : r.curve) f << e.epoch << ',' << e.train << ',' << e.val << '\n';
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace nifm::nets
