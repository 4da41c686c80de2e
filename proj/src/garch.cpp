#include "nifm/garch.hpp"

#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "nifm/autodiff.hpp"
#include "nifm/errors.hpp"
#include "nifm/special.hpp"

namespace nifm::garch {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double nu_of(const GarchParams& p) { return p.nu_tilde.value_or(0.0); }

// Log-likelihood and its gradient in (alpha1, alpha2, gamma[, nu]) by forward
// sensitivities of the variance recursion.
double loglik_with_grad(const GarchParams& p, std::span<const double> y, double* grad) {
  const bool t = p.error_kind == ErrorKind::StudentT;
  const double nu = nu_of(p);
  const double s = p.alpha1 + p.alpha2;
  double sig2 = p.gamma / (1.0 - s);
  double d_a1 = p.gamma / ((1.0 - s) * (1.0 - s));
  double d_a2 = d_a1;
  double d_g = 1.0 / (1.0 - s);
  double g_a1 = 0.0, g_a2 = 0.0, g_g = 0.0, g_nu = 0.0;
  double ll = 0.0;
  double t_const = 0.0, dconst_dnu = 0.0;
  if (t) {
    t_const = std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI);
    dconst_dnu = 0.5 * boost::math::digamma(0.5 * (nu + 1.0)) - 0.5 * boost::math::digamma(0.5 * nu) - 0.5 / nu;
  }
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (i > 0) {
      const double yp2 = y[i - 1] * y[i - 1];
      const double prev = sig2;
      sig2 = p.gamma + p.alpha1 * yp2 + p.alpha2 * prev;
      d_a1 = yp2 + p.alpha2 * d_a1;
      d_a2 = prev + p.alpha2 * d_a2;
      d_g = 1.0 + p.alpha2 * d_g;
    }
    const double y2 = y[i] * y[i];
    double dl_dsig2;
    if (!t) {
      ll += -special::kLogSqrt2Pi - 0.5 * std::log(sig2) - 0.5 * y2 / sig2;
      dl_dsig2 = -0.5 / sig2 + 0.5 * y2 / (sig2 * sig2);
    } else {
      const double x2 = y2 / sig2;
      const double q = 1.0 + x2 / nu;
      ll += t_const - 0.5 * (nu + 1.0) * std::log(q) - 0.5 * std::log(sig2);
      dl_dsig2 = 0.5 * (nu + 1.0) * (x2 / (nu * sig2)) / q - 0.5 / sig2;
      g_nu += dconst_dnu - 0.5 * std::log(q) + 0.5 * (nu + 1.0) * (x2 / (nu * nu)) / q;
    }
    g_a1 += dl_dsig2 * d_a1;
    g_a2 += dl_dsig2 * d_a2;
    g_g += dl_dsig2 * d_g;
  }
  if (!std::isfinite(ll)) return kNegInf;
  if (grad != nullptr) {
    grad[0] = g_a1;
    grad[1] = g_a2;
    grad[2] = g_g;
    if (t) grad[3] = g_nu;
  }
  return ll;
}

}  // namespace

std::string to_string(ErrorKind kind) { return kind == ErrorKind::Gaussian ? "gaussian" : "t"; }

ErrorKind error_kind_from_string(const std::string& s) {
  if (s == "gaussian" || s == "normal") return ErrorKind::Gaussian;
  if (s == "t" || s == "student-t" || s == "student_t") return ErrorKind::StudentT;
  throw ConfigError("unknown marginal error family '" + s + "' (expected gaussian or t)");
}

bool GarchParams::is_valid() const noexcept {
  if (!(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha1 + alpha2 < 1.0 && gamma > 0.0)) return false;
  if (error_kind == ErrorKind::StudentT) return nu_tilde.has_value() && *nu_tilde > 2.0 && std::isfinite(*nu_tilde);
  return !nu_tilde.has_value();
}

void GarchParams::validate() const {
  if (!(alpha1 >= 0.0 && alpha2 >= 0.0)) throw std::invalid_argument("GARCH: alpha1 and alpha2 must be non-negative");
  if (!(alpha1 + alpha2 < 1.0)) throw std::invalid_argument("GARCH: alpha1 + alpha2 must be below 1");
  if (!(gamma > 0.0)) throw std::invalid_argument("GARCH: gamma must be positive");
  if (error_kind == ErrorKind::StudentT) {
    if (!nu_tilde || !(*nu_tilde > 2.0) || !std::isfinite(*nu_tilde))
      throw std::invalid_argument("GARCH: Student-t errors need finite degrees of freedom above 2");
  } else if (nu_tilde) {
    throw std::invalid_argument("GARCH: Gaussian errors take no degrees of freedom");
  }
}

std::vector<double> TransformedGarchParams::to_vector() const {
  std::vector<double> v{phi1, phi2, phi3};
  if (df_tilde) v.push_back(*df_tilde);
  return v;
}

TransformedGarchParams TransformedGarchParams::from_vector(std::span<const double> v) {
  if (v.size() != 3 && v.size() != 4)
    throw ShapeError("transformed GARCH vector must have 3 or 4 entries, got " + std::to_string(v.size()));
  TransformedGarchParams t{v[0], v[1], v[2], std::nullopt};
  if (v.size() == 4) t.df_tilde = v[3];
  return t;
}

TransformedGarchParams to_unconstrained(const GarchParams& p) {
  p.validate();
  const double s = p.alpha1 + p.alpha2;
  if (s == 0.0) throw std::domain_error("to_unconstrained: alpha1 + alpha2 == 0 leaves phi3 undefined");
  TransformedGarchParams t;
  t.phi1 = special::logit(s);
  t.phi2 = std::log(p.gamma / (1.0 - s));
  // logit(alpha1 / s) without forming 1 - alpha1 / s
  t.phi3 = std::log(p.alpha1 / p.alpha2);
  if (p.error_kind == ErrorKind::StudentT) t.df_tilde = std::log(*p.nu_tilde - 2.0);
  return t;
}

GarchParams from_unconstrained(const TransformedGarchParams& t, ErrorKind kind) {
  // sigmoid rounds to 1 for phi1 > ~37; keep a few ulps below so alpha1 + alpha2 < 1 survives rounding
  const double psi1 = std::min(special::sigmoid(t.phi1), 1.0 - 4.0 * std::numeric_limits<double>::epsilon());
  const double psi2 = std::exp(t.phi2);
  const double psi3 = special::sigmoid(t.phi3);
  GarchParams p;
  p.alpha1 = psi1 * psi3;
  // 1 - sigmoid(x) = sigmoid(-x) keeps precision for large arguments
  p.alpha2 = psi1 * special::sigmoid(-t.phi3);
  p.gamma = psi2 * special::sigmoid(-t.phi1);
  p.error_kind = kind;
  if (kind == ErrorKind::StudentT) {
    if (!t.df_tilde) throw ShapeError("from_unconstrained: Student-t errors need a df coordinate");
    p.nu_tilde = 2.0 + std::exp(*t.df_tilde);
  }
  return p;
}

GarchParams from_unconstrained(std::span<const double> t, ErrorKind kind) {
  if (t.size() != static_cast<std::size_t>(param_count(kind)))
    throw ShapeError("from_unconstrained: expected " + std::to_string(param_count(kind)) + " coordinates, got " +
                     std::to_string(t.size()));
  return from_unconstrained(TransformedGarchParams::from_vector(t), kind);
}

double log_jacobian(const TransformedGarchParams& t) {
  const double lp1 = -special::softplus(-t.phi1);   // log psi1
  const double lq1 = -special::softplus(t.phi1);    // log(1 - psi1)
  const double lp3 = -special::softplus(-t.phi3);
  const double lq3 = -special::softplus(t.phi3);
  double lj = t.phi2 + lq1 + lp1 + (lp1 + lq1) + (lp3 + lq3);
  if (t.df_tilde) lj += *t.df_tilde;
  return lj;
}

double unconditional_variance(const GarchParams& p) { return p.gamma / (1.0 - p.alpha1 - p.alpha2); }

double next_variance(const GarchParams& p, double y_prev, double sigma2_prev) {
  return p.gamma + p.alpha1 * y_prev * y_prev + p.alpha2 * sigma2_prev;
}

std::vector<double> conditional_variances(const GarchParams& p, std::span<const double> y) {
  std::vector<double> s(y.size());
  if (y.empty()) return s;
  s[0] = unconditional_variance(p);
  for (std::size_t t = 1; t < y.size(); ++t) s[t] = next_variance(p, y[t - 1], s[t - 1]);
  return s;
}

double error_logpdf(const GarchParams& p, double eps) {
  return p.error_kind == ErrorKind::Gaussian ? special::normal_logpdf(eps) : special::t_logpdf(nu_of(p), eps);
}

double error_cdf(const GarchParams& p, double eps) {
  return p.error_kind == ErrorKind::Gaussian ? special::normal_cdf(eps) : special::t_cdf(nu_of(p), eps);
}

double error_quantile(const GarchParams& p, double u) {
  return p.error_kind == ErrorKind::Gaussian ? special::normal_quantile(u) : special::t_quantile(nu_of(p), u);
}

double observation_logpdf(const GarchParams& p, double y, double sigma2) {
  const double sd = std::sqrt(sigma2);
  return error_logpdf(p, y / sd) - std::log(sd);
}

double log_likelihood(const GarchParams& p, std::span<const double> y) {
  if (!p.is_valid()) return kNegInf;
  return loglik_with_grad(p, y, nullptr);
}

ad::Tensor log_likelihood_ad(const ad::Tensor& theta, ErrorKind kind, std::span<const double> y) {
  const std::size_t n = static_cast<std::size_t>(param_count(kind));
  if (theta.size() != n)
    throw ShapeError("log_likelihood_ad: expected " + std::to_string(n) + " coordinates, got " +
                     ad::to_string(theta.shape()));
  std::vector<double> th(theta.data().begin(), theta.data().end());
  const GarchParams p = from_unconstrained(th, kind);
  double gc[4] = {0, 0, 0, 0};
  const double ll = p.is_valid() ? loglik_with_grad(p, y, gc) : kNegInf;

  // chain rule through the inverse transform
  const double psi1 = special::sigmoid(th[0]);
  const double psi2 = std::exp(th[1]);
  const double psi3 = special::sigmoid(th[2]);
  const double s1 = psi1 * (1.0 - psi1);
  const double s3 = psi3 * (1.0 - psi3);
  std::vector<double> g(n);
  g[0] = gc[0] * psi3 * s1 + gc[1] * (1.0 - psi3) * s1 - gc[2] * psi2 * s1;
  g[1] = gc[2] * psi2 * (1.0 - psi1);
  g[2] = (gc[0] - gc[1]) * psi1 * s3;
  if (n == 4) g[3] = gc[3] * std::exp(th[3]);

  auto tn = theta.node();
  return ad::custom_op({1}, {ll}, {theta}, [tn, g](const ad::Node& out) {
    if (!tn->requires_grad) return;
    for (std::size_t i = 0; i < g.size(); ++i) tn->grad[i] += out.grad[0] * g[i];
  });
}

std::vector<double> simulate(const GarchParams& p, std::span<const double> innovations) {
  p.validate();
  std::vector<double> y(innovations.size());
  double sig2 = unconditional_variance(p);
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (t > 0) sig2 = next_variance(p, y[t - 1], sig2);
    y[t] = std::sqrt(sig2) * innovations[t];
  }
  return y;
}

std::vector<double> marginal_cdf(const GarchParams& p, std::span<const double> y) {
  const auto s = conditional_variances(p, y);
  std::vector<double> u(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double v = error_cdf(p, y[t] / std::sqrt(s[t]));
    u[t] = std::clamp(v, kCdfClamp, 1.0 - kCdfClamp);
  }
  return u;
}

double marginal_quantile(const GarchParams& p, double u, double sigma2) {
  return std::sqrt(sigma2) * error_quantile(p, std::clamp(u, kCdfClamp, 1.0 - kCdfClamp));
}

}  // namespace nifm::garch
