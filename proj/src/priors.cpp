#include "nifm/priors.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "nifm/errors.hpp"
#include "nifm/special.hpp"

namespace nifm::priors {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr long kMaxRejections = 1'000'000;

double sample_gamma(const GammaPrior& g, Rng& rng) {
  for (long i = 0; i < kMaxRejections; ++i) {
    const double x = rng.gamma(g.shape) / g.rate;
    if (x > g.lower) return x;
  }
  throw NumericalError("prior sampling: truncated gamma rejected 10^6 draws");
}

double gamma_prior_logpdf(const GammaPrior& g, double x) {
  if (!(x > g.lower)) return kNegInf;
  double lp = special::gamma_logpdf(g.shape, g.rate, x);
  if (g.lower > 0.0) lp -= std::log1p(-special::gamma_cdf(g.shape, g.rate, g.lower));
  return lp;
}

void check_positive(const char* what, double v) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("prior: ") + what + " must be positive and finite");
}

void check_fit_input(const char* what, std::span<const double> x) {
  if (x.size() < 3) throw std::invalid_argument(std::string(what) + ": need at least 3 points");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  if (!(var > 0.0)) throw std::invalid_argument(std::string(what) + ": degenerate data (zero spread)");
}

}  // namespace

void PriorSpec::validate() const {
  check_positive("alpha1 a", alpha1.a);
  check_positive("alpha1 b", alpha1.b);
  check_positive("alpha2 a", alpha2.a);
  check_positive("alpha2 b", alpha2.b);
  check_positive("gamma shape", gamma.shape);
  check_positive("gamma rate", gamma.rate);
  if (marginal_kind == garch::ErrorKind::StudentT) {
    if (!nu_tilde) throw ConfigError("prior: t marginals need a nu_tilde prior");
    check_positive("nu_tilde shape", nu_tilde->shape);
    check_positive("nu_tilde rate", nu_tilde->rate);
  }
  check_positive("copula nu shape", copula_nu.shape);
  check_positive("copula nu rate", copula_nu.rate);
  if (loading_mean.size() != copula::FactorLoadings::free_count(dim, n_factors))
    throw ConfigError("prior: mu* has " + std::to_string(loading_mean.size()) + " entries, expected " +
                      std::to_string(copula::FactorLoadings::free_count(dim, n_factors)));
}

PriorSpec default_priors(garch::ErrorKind marginal_kind, int dim, int n_factors) {
  PriorSpec s;
  s.marginal_kind = marginal_kind;
  if (marginal_kind == garch::ErrorKind::Gaussian) {
    s.alpha1 = {11.34, 85.12};
    s.alpha2 = {19.58, 4.62};
    s.gamma = {4.69, 1.0 / 0.03, 0.0};
  } else {
    s.alpha1 = {28.75, 324.57};
    s.alpha2 = {61.61, 22.40};
    s.gamma = {3.53, 1.0 / 0.0276, 0.0};
    s.nu_tilde = GammaPrior{8.39, 1.0 / 1.45, 2.0};
  }
  s.dim = dim;
  s.n_factors = n_factors;
  s.loading_mean.assign(copula::FactorLoadings::free_count(dim, n_factors), 0.0);
  s.copula_nu = {4.74, 1.0 / 2.03, 2.0};
  return s;
}

garch::GarchParams sample_garch(const PriorSpec& spec, Rng& rng) {
  garch::GarchParams p;
  p.error_kind = spec.marginal_kind;
  long i = 0;
  for (; i < kMaxRejections; ++i) {
    p.alpha1 = rng.beta(spec.alpha1.a, spec.alpha1.b);
    p.alpha2 = rng.beta(spec.alpha2.a, spec.alpha2.b);
    if (p.alpha1 + p.alpha2 < 1.0 && p.alpha1 + p.alpha2 > 0.0) break;
  }
  if (i == kMaxRejections) throw NumericalError("prior sampling: stationarity constraint rejected 10^6 draws");
  p.gamma = sample_gamma(spec.gamma, rng);
  if (spec.marginal_kind == garch::ErrorKind::StudentT) p.nu_tilde = sample_gamma(*spec.nu_tilde, rng);
  return p;
}

copula::CopulaParams sample_copula(const PriorSpec& spec, copula::Family family, Rng& rng) {
  copula::CopulaParams p;
  p.family = family;
  p.loadings.dim = spec.dim;
  p.loadings.n_factors = spec.n_factors;
  p.loadings.values.resize(spec.loading_mean.size());
  for (std::size_t i = 0; i < spec.loading_mean.size(); ++i) p.loadings.values[i] = spec.loading_mean[i] + rng.normal();
  if (family == copula::Family::StudentT) p.nu = sample_gamma(spec.copula_nu, rng);
  return p;
}

double log_stationary_mass(const BetaPrior& a1, const BetaPrior& a2) {
  // the oracle evaluates this for every proposal with fixed hyperparameters
  thread_local double ca1a = -1, ca1b = -1, ca2a = -1, ca2b = -1, cached = 0.0;
  if (a1.a == ca1a && a1.b == ca1b && a2.a == ca2a && a2.b == ca2b) return cached;
  // P(A1 + A2 < 1) = E[F2(1 - A1)]
  auto f = [&](double x) {
    return std::exp(special::beta_logpdf(a1.a, a1.b, x)) * special::beta_cdf(a2.a, a2.b, 1.0 - x);
  };
  const double mass = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, 0.0, 1.0, 15, 1e-12);
  ca1a = a1.a;
  ca1b = a1.b;
  ca2a = a2.a;
  ca2b = a2.b;
  cached = std::log(mass);
  return cached;
}

double log_prior_garch(const PriorSpec& spec, const garch::GarchParams& p) {
  if (!p.is_valid() || p.error_kind != spec.marginal_kind) return kNegInf;
  if (!(p.alpha1 > 0.0 && p.alpha2 > 0.0)) return kNegInf;
  double lp = special::beta_logpdf(spec.alpha1.a, spec.alpha1.b, p.alpha1) +
              special::beta_logpdf(spec.alpha2.a, spec.alpha2.b, p.alpha2) - log_stationary_mass(spec.alpha1, spec.alpha2) +
              gamma_prior_logpdf(spec.gamma, p.gamma);
  if (spec.marginal_kind == garch::ErrorKind::StudentT) lp += gamma_prior_logpdf(*spec.nu_tilde, *p.nu_tilde);
  return lp;
}

double log_prior_copula(const PriorSpec& spec, const copula::CopulaParams& p) {
  if (p.loadings.values.size() != spec.loading_mean.size()) return kNegInf;
  double lp = 0.0;
  for (std::size_t i = 0; i < spec.loading_mean.size(); ++i)
    lp += special::normal_logpdf(p.loadings.values[i] - spec.loading_mean[i]);
  if (p.family == copula::Family::StudentT) {
    if (!p.nu) return kNegInf;
    lp += gamma_prior_logpdf(spec.copula_nu, *p.nu);
  }
  return lp;
}

double log_prior_garch_unconstrained(const PriorSpec& spec, std::span<const double> theta) {
  for (double v : theta)
    if (!std::isfinite(v)) return kNegInf;
  const auto p = garch::from_unconstrained(theta, spec.marginal_kind);
  const double lp = log_prior_garch(spec, p);
  if (!std::isfinite(lp)) return kNegInf;
  return lp + garch::log_jacobian(garch::TransformedGarchParams::from_vector(theta));
}

double log_prior_copula_unconstrained(const PriorSpec& spec, copula::Family family, std::span<const double> theta) {
  for (double v : theta)
    if (!std::isfinite(v)) return kNegInf;
  const auto p = copula::CopulaParams::from_vector(theta, spec.dim, spec.n_factors, family);
  double lp = log_prior_copula(spec, p);
  if (family == copula::Family::StudentT) lp += theta.back();  // d nu / d df = exp(df)
  return lp;
}

BetaPrior fit_beta_ml(std::span<const double> x) {
  check_fit_input("beta fit", x);
  const double n = static_cast<double>(x.size());
  double s1 = 0.0, s2 = 0.0, mean = 0.0, sq = 0.0;
  for (double v : x) {
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("beta fit: values must lie in (0, 1)");
    s1 += std::log(v);
    s2 += std::log1p(-v);
    mean += v;
    sq += v * v;
  }
  s1 /= n;
  s2 /= n;
  mean /= n;
  if (sq / n - mean * mean <= 1e-14 * mean * mean) throw std::invalid_argument("beta fit: values have no spread");
  const double var = std::max(sq / n - mean * mean, 1e-12);
  // method of moments start, then Newton on the mean log-likelihood
  const double common = std::max(mean * (1.0 - mean) / var - 1.0, 0.5);
  double a = mean * common, b = (1.0 - mean) * common;
  using boost::math::digamma;
  using boost::math::trigamma;
  auto ll = [&](double aa, double bb) { return -special::log_beta_fn(aa, bb) + (aa - 1.0) * s1 + (bb - 1.0) * s2; };
  for (int it = 0; it < 200; ++it) {
    const double dab = digamma(a + b), tab = trigamma(a + b);
    const double ga = dab - digamma(a) + s1;
    const double gb = dab - digamma(b) + s2;
    const double haa = tab - trigamma(a), hbb = tab - trigamma(b), hab = tab;
    const double det = haa * hbb - hab * hab;
    double da = -(hbb * ga - hab * gb) / det;
    double db = -(haa * gb - hab * ga) / det;
    double step = 1.0;
    const double cur = ll(a, b);
    while (step > 1e-10 && (!(a + step * da > 0.0 && b + step * db > 0.0) || ll(a + step * da, b + step * db) < cur - 1e-12))
      step *= 0.5;
    a += step * da;
    b += step * db;
    if (std::fabs(step * da) < 1e-12 * a && std::fabs(step * db) < 1e-12 * b) break;
  }
  if (!(a > 0.0 && b > 0.0) || !std::isfinite(a + b)) throw NumericalError("beta fit did not converge");
  return {a, b};
}

GammaPrior fit_gamma_ml(std::span<const double> x) {
  check_fit_input("gamma fit", x);
  const double n = static_cast<double>(x.size());
  double mean = 0.0, mlog = 0.0;
  for (double v : x) {
    if (!(v > 0.0)) throw std::invalid_argument("gamma fit: values must be positive");
    mean += v;
    mlog += std::log(v);
  }
  mean /= n;
  mlog /= n;
  const double s = std::log(mean) - mlog;  // > 0 by Jensen unless degenerate
  if (!(s > 1e-14)) throw std::invalid_argument("gamma fit: values have no spread");
  // Minka's closed-form start followed by Newton on log a - digamma(a) = s
  double a = (3.0 - s + std::sqrt((s - 3.0) * (s - 3.0) + 24.0 * s)) / (12.0 * s);
  for (int it = 0; it < 100; ++it) {
    const double f = std::log(a) - boost::math::digamma(a) - s;
    const double fp = 1.0 / a - boost::math::trigamma(a);
    double next = a - f / fp;
    if (!(next > 0.0)) next = 0.5 * a;
    if (std::fabs(next - a) < 1e-13 * a) {
      a = next;
      break;
    }
    a = next;
  }
  return {a, a / mean, 0.0};
}

PriorSpec calibrate_priors(const Matrix& histories, garch::ErrorKind marginal_kind, int n_factors,
                           const CalibrationHooks& hooks) {
  const int D = static_cast<int>(histories.cols());
  if (histories.rows() < 100) throw ConfigError("calibrate_priors: need at least 100 observations per series");
  if (D < 3) throw ConfigError("calibrate_priors: need at least 3 series to fit the hyperparameters");
  if (!hooks.estimate_marginal) throw ConfigError("calibrate_priors: missing marginal estimator");
  PriorSpec spec = default_priors(marginal_kind, D, n_factors);
  std::vector<double> a1, a2, g, nu;
  Matrix u(histories.rows(), D);
  std::vector<double> col(static_cast<std::size_t>(histories.rows()));
  for (int d = 0; d < D; ++d) {
    for (Eigen::Index t = 0; t < histories.rows(); ++t) col[static_cast<std::size_t>(t)] = histories(t, d);
    const garch::GarchParams est = hooks.estimate_marginal(col);
    est.validate();
    a1.push_back(est.alpha1);
    a2.push_back(est.alpha2);
    g.push_back(est.gamma);
    if (marginal_kind == garch::ErrorKind::StudentT) nu.push_back(*est.nu_tilde);
    const auto ud = garch::marginal_cdf(est, col);
    for (Eigen::Index t = 0; t < histories.rows(); ++t) u(t, d) = ud[static_cast<std::size_t>(t)];
  }
  spec.alpha1 = fit_beta_ml(a1);
  spec.alpha2 = fit_beta_ml(a2);
  spec.gamma = fit_gamma_ml(g);
  if (marginal_kind == garch::ErrorKind::StudentT) {
    // plain Gamma fit with the truncation at 2 re-applied
    GammaPrior fit = fit_gamma_ml(nu);
    fit.lower = 2.0;
    spec.nu_tilde = fit;
  }
  if (hooks.estimate_copula && n_factors > 0) {
    auto est = hooks.estimate_copula(u);
    est.resize(spec.loading_mean.size());
    spec.loading_mean = est;
  }
  return spec;
}

std::string describe(const PriorSpec& s) {
  std::ostringstream os;
  os.precision(17);
  os << "marginal_kind=" << garch::to_string(s.marginal_kind) << '\n';
  os << "prior_alpha1_a=" << s.alpha1.a << "\nprior_alpha1_b=" << s.alpha1.b << '\n';
  os << "prior_alpha2_a=" << s.alpha2.a << "\nprior_alpha2_b=" << s.alpha2.b << '\n';
  os << "prior_gamma_shape=" << s.gamma.shape << "\nprior_gamma_rate=" << s.gamma.rate << '\n';
  if (s.nu_tilde) os << "prior_nu_tilde_shape=" << s.nu_tilde->shape << "\nprior_nu_tilde_rate=" << s.nu_tilde->rate << '\n';
  os << "prior_copula_nu_shape=" << s.copula_nu.shape << "\nprior_copula_nu_rate=" << s.copula_nu.rate << '\n';
  os << "prior_loading_mean=";
  for (std::size_t i = 0; i < s.loading_mean.size(); ++i) os << (i ? "," : "") << s.loading_mean[i];
  os << '\n';
  return os.str();
}

}  // namespace nifm::priors
