#include "nifm/special.hpp"

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nifm::special {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double poly(const double* c, int n, double x) {
  double r = c[n - 1];
  for (int i = n - 2; i >= 0; --i) r = r * x + c[i];
  return r;
}

// AS241 PPND16, coefficients in ascending powers.
double ppnd16(double p) {
  static const double a[] = {3.3871328727963666080e0, 1.3314166789178437745e+2,
                             1.9715909503065514427e+3, 1.3731693765509461125e+4,
                             4.5921953931549871457e+4, 6.7265770927008700853e+4,
                             3.3430575583588128105e+4, 2.5090809287301226727e+3};
  static const double b[] = {1.0,
                             4.2313330701600911252e+1,
                             6.8718700749205790830e+2,
                             5.3941960214247511077e+3,
                             2.1213794301586595867e+4,
                             3.9307895800092710610e+4,
                             2.8729085735721942674e+4,
                             5.2264952788528545610e+3};
  static const double c[] = {1.42343711074968357734e0, 4.63033784615654529590e0,
                             5.76949722146069140550e0, 3.64784832476320460504e0,
                             1.27045825245236838258e0, 2.41780725177450611770e-1,
                             2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static const double d[] = {1.0,
                             2.05319162663775882187e0,
                             1.67638483018380384940e0,
                             6.89767334985100004550e-1,
                             1.48103976427480074590e-1,
                             1.51986665636164571966e-2,
                             5.47593808499534494600e-4,
                             1.05075007164441684324e-9};
  static const double e[] = {6.65790464350110377720e0, 5.46378491116411436990e0,
                             1.78482653991729133580e0, 2.96560571828504891230e-1,
                             2.65321895265761230930e-2, 1.24266094738807843860e-3,
                             2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static const double f[] = {1.0,
                             5.99832206555887937690e-1,
                             1.36929880922735805310e-1,
                             1.48753612908506148525e-2,
                             7.86869131145613259100e-4,
                             1.84631831751005468180e-5,
                             1.42151175831644588870e-7,
                             2.04426310338993978564e-15};
  const double q = p - 0.5;
  if (std::fabs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * poly(a, 8, r) / poly(b, 8, r);
  }
  double r = q < 0 ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double val;
  if (r <= 5.0) {
    r -= 1.6;
    val = poly(c, 8, r) / poly(d, 8, r);
  } else {
    r -= 5.0;
    val = poly(e, 8, r) / poly(f, 8, r);
  }
  return q < 0 ? -val : val;
}

// Upper tail P(T > x) for x >= 0.
double t_upper_tail(double nu, double x) {
  const double x2 = x * x;
  if (x2 < nu) return 0.5 * boost::math::ibetac(0.5, 0.5 * nu, x2 / (nu + x2));
  return 0.5 * boost::math::ibeta(0.5 * nu, 0.5, nu / (nu + x2));
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double normal_logpdf(double x) { return -kLogSqrt2Pi - 0.5 * x * x; }

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must lie in (0, 1)");
  double x = ppnd16(p);
  // Halley step on the tail that carries the precision
  const double err = (p < 0.5) ? normal_cdf(x) - p : (1.0 - p) - normal_cdf(-x);
  const double pdf = std::exp(normal_logpdf(x));
  if (pdf > 0.0 && std::isfinite(err)) {
    const double u = err / pdf;
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

double t_logpdf(double nu, double x) {
  return std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu) - 0.5 * std::log(nu * M_PI) -
         0.5 * (nu + 1.0) * std::log1p(x * x / nu);
}

double t_cdf(double nu, double x) {
  if (std::isnan(x)) return x;
  if (x == kInf) return 1.0;
  if (x == -kInf) return 0.0;
  const double tail = t_upper_tail(nu, std::fabs(x));
  return x >= 0.0 ? 1.0 - tail : tail;
}

double t_quantile(double nu, double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("t_quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  return boost::math::quantile(boost::math::students_t_distribution<double>(nu), p);
}

double log_beta_fn(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

double beta_logpdf(double a, double b, double x) {
  if (!(x > 0.0 && x < 1.0)) return -kInf;
  return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta_fn(a, b);
}

double gamma_logpdf(double a, double rate, double x) {
  if (!(x > 0.0)) return -kInf;
  return a * std::log(rate) - std::lgamma(a) + (a - 1.0) * std::log(x) - rate * x;
}

double gamma_cdf(double a, double rate, double x) {
  if (!(x > 0.0)) return 0.0;
  return boost::math::gamma_p(a, rate * x);
}

double gamma_quantile(double a, double rate, double p) {
  return boost::math::gamma_p_inv(a, p) / rate;
}

double beta_cdf(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return boost::math::ibeta(a, b, x);
}

double beta_quantile(double a, double b, double p) { return boost::math::ibeta_inv(a, b, p); }

double logit(double p) { return std::log(p / (1.0 - p)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double log_sum_exp(const double* v, int n) {
  double m = -kInf;
  for (int i = 0; i < n; ++i) m = std::max(m, v[i]);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += std::exp(v[i] - m);
  return m + std::log(s);
}

}  // namespace nifm::special
