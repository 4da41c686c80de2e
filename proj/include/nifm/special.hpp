#pragma once

// Scalar distribution primitives shared by the marginal and copula models.
// Natural log throughout.

namespace nifm::special {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;
inline constexpr double kLog2Pi = 1.83787706640934548356;

double normal_cdf(double x);
double normal_logpdf(double x);
/// Wichura's AS241 rational approximation followed by one Halley correction.
/// Throws std::domain_error unless 0 < p < 1.
double normal_quantile(double p);

/// Unit-scale Student-t with `nu` > 0 degrees of freedom.
double t_logpdf(double nu, double x);
double t_cdf(double nu, double x);
/// Safeguarded Newton on a bisection bracket. Throws unless 0 < p < 1.
double t_quantile(double nu, double p);

double log_beta_fn(double a, double b);
double beta_logpdf(double a, double b, double x);
/// Gamma with shape `a` and rate `rate`.
double gamma_logpdf(double a, double rate, double x);
double gamma_cdf(double a, double rate, double x);
double gamma_quantile(double a, double rate, double p);
double beta_cdf(double a, double b, double x);
double beta_quantile(double a, double b, double p);

double logit(double p);
double sigmoid(double x);
/// log(1 + exp(x)) without overflow.
double softplus(double x);
/// log(sum(exp(v))) over a contiguous range.
double log_sum_exp(const double* v, int n);

}  // namespace nifm::special
