#pragma once

// GARCH(1,1) marginal model with Gaussian or unit-scale Student-t errors.
//
//   y_t       = sigma_t * eps_t
//   sigma_1^2 = gamma / (1 - alpha1 - alpha2)
//   sigma_t^2 = gamma + alpha1 * y_{t-1}^2 + alpha2 * sigma_{t-1}^2,  t >= 2
//
// Inference happens on the unconstrained coordinates
//   phi1 = logit(alpha1 + alpha2), phi2 = log(gamma / (1 - alpha1 - alpha2)),
//   phi3 = logit(alpha1 / (alpha1 + alpha2)), df = log(nu - 2).

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nifm::ad {
class Tensor;
}

namespace nifm::garch {

enum class ErrorKind { Gaussian, StudentT };

std::string to_string(ErrorKind kind);
ErrorKind error_kind_from_string(const std::string& s);

/// Number of transformed coordinates: 3 for Gaussian errors, 4 for Student-t.
inline int param_count(ErrorKind kind) { return kind == ErrorKind::Gaussian ? 3 : 4; }

struct GarchParams {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double gamma = 1.0;
  ErrorKind error_kind = ErrorKind::Gaussian;
  std::optional<double> nu_tilde;

  /// Throws std::invalid_argument when the stationarity/positivity invariants fail.
  void validate() const;
  bool is_valid() const noexcept;
};

struct TransformedGarchParams {
  double phi1 = 0.0;
  double phi2 = 0.0;
  double phi3 = 0.0;
  std::optional<double> df_tilde;

  std::vector<double> to_vector() const;
  static TransformedGarchParams from_vector(std::span<const double> v);
};

/// Throws std::domain_error when alpha1 + alpha2 == 0 (phi3 undefined).
TransformedGarchParams to_unconstrained(const GarchParams& p);
GarchParams from_unconstrained(const TransformedGarchParams& t, ErrorKind kind);
GarchParams from_unconstrained(std::span<const double> t, ErrorKind kind);

/// log |d(alpha1, alpha2, gamma[, nu]) / d(phi1, phi2, phi3[, df])|
double log_jacobian(const TransformedGarchParams& t);

double unconditional_variance(const GarchParams& p);
double next_variance(const GarchParams& p, double y_prev, double sigma2_prev);

std::vector<double> conditional_variances(const GarchParams& p, std::span<const double> y);

/// Log density of the standardised error eps (Gaussian or unit-scale t).
double error_logpdf(const GarchParams& p, double eps);
double error_cdf(const GarchParams& p, double eps);
double error_quantile(const GarchParams& p, double u);

/// Log density of one observation y given its conditional variance.
double observation_logpdf(const GarchParams& p, double y, double sigma2);

/// Sum over t of log p(y_t | sigma_t). Returns -inf if any term is not finite.
double log_likelihood(const GarchParams& p, std::span<const double> y);

/// The same likelihood as an autodiff expression in the transformed coordinates
/// `theta` (shape {3} or {4}); used for gradient checks and gradient-based fits.
ad::Tensor log_likelihood_ad(const ad::Tensor& theta, ErrorKind kind, std::span<const double> y);

/// Runs the recursion on caller-supplied standardised innovations.
std::vector<double> simulate(const GarchParams& p, std::span<const double> innovations);

inline constexpr double kCdfClamp = 1e-12;

/// PIT u_t = F(y_t / sigma_t), clamped to [1e-12, 1 - 1e-12].
std::vector<double> marginal_cdf(const GarchParams& p, std::span<const double> y);

/// Inverse of the PIT at a known conditional variance.
double marginal_quantile(const GarchParams& p, double u, double sigma2);

}  // namespace nifm::garch
