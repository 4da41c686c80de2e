#pragma once

// Prior distributions over marginal and copula parameters, prior sampling for
// training-set generation, and hyperparameter calibration from histories.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nifm/copula.hpp"
#include "nifm/garch.hpp"
#include "nifm/rng.hpp"
#include "nifm/types.hpp"

namespace nifm::priors {

struct BetaPrior {
  double a = 1.0;
  double b = 1.0;
};

/// Gamma(shape, rate), optionally truncated to (lower, inf).
struct GammaPrior {
  double shape = 1.0;
  double rate = 1.0;
  double lower = 0.0;
};

struct PriorSpec {
  garch::ErrorKind marginal_kind = garch::ErrorKind::Gaussian;
  BetaPrior alpha1;
  BetaPrior alpha2;
  GammaPrior gamma;
  std::optional<GammaPrior> nu_tilde;  // t errors only, truncated at 2
  int dim = 0;
  int n_factors = 0;
  std::vector<double> loading_mean;  // mu*, one entry per free loading
  GammaPrior copula_nu;              // t copula only, truncated at 2

  void validate() const;
};

PriorSpec default_priors(garch::ErrorKind marginal_kind, int dim, int n_factors);

/// Draws until alpha1 + alpha2 < 1; throws NumericalError after 10^6 rejections.
garch::GarchParams sample_garch(const PriorSpec& spec, Rng& rng);
copula::CopulaParams sample_copula(const PriorSpec& spec, copula::Family family, Rng& rng);

/// Log density over (alpha1, alpha2, gamma[, nu~]) including the truncation and
/// stationarity renormalisations; -inf outside the support.
double log_prior_garch(const PriorSpec& spec, const garch::GarchParams& p);
/// Log density over (G~, nu); -inf outside the support.
double log_prior_copula(const PriorSpec& spec, const copula::CopulaParams& p);

/// The same densities pushed to the unconstrained coordinates used by the
/// networks and the MCMC oracle (log-Jacobian included).
double log_prior_garch_unconstrained(const PriorSpec& spec, std::span<const double> theta);
double log_prior_copula_unconstrained(const PriorSpec& spec, copula::Family family, std::span<const double> theta);

/// log P(alpha1 + alpha2 < 1) under the independent Beta priors.
double log_stationary_mass(const BetaPrior& a1, const BetaPrior& a2);

/// Maximum-likelihood fits. Throw std::invalid_argument on fewer than 3
/// points, values outside the support or zero spread.
BetaPrior fit_beta_ml(std::span<const double> x);
GammaPrior fit_gamma_ml(std::span<const double> x);

struct CalibrationHooks {
  /// Point estimate (for instance a posterior mean) of one series' parameters.
  std::function<garch::GarchParams(std::span<const double> y)> estimate_marginal;
  /// Unconstrained copula estimate from pseudo-observations.
  std::function<std::vector<double>(const Matrix& u)> estimate_copula;
};

/// Fits Beta/Gamma hyperparameters to per-series estimates and sets mu* to the
/// copula estimate on the resulting pseudo-observations.
PriorSpec calibrate_priors(const Matrix& histories, garch::ErrorKind marginal_kind, int n_factors,
                           const CalibrationHooks& hooks);

std::string describe(const PriorSpec& spec);

}  // namespace nifm::priors
