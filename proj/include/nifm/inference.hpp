#pragma once

// Two-stage amortised inference: per-series marginal posteriors, plug-in
// estimates, PIT copula data, then the copula posterior.

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "nifm/copula.hpp"
#include "nifm/garch.hpp"
#include "nifm/nets.hpp"
#include "nifm/rng.hpp"
#include "nifm/types.hpp"

namespace nifm::inference {

/// Where the plug-in posterior mean is taken before back-transforming.
enum class PluginMode {
  TransformedMean,  // analytic mean of the Gaussian, then back-transform
  SampledMean,      // Monte Carlo mean of back-transformed draws
};

std::string to_string(PluginMode m);
PluginMode plugin_mode_from_string(const std::string& s);

struct InferOptions {
  PluginMode plugin = PluginMode::TransformedMean;
  std::size_t plugin_draws = 1000;  // SampledMean only
  std::uint64_t seed = 0;           // SampledMean only
};

struct NifmResult {
  std::vector<nets::GaussianPosterior> marginal_posteriors;
  std::vector<garch::GarchParams> marginal_plugins;
  Matrix copula_data;  // T x D, entries in (0, 1)
  /// Absent for the zero-factor (independence) model.
  std::optional<nets::GaussianPosterior> copula_posterior;
  garch::ErrorKind marginal_kind = garch::ErrorKind::Gaussian;
  copula::Family family = copula::Family::Gaussian;
  int D = 0;
  int k = 0;
  std::size_t T = 0;
  PluginMode plugin = PluginMode::TransformedMean;
  double seconds = 0.0;

  std::size_t marginal_dim() const { return static_cast<std::size_t>(garch::param_count(marginal_kind)); }
  /// Structured report: means, sds, plug-ins and the configuration.
  std::string to_json() const;
};

/// Names of the transformed coordinates, e.g. "y2.phi1" or "G_3_1" (no commas, so names are safe in CSV).
std::vector<std::string> marginal_param_names(garch::ErrorKind kind, int d);
std::vector<std::string> copula_param_names(int D, int k, copula::Family family);

/// Runs both stages on a T x D dataset. Pass a null copula net for the
/// zero-factor model. Throws ConfigError for D < 2, ShapeError when the data
/// does not fit a network and NumericalError for non-finite series.
NifmResult infer(nets::MarginalNet& marginal, nets::CopulaNet* copula_net, const Matrix& y,
                 const InferOptions& opts = {});

/// Posterior draws from the factorised approximation.
struct PosteriorDraws {
  garch::ErrorKind marginal_kind = garch::ErrorKind::Gaussian;
  copula::Family family = copula::Family::Gaussian;
  int D = 0;
  int k = 0;  // 0: independence copula
  Matrix marginal_transformed;  // J x (D * m)
  Matrix copula_transformed;    // J x m_cop (no columns when k = 0)
  std::vector<std::vector<garch::GarchParams>> marginals;  // [j][d]
  std::vector<copula::CopulaParams> copulas;               // [j], empty when k = 0

  std::size_t size() const { return marginals.size(); }
};

PosteriorDraws joint_posterior_sample(const NifmResult& r, std::size_t J, Rng& rng);

}  // namespace nifm::inference
