#pragma once

// Reference posterior sampler: adaptive random-walk Metropolis for GARCH and
// copula posteriors, with ESS and split R-hat diagnostics.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nifm/copula.hpp"
#include "nifm/priors.hpp"
#include "nifm/rng.hpp"
#include "nifm/types.hpp"

namespace nifm::oracle {

using LogTarget = std::function<double(std::span<const double>)>;

struct McmcConfig {
  std::size_t n_iter = 20000;  // kept draws after burn-in
  std::size_t n_burn = 5000;
  bool adapt = true;
  double target_accept = 0.234;
  double init_scale = 0.1;  // initial proposal sd per coordinate
  /// Keep every proposal covariance snapshot taken every this many burn-in steps (0 = none).
  std::size_t history_every = 500;
};

struct McmcChain {
  Matrix draws;  // n_iter x m, transformed space
  double acceptance = 0.0;  // over the kept iterations
  std::vector<Eigen::MatrixXd> proposal_history;
  Eigen::MatrixXd proposal;  // frozen proposal covariance
  std::uint64_t seed = 0;
  double seconds = 0.0;

  Eigen::VectorXd mean() const;
  Eigen::VectorXd sd() const;
};

/// The Metropolis rule shared by the sampler and its discrete smoke test:
/// accept when log(u) < log_ratio.
inline bool mh_accept(double log_ratio, double u) { return std::log(u) < log_ratio; }

/// Gaussian random-walk Metropolis. During burn-in the proposal covariance
/// follows the running empirical covariance (Haario) and a Robbins-Monro
/// global scale steers acceptance to cfg.target_accept; both freeze after
/// burn-in. Throws NumericalError on a non-finite start or 1000 consecutive
/// burn-in rejections.
McmcChain mh_sample(const LogTarget& log_target, std::span<const double> init, const McmcConfig& cfg,
                    std::uint64_t seed);

/// Transformed-space GARCH posterior: prior with Jacobian plus likelihood.
/// An empty series samples the prior alone.
LogTarget garch_log_posterior(std::span<const double> y, const priors::PriorSpec& prior);
McmcChain garch_posterior(std::span<const double> y, const priors::PriorSpec& prior, const McmcConfig& cfg,
                          std::uint64_t seed, std::optional<std::vector<double>> init = std::nullopt);

LogTarget copula_log_posterior(const Matrix& u, const priors::PriorSpec& prior, copula::Family family);
McmcChain copula_posterior(const Matrix& u, const priors::PriorSpec& prior, copula::Family family,
                           const McmcConfig& cfg, std::uint64_t seed,
                           std::optional<std::vector<double>> init = std::nullopt);

/// Two-step MCMC reference (MCMC-IFM): GARCH chains per series, plug-ins
/// from the pooled transformed-space posterior means, PIT copula data, then
/// copula chains. GARCH chains start from independent prior draws; copula
/// chains start from the best of 4 short pilot runs per chain.
struct IfmRun {
  std::vector<std::vector<McmcChain>> marginal_chains;  // [series][chain]
  std::vector<garch::GarchParams> plugins;
  Matrix copula_data;
  std::vector<McmcChain> copula_chains;  // empty when the prior has k = 0
  copula::Family family = copula::Family::Gaussian;
  double seconds = 0.0;
};

/// Chain c of series d uses seed derive(derive(seed, d), c); the copula
/// chains use d = D. Up to `threads` chains run at once.
IfmRun run_ifm(const Matrix& y, const priors::PriorSpec& prior, copula::Family family, const McmcConfig& cfg,
               std::size_t n_chains, std::uint64_t seed, int threads = 1);

/// Rows of every chain stacked, for pooled summaries.
Matrix pooled(const std::vector<McmcChain>& chains);

struct Diagnostics {
  std::vector<double> ess;   // summed over chains
  std::vector<double> rhat;  // split R-hat
};

/// Geyer initial-positive-sequence ESS for one series.
double effective_sample_size(std::span<const double> x);
/// Needs at least one chain with 100 or more draws, all chains equally long.
Diagnostics diagnostics(const std::vector<Matrix>& chains);

/// Header row from `names`, one draw per line.
void write_chain_csv(const std::string& path, const McmcChain& chain, const std::vector<std::string>& names);

}  // namespace nifm::oracle
