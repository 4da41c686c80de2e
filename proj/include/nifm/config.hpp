#pragma once
// Experiment configuration shared by the command-line tools: flat key=value
// files, typed fields with validation, and the prior block.
#include <cstdint>
#include <set>
#include <string>

#include "nifm/copula.hpp"
#include "nifm/garch.hpp"
#include "nifm/inference.hpp"
#include "nifm/io.hpp"
#include "nifm/nets.hpp"
#include "nifm/oracle.hpp"
#include "nifm/priors.hpp"

namespace nifm::config {

enum class Preset { Full, Desk };
std::string to_string(Preset p);
Preset preset_from_string(const std::string& s);

struct ExperimentConfig {
  garch::ErrorKind marginal_kind = garch::ErrorKind::Gaussian;
  copula::Family family = copula::Family::Gaussian;
  int D = 3;
  int k = 1;
  std::size_t T = 200;
  Preset preset = Preset::Full;

  std::size_t batch = 32;
  double lr = 9e-5;
  std::size_t max_epochs = 4000;
  std::size_t patience = 100;
  std::size_t n_per_epoch = 30000;
  double val_frac = 0.1;
  double max_seconds = 0.0;

  std::size_t J = 1000;
  std::size_t h = 1;
  std::size_t K = 0;  // 0: every roll the data allows
  inference::PluginMode plugin = inference::PluginMode::TransformedMean;

  std::size_t mcmc_iter = 20000;
  std::size_t mcmc_burn = 5000;
  std::size_t chains = 4;

  std::uint64_t seed = 0;
  int threads = 1;

  /// Prior hyperparameters; default_priors() unless overridden by prior_* keys.
  priors::PriorSpec prior = priors::default_priors(garch::ErrorKind::Gaussian, 3, 1);

  /// Every key accepted in a config file.
  static const std::set<std::string>& keys();

  /// The desk preset: T=200, D=3, N=2000 per epoch, at most 300 epochs and the
  /// reduced network widths.
  static ExperimentConfig desk();

  /// Overrides fields present in `kv`. Prior keys are applied after the model
  /// shape is known, so a changed D or k resizes the default mu*.
  void apply(const io::KeyValues& kv);

  /// Throws ConfigError naming the first offending field. k may equal D so
  /// that saturated factor models can be compared.
  void validate() const;

  nets::MarginalArch marginal_arch() const;
  nets::CopulaArch copula_arch() const;
  nets::TrainConfig train_config() const;
  oracle::McmcConfig mcmc_config() const;

  /// key=value text that apply() reads back to the same configuration.
  std::string to_text() const;
};

/// Reads prior_* keys on top of `base`.
priors::PriorSpec apply_prior_keys(const io::KeyValues& kv, priors::PriorSpec base);

}  // namespace nifm::config
