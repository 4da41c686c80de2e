#include "nifm/config.hpp"

#include <sstream>

#include "nifm/errors.hpp"

namespace nifm::config {

namespace {

std::size_t get_count(const io::KeyValues& kv, const std::string& key, std::size_t fallback) {
  const long long v = io::get_int(kv, key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError(key + ": must be non-negative, got " + std::to_string(v));
  return static_cast<std::size_t>(v);
}

std::vector<double> parse_list(const std::string& key, const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    io::KeyValues one{{key, item}};
    out.push_back(io::get_double(one, key, 0.0));
  }
  return out;
}

void positive(const std::string& name, double v) {
  if (!(v > 0.0)) throw ConfigError(name + ": must be positive");
}

}  // namespace

std::string to_string(Preset p) { return p == Preset::Desk ? "desk" : "full"; }

Preset preset_from_string(const std::string& s) {
  if (s == "desk") return Preset::Desk;
  if (s == "full") return Preset::Full;
  throw ConfigError("preset: expected desk or full, got '" + s + "'");
}

const std::set<std::string>& ExperimentConfig::keys() {
  static const std::set<std::string> k{
      "marginal_kind", "family", "D", "k", "T", "preset", "batch", "lr", "max_epochs", "patience", "n_per_epoch",
      "val_frac", "max_seconds", "J", "h", "K", "plugin", "mcmc_iter", "mcmc_burn", "chains", "seed", "threads",
      "prior_alpha1_a", "prior_alpha1_b", "prior_alpha2_a", "prior_alpha2_b", "prior_gamma_shape",
      "prior_gamma_rate", "prior_nu_tilde_shape", "prior_nu_tilde_rate", "prior_copula_nu_shape",
      "prior_copula_nu_rate", "prior_loading_mean"};
  return k;
}

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  c.preset = Preset::Desk;
  c.T = 200;
  c.D = 3;
  c.n_per_epoch = 2000;
  c.max_epochs = 300;
  c.patience = 100;
  c.lr = 1e-3;
  c.prior = priors::default_priors(c.marginal_kind, c.D, c.k);
  return c;
}

priors::PriorSpec apply_prior_keys(const io::KeyValues& kv, priors::PriorSpec p) {
  p.alpha1.a = io::get_double(kv, "prior_alpha1_a", p.alpha1.a);
  p.alpha1.b = io::get_double(kv, "prior_alpha1_b", p.alpha1.b);
  p.alpha2.a = io::get_double(kv, "prior_alpha2_a", p.alpha2.a);
  p.alpha2.b = io::get_double(kv, "prior_alpha2_b", p.alpha2.b);
  p.gamma.shape = io::get_double(kv, "prior_gamma_shape", p.gamma.shape);
  p.gamma.rate = io::get_double(kv, "prior_gamma_rate", p.gamma.rate);
  if (p.nu_tilde) {
    p.nu_tilde->shape = io::get_double(kv, "prior_nu_tilde_shape", p.nu_tilde->shape);
    p.nu_tilde->rate = io::get_double(kv, "prior_nu_tilde_rate", p.nu_tilde->rate);
  } else if (kv.count("prior_nu_tilde_shape") || kv.count("prior_nu_tilde_rate")) {
    throw ConfigError("prior_nu_tilde_*: only valid with t marginals");
  }
  p.copula_nu.shape = io::get_double(kv, "prior_copula_nu_shape", p.copula_nu.shape);
  p.copula_nu.rate = io::get_double(kv, "prior_copula_nu_rate", p.copula_nu.rate);
  if (const auto it = kv.find("prior_loading_mean"); it != kv.end()) {
    p.loading_mean = it->second.empty() ? std::vector<double>{} : parse_list("prior_loading_mean", it->second);
  }
  return p;
}

void ExperimentConfig::apply(const io::KeyValues& kv) {
  if (kv.count("preset")) {
    const Preset p = preset_from_string(io::get_string(kv, "preset", ""));
    if (p == Preset::Desk) *this = desk();
    preset = p;
  }
  if (kv.count("marginal_kind")) marginal_kind = garch::error_kind_from_string(io::get_string(kv, "marginal_kind", ""));
  if (kv.count("family")) family = copula::family_from_string(io::get_string(kv, "family", ""));
  D = static_cast<int>(io::get_int(kv, "D", D));
  k = static_cast<int>(io::get_int(kv, "k", k));
  T = get_count(kv, "T", T);
  batch = get_count(kv, "batch", batch);
  lr = io::get_double(kv, "lr", lr);
  max_epochs = get_count(kv, "max_epochs", max_epochs);
  patience = get_count(kv, "patience", patience);
  n_per_epoch = get_count(kv, "n_per_epoch", n_per_epoch);
  val_frac = io::get_double(kv, "val_frac", val_frac);
  max_seconds = io::get_double(kv, "max_seconds", max_seconds);
  J = get_count(kv, "J", J);
  h = get_count(kv, "h", h);
  K = get_count(kv, "K", K);
  if (kv.count("plugin")) plugin = inference::plugin_mode_from_string(io::get_string(kv, "plugin", ""));
  mcmc_iter = get_count(kv, "mcmc_iter", mcmc_iter);
  mcmc_burn = get_count(kv, "mcmc_burn", mcmc_burn);
  chains = get_count(kv, "chains", chains);
  seed = static_cast<std::uint64_t>(io::get_int(kv, "seed", static_cast<long long>(seed)));
  threads = static_cast<int>(io::get_int(kv, "threads", threads));

  // the prior shape follows the model; explicit prior keys win
  if (prior.marginal_kind != marginal_kind || prior.dim != D || prior.n_factors != k || prior.loading_mean.empty())
    if (D >= 1 && k >= 0 && k <= D) prior = priors::default_priors(marginal_kind, D, k);
  prior = apply_prior_keys(kv, prior);
}

void ExperimentConfig::validate() const {
  if (D < 1) throw ConfigError("D: must be at least 1, got " + std::to_string(D));
  if (k < 0 || k > D) throw ConfigError("k: need 0 <= k <= D, got k=" + std::to_string(k) + " with D=" + std::to_string(D));
  if (T < 8) throw ConfigError("T: must be at least 8, got " + std::to_string(T));
  if (batch < 1) throw ConfigError("batch: must be positive");
  positive("lr", lr);
  if (max_epochs < 1) throw ConfigError("max_epochs: must be positive");
  if (patience < 1) throw ConfigError("patience: must be positive");
  if (!(val_frac > 0.0 && val_frac < 1.0)) throw ConfigError("val_frac: must lie in (0, 1)");
  if (n_per_epoch < 2) throw ConfigError("n_per_epoch: must be at least 2");
  if (max_seconds < 0.0) throw ConfigError("max_seconds: must be non-negative");
  if (J < 1) throw ConfigError("J: must be positive");
  if (h < 1) throw ConfigError("h: must be positive");
  if (mcmc_iter < 100) throw ConfigError("mcmc_iter: need at least 100 kept draws");
  if (chains < 1) throw ConfigError("chains: must be positive");
  if (threads < 1) throw ConfigError("threads: must be positive");
  prior.validate();
  if (prior.dim != D || prior.n_factors != k || prior.marginal_kind != marginal_kind)
    throw ConfigError("prior: shape does not match marginal_kind/D/k");
}

nets::MarginalArch ExperimentConfig::marginal_arch() const {
  return preset == Preset::Desk ? nets::MarginalArch::desk(T, marginal_kind) : nets::MarginalArch::full(T, marginal_kind);
}

nets::CopulaArch ExperimentConfig::copula_arch() const {
  if (k < 1) throw ConfigError("k: the copula network needs k >= 1");
  return preset == Preset::Desk ? nets::CopulaArch::desk(T, D, k, family) : nets::CopulaArch::full(T, D, k, family);
}

nets::TrainConfig ExperimentConfig::train_config() const {
  nets::TrainConfig c;
  c.batch = batch;
  c.adam.lr = lr;
  c.max_epochs = max_epochs;
  c.patience = patience;
  c.n_per_epoch = n_per_epoch;
  c.val_frac = val_frac;
  c.max_seconds = max_seconds;
  c.seed = seed;
  c.threads = threads;
  return c;
}

oracle::McmcConfig ExperimentConfig::mcmc_config() const {
  oracle::McmcConfig c;
  c.n_iter = mcmc_iter;
  c.n_burn = mcmc_burn;
  return c;
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os.precision(17);
  os << "preset=" << to_string(preset) << "\nmarginal_kind=" << garch::to_string(marginal_kind)
     << "\nfamily=" << copula::to_string(family) << "\nD=" << D << "\nk=" << k << "\nT=" << T << "\nbatch=" << batch
     << "\nlr=" << lr << "\nmax_epochs=" << max_epochs << "\npatience=" << patience << "\nn_per_epoch=" << n_per_epoch
     << "\nval_frac=" << val_frac << "\nmax_seconds=" << max_seconds << "\nJ=" << J << "\nh=" << h << "\nK=" << K
     << "\nplugin=" << inference::to_string(plugin) << "\nmcmc_iter=" << mcmc_iter << "\nmcmc_burn=" << mcmc_burn
     << "\nchains=" << chains << "\nseed=" << seed << "\nthreads=" << threads << '\n';
  std::string p = priors::describe(prior);
  // describe() also echoes marginal_kind, already written above
  p.erase(0, p.find('\n') + 1);
  return os.str() + p;
}

}  // namespace nifm::config
