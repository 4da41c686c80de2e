#include "nifm/inference.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

#include "nifm/errors.hpp"

namespace nifm::inference {

std::string to_string(PluginMode m) { return m == PluginMode::TransformedMean ? "transformed-mean" : "sampled-mean"; }

PluginMode plugin_mode_from_string(const std::string& s) {
  if (s == "transformed-mean") return PluginMode::TransformedMean;
  if (s == "sampled-mean") return PluginMode::SampledMean;
  throw ConfigError("plugin mode must be transformed-mean or sampled-mean, got '" + s + "'");
}

std::vector<std::string> marginal_param_names(garch::ErrorKind kind, int d) {
  const std::string p = "y" + std::to_string(d + 1) + ".";
  std::vector<std::string> n{p + "phi1", p + "phi2", p + "phi3"};
  if (kind == garch::ErrorKind::StudentT) n.push_back(p + "df");
  return n;
}

std::vector<std::string> copula_param_names(int D, int k, copula::Family family) {
  std::vector<std::string> n;
  for (int i = 0; i < D; ++i)
    for (int j = 0; j <= std::min(i, k - 1); ++j) n.push_back("G_" + std::to_string(i + 1) + "_" + std::to_string(j + 1));
  if (family == copula::Family::StudentT) n.push_back("nu");
  return n;
}

namespace {

garch::GarchParams sampled_plugin(const nets::GaussianPosterior& q, garch::ErrorKind kind, std::size_t J, Rng& rng) {
  const Matrix draws = nets::sample_posterior(q, J, rng);
  garch::GarchParams mean;
  mean.error_kind = kind;
  mean.alpha1 = mean.alpha2 = mean.gamma = 0.0;
  double nu = 0.0;
  for (Eigen::Index j = 0; j < draws.rows(); ++j) {
    const auto p = garch::from_unconstrained(std::span<const double>(draws.row(j).data(), draws.cols()), kind);
    mean.alpha1 += p.alpha1;
    mean.alpha2 += p.alpha2;
    mean.gamma += p.gamma;
    if (p.nu_tilde) nu += *p.nu_tilde;
  }
  const double n = static_cast<double>(draws.rows());
  mean.alpha1 /= n;
  mean.alpha2 /= n;
  mean.gamma /= n;
  if (kind == garch::ErrorKind::StudentT) mean.nu_tilde = nu / n;
  return mean;  // the stationary region is convex, so the average stays inside it
}

}  // namespace

NifmResult infer(nets::MarginalNet& marginal, nets::CopulaNet* copula_net, const Matrix& y, const InferOptions& opts) {
  const auto t0 = std::chrono::steady_clock::now();
  const int D = static_cast<int>(y.cols());
  if (D < 2) throw ConfigError("copula stage requires D >= 2 series, got " + std::to_string(D));
  const std::size_t T = static_cast<std::size_t>(y.rows());
  if (T != marginal.arch().T)
    throw ShapeError("marginal net expects T=" + std::to_string(marginal.arch().T) + ", data has " + std::to_string(T) +
                     " rows");
  if (copula_net) {
    if (copula_net->arch().D != D)
      throw ShapeError("copula net expects D=" + std::to_string(copula_net->arch().D) + ", data has " +
                       std::to_string(D) + " series");
    if (copula_net->arch().T != T)
      throw ShapeError("copula net expects T=" + std::to_string(copula_net->arch().T) + ", data has " +
                       std::to_string(T) + " rows");
  }
  for (int d = 0; d < D; ++d)
    if (!y.col(d).allFinite()) throw NumericalError("series " + std::to_string(d + 1) + " contains non-finite values");

  NifmResult r;
  r.marginal_kind = marginal.arch().kind;
  r.D = D;
  r.T = T;
  r.plugin = opts.plugin;
  r.marginal_posteriors = marginal.posteriors(y);
  r.copula_data.resize(y.rows(), D);
  Rng rng(opts.seed);
  std::vector<double> col(T);
  for (int d = 0; d < D; ++d) {
    const auto& q = r.marginal_posteriors[static_cast<std::size_t>(d)];
    if (!q.mean.allFinite() || !q.chol.allFinite())
      throw NumericalError("series " + std::to_string(d + 1) + ": marginal network produced non-finite output");
    garch::GarchParams p = opts.plugin == PluginMode::TransformedMean
                               ? garch::from_unconstrained(std::span<const double>(q.mean.data(), q.dim()), r.marginal_kind)
                               : sampled_plugin(q, r.marginal_kind, opts.plugin_draws, rng);
    for (std::size_t t = 0; t < T; ++t) col[t] = y(static_cast<Eigen::Index>(t), d);
    const auto u = garch::marginal_cdf(p, col);
    for (std::size_t t = 0; t < T; ++t) r.copula_data(static_cast<Eigen::Index>(t), d) = u[t];
    r.marginal_plugins.push_back(p);
  }
  if (copula_net) {
    r.family = copula_net->arch().family;
    r.k = copula_net->arch().k;
    r.copula_posterior = copula_net->posterior(r.copula_data);
    if (!r.copula_posterior->mean.allFinite() || !r.copula_posterior->chol.allFinite())
      throw NumericalError("copula network produced non-finite output");
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::string NifmResult::to_json() const {
  using nlohmann::json;
  json j;
  j["config"] = {{"D", D},
                 {"T", T},
                 {"k", k},
                 {"marginal_kind", garch::to_string(marginal_kind)},
                 {"copula_family", k > 0 ? copula::to_string(family) : "independence"},
                 {"plugin", to_string(plugin)},
                 {"seconds", seconds}};
  json margs = json::array();
  for (int d = 0; d < D; ++d) {
    const auto& q = marginal_posteriors[static_cast<std::size_t>(d)];
    const auto& p = marginal_plugins[static_cast<std::size_t>(d)];
    const auto names = marginal_param_names(marginal_kind, d);
    const Eigen::VectorXd sd = q.sd();
    json e;
    e["series"] = d + 1;
    for (std::size_t i = 0; i < names.size(); ++i)
      e["posterior"][names[i]] = {{"mean", q.mean(static_cast<Eigen::Index>(i))}, {"sd", sd(static_cast<Eigen::Index>(i))}};
    e["plugin"] = {{"alpha1", p.alpha1}, {"alpha2", p.alpha2}, {"gamma", p.gamma}};
    if (p.nu_tilde) e["plugin"]["nu_tilde"] = *p.nu_tilde;
    margs.push_back(e);
  }
  j["marginals"] = margs;
  if (copula_posterior) {
    const auto names = copula_param_names(D, k, family);
    const Eigen::VectorXd sd = copula_posterior->sd();
    for (std::size_t i = 0; i < names.size(); ++i)
      j["copula"][names[i]] = {{"mean", copula_posterior->mean(static_cast<Eigen::Index>(i))},
                               {"sd", sd(static_cast<Eigen::Index>(i))}};
  }
  return j.dump(2);
}

PosteriorDraws joint_posterior_sample(const NifmResult& r, std::size_t J, Rng& rng) {
  PosteriorDraws out;
  out.marginal_kind = r.marginal_kind;
  out.family = r.family;
  out.D = r.D;
  out.k = r.copula_posterior ? r.k : 0;
  const auto m = static_cast<Eigen::Index>(r.marginal_dim());
  const auto Jx = static_cast<Eigen::Index>(J);
  out.marginal_transformed.resize(Jx, m * r.D);
  out.marginals.assign(J, std::vector<garch::GarchParams>(static_cast<std::size_t>(r.D)));
  for (int d = 0; d < r.D; ++d) {
    const Matrix s = nets::sample_posterior(r.marginal_posteriors[static_cast<std::size_t>(d)], J, rng);
    out.marginal_transformed.middleCols(d * m, m) = s;
    for (Eigen::Index j = 0; j < Jx; ++j)
      out.marginals[static_cast<std::size_t>(j)][static_cast<std::size_t>(d)] =
          garch::from_unconstrained(std::span<const double>(s.row(j).data(), static_cast<std::size_t>(m)), r.marginal_kind);
  }
  if (r.copula_posterior) {
    out.copula_transformed = nets::sample_posterior(*r.copula_posterior, J, rng);
    out.copulas.reserve(J);
    for (Eigen::Index j = 0; j < Jx; ++j)
      out.copulas.push_back(copula::CopulaParams::from_vector(
          std::span<const double>(out.copula_transformed.row(j).data(), static_cast<std::size_t>(out.copula_transformed.cols())),
          r.D, r.k, r.family));
  } else {
    out.copula_transformed.resize(Jx, 0);
  }
  return out;
}

}  // namespace nifm::inference
