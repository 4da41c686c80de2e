#include "nifm/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <thread>

#include <Eigen/Cholesky>

#include "nifm/errors.hpp"
#include "nifm/garch.hpp"

namespace nifm::oracle {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr std::size_t kMaxBurnRejections = 1000;
constexpr std::size_t kRefactorEvery = 50;

double safe_eval(const LogTarget& f, std::span<const double> x) {
  try {
    const double v = f(x);
    return std::isnan(v) ? kNegInf : v;
  } catch (const NumericalError&) {
    return kNegInf;
  } catch (const std::domain_error&) {
    return kNegInf;
  }
}

Eigen::MatrixXd lower_factor(const Eigen::MatrixXd& c) {
  Eigen::LLT<Eigen::MatrixXd> llt(c);
  if (llt.info() != Eigen::Success) return Eigen::MatrixXd();
  return llt.matrixL();
}

}  // namespace

Eigen::VectorXd McmcChain::mean() const { return draws.colwise().mean().transpose(); }

Eigen::VectorXd McmcChain::sd() const {
  const Eigen::RowVectorXd mu = draws.colwise().mean();
  const Eigen::MatrixXd c = draws.rowwise() - mu;
  return (c.colwise().squaredNorm() / std::max<double>(1.0, static_cast<double>(draws.rows() - 1))).cwiseSqrt().transpose();
}

McmcChain mh_sample(const LogTarget& log_target, std::span<const double> init, const McmcConfig& cfg,
                    std::uint64_t seed) {
  const auto m = static_cast<Eigen::Index>(init.size());
  if (m == 0) throw ConfigError("mcmc: empty parameter vector");
  if (cfg.n_iter == 0) throw ConfigError("mcmc: n_iter must be positive");
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(init.data(), m);
  double lp = safe_eval(log_target, init);
  if (!std::isfinite(lp)) throw NumericalError("mcmc: log target is not finite at the initial point");

  McmcChain chain;
  chain.seed = seed;
  chain.draws.resize(static_cast<Eigen::Index>(cfg.n_iter), m);

  const Eigen::MatrixXd C0 = Eigen::MatrixXd::Identity(m, m) * (cfg.init_scale * cfg.init_scale);
  Eigen::MatrixXd C = C0;  // unscaled proposal covariance
  Eigen::MatrixXd L = lower_factor(C);
  double log_s = 0.0;  // Robbins-Monro global scale
  const double haario = 2.38 * 2.38 / static_cast<double>(m);
  // running moments of the burn-in path (Welford)
  Eigen::VectorXd run_mean = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd run_m2 = Eigen::MatrixXd::Zero(m, m);
  std::size_t n_seen = 0, consecutive_rejects = 0, kept_accepts = 0;
  const std::size_t warm = std::max<std::size_t>(200, 20 * static_cast<std::size_t>(m));

  Eigen::VectorXd z(m), prop(m);
  const std::size_t total = cfg.n_burn + cfg.n_iter;
  for (std::size_t it = 0; it < total; ++it) {
    const bool burning = it < cfg.n_burn;
    for (Eigen::Index i = 0; i < m; ++i) z(i) = rng.normal();
    prop = x + std::exp(log_s) * (L * z);
    const double lq = safe_eval(log_target, std::span<const double>(prop.data(), static_cast<std::size_t>(m)));
    const bool acc = mh_accept(lq - lp, rng.uniform());
    if (acc) {
      x = prop;
      lp = lq;
      consecutive_rejects = 0;
    } else if (burning && ++consecutive_rejects >= kMaxBurnRejections) {
      throw NumericalError("mcmc: " + std::to_string(kMaxBurnRejections) +
                           " consecutive rejections during burn-in; the target looks badly scaled");
    }

    if (burning) {
      if (cfg.adapt) {
        ++n_seen;
        const Eigen::VectorXd delta = x - run_mean;
        run_mean += delta / static_cast<double>(n_seen);
        run_m2 += delta * (x - run_mean).transpose();
        log_s += ((acc ? 1.0 : 0.0) - cfg.target_accept) / std::pow(static_cast<double>(it + 1), 0.6);
        if (n_seen >= warm && n_seen % kRefactorEvery == 0) {
          const Eigen::MatrixXd emp = run_m2 / static_cast<double>(n_seen - 1);
          const Eigen::MatrixXd cand = haario * emp + 1e-10 * Eigen::MatrixXd::Identity(m, m);
          const Eigen::MatrixXd Lc = lower_factor(cand);
          if (Lc.size() > 0) {
            if (C.isApprox(C0)) log_s = 0.0;  // the scale was tuned for the isotropic start
            C = cand;
            L = Lc;
          }
        }
      }
      if (cfg.history_every > 0 && it % cfg.history_every == 0)
        chain.proposal_history.push_back(std::exp(2.0 * log_s) * C);
    } else {
      chain.draws.row(static_cast<Eigen::Index>(it - cfg.n_burn)) = x.transpose();
      kept_accepts += acc ? 1 : 0;
    }
  }
  chain.proposal = std::exp(2.0 * log_s) * C;
  chain.acceptance = static_cast<double>(kept_accepts) / static_cast<double>(cfg.n_iter);
  chain.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return chain;
}

LogTarget garch_log_posterior(std::span<const double> y, const priors::PriorSpec& prior) {
  std::vector<double> data(y.begin(), y.end());
  return [data = std::move(data), prior](std::span<const double> theta) {
    const double lp = priors::log_prior_garch_unconstrained(prior, theta);
    if (!std::isfinite(lp) || data.empty()) return lp;
    return lp + garch::log_likelihood(garch::from_unconstrained(theta, prior.marginal_kind), data);
  };
}

McmcChain garch_posterior(std::span<const double> y, const priors::PriorSpec& prior, const McmcConfig& cfg,
                          std::uint64_t seed, std::optional<std::vector<double>> init) {
  if (!init) {
    garch::GarchParams p;
    p.error_kind = prior.marginal_kind;
    p.alpha1 = prior.alpha1.a / (prior.alpha1.a + prior.alpha1.b);
    p.alpha2 = prior.alpha2.a / (prior.alpha2.a + prior.alpha2.b);
    const double s = p.alpha1 + p.alpha2;
    if (s >= 0.98) {
      p.alpha1 *= 0.95 / s;
      p.alpha2 *= 0.95 / s;
    }
    p.gamma = prior.gamma.shape / prior.gamma.rate;
    if (prior.nu_tilde) p.nu_tilde = std::max(prior.nu_tilde->shape / prior.nu_tilde->rate, 2.5);
    init = garch::to_unconstrained(p).to_vector();
  }
  return mh_sample(garch_log_posterior(y, prior), *init, cfg, seed);
}

LogTarget copula_log_posterior(const Matrix& u, const priors::PriorSpec& prior, copula::Family family) {
  if (u.cols() != prior.dim)
    throw ConfigError("copula posterior: data has " + std::to_string(u.cols()) + " columns, prior describes D=" +
                      std::to_string(prior.dim));
  auto lik = std::make_shared<copula::CopulaLikelihood>(u);
  return [lik, prior, family](std::span<const double> theta) {
    const double lp = priors::log_prior_copula_unconstrained(prior, family, theta);
    if (!std::isfinite(lp)) return lp;
    return lp + (*lik)(copula::CopulaParams::from_vector(theta, prior.dim, prior.n_factors, family));
  };
}

McmcChain copula_posterior(const Matrix& u, const priors::PriorSpec& prior, copula::Family family,
                           const McmcConfig& cfg, std::uint64_t seed, std::optional<std::vector<double>> init) {
  auto target = copula_log_posterior(u, prior, family);
  if (!init) {
    init = prior.loading_mean;
    if (family == copula::Family::StudentT)
      init->push_back(std::log(std::max(prior.copula_nu.shape / prior.copula_nu.rate - 2.0, 0.5)));
  }
  return mh_sample(target, *init, cfg, seed);
}

double effective_sample_size(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 4) throw ConfigError("ess: need at least 4 draws");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  auto acov = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t t = 0; t + lag < n; ++t) s += (x[t] - mean) * (x[t + lag] - mean);
    return s / static_cast<double>(n);
  };
  const double c0 = acov(0);
  if (!(c0 > 0.0)) return static_cast<double>(n);  // constant chain: no autocorrelation information
  // Geyer: sum adjacent pairs while they stay positive, kept non-increasing
  double sum = 0.0, prev = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = (acov(2 * k) + acov(2 * k + 1)) / c0;
    if (pair <= 0.0) break;
    pair = std::min(pair, prev);
    prev = pair;
    sum += pair;
  }
  const double tau = std::max(-1.0 + 2.0 * sum, 1.0 / std::log10(static_cast<double>(n)));
  return static_cast<double>(n) / tau;
}

Diagnostics diagnostics(const std::vector<Matrix>& chains) {
  if (chains.empty()) throw ConfigError("diagnostics: no chains");
  const Eigen::Index n = chains.front().rows(), m = chains.front().cols();
  if (n < 100) throw ConfigError("diagnostics: need at least 100 draws per chain, got " + std::to_string(n));
  for (const auto& c : chains)
    if (c.rows() != n || c.cols() != m) throw ShapeError("diagnostics: chains differ in shape");
  Diagnostics out;
  const Eigen::Index half = n / 2;
  for (Eigen::Index p = 0; p < m; ++p) {
    double ess = 0.0;
    std::vector<double> means, vars;
    for (const auto& c : chains) {
      std::vector<double> col(static_cast<std::size_t>(n));
      for (Eigen::Index t = 0; t < n; ++t) col[static_cast<std::size_t>(t)] = c(t, p);
      ess += effective_sample_size(col);
      for (int s = 0; s < 2; ++s) {
        const Eigen::Index start = s == 0 ? 0 : n - half;
        double mu = 0.0;
        for (Eigen::Index t = 0; t < half; ++t) mu += c(start + t, p);
        mu /= static_cast<double>(half);
        double v = 0.0;
        for (Eigen::Index t = 0; t < half; ++t) v += (c(start + t, p) - mu) * (c(start + t, p) - mu);
        means.push_back(mu);
        vars.push_back(v / static_cast<double>(half - 1));
      }
    }
    const double M = static_cast<double>(means.size()), N = static_cast<double>(half);
    double grand = 0.0, W = 0.0;
    for (std::size_t i = 0; i < means.size(); ++i) {
      grand += means[i] / M;
      W += vars[i] / M;
    }
    double B = 0.0;
    for (double mu : means) B += (mu - grand) * (mu - grand);
    B *= N / (M - 1.0);
    const double var_plus = (N - 1.0) / N * W + B / N;
    out.ess.push_back(ess);
    out.rhat.push_back(W > 0.0 ? std::sqrt(var_plus / W) : 1.0);
  }
  return out;
}

void write_chain_csv(const std::string& path, const McmcChain& chain, const std::vector<std::string>& names) {
  if (names.size() != static_cast<std::size_t>(chain.draws.cols()))
    throw ShapeError("chain csv: " + std::to_string(names.size()) + " names for " + std::to_string(chain.draws.cols()) +
                     " columns");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  for (std::size_t i = 0; i < names.size(); ++i) f << (i ? "," : "") << names[i];
  f << '\n';
  for (Eigen::Index t = 0; t < chain.draws.rows(); ++t) {
    for (Eigen::Index j = 0; j < chain.draws.cols(); ++j) f << (j ? "," : "") << chain.draws(t, j);
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

namespace {

void run_parallel(std::size_t n, int threads, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(threads, 1)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

Matrix pooled(const std::vector<McmcChain>& chains) {
  if (chains.empty()) return {};
  Eigen::Index rows = 0;
  for (const auto& c : chains) rows += c.draws.rows();
  Matrix out(rows, chains.front().draws.cols());
  Eigen::Index r = 0;
  for (const auto& c : chains) {
    out.middleRows(r, c.draws.rows()) = c.draws;
    r += c.draws.rows();
  }
  return out;
}

constexpr std::size_t kPilotsPerChain = 4;

IfmRun run_ifm(const Matrix& y, const priors::PriorSpec& prior, copula::Family family, const McmcConfig& cfg,
               std::size_t n_chains, std::uint64_t seed, int threads) {
  const auto t0 = std::chrono::steady_clock::now();
  const int D = static_cast<int>(y.cols());
  if (D != prior.dim)
    throw ConfigError("oracle: data has " + std::to_string(D) + " series, prior describes D=" + std::to_string(prior.dim));
  if (n_chains < 1) throw ConfigError("oracle: need at least one chain");
  for (int d = 0; d < D; ++d)
    if (!y.col(d).allFinite()) throw NumericalError("series " + std::to_string(d + 1) + " contains non-finite values");
  IfmRun run;
  run.family = family;
  run.marginal_chains.assign(static_cast<std::size_t>(D), std::vector<McmcChain>(n_chains));
  std::vector<std::vector<double>> series(static_cast<std::size_t>(D));
  // Matrix is row-major, so columns are strided
  for (int d = 0; d < D; ++d) {
    const Eigen::VectorXd col = y.col(d);
    series[d].assign(col.data(), col.data() + col.size());
  }

  run_parallel(static_cast<std::size_t>(D) * n_chains, threads, [&](std::size_t job) {
    const std::size_t d = job / n_chains, c = job % n_chains;
    const std::uint64_t s = Rng::derive(Rng::derive(seed, d), c);
    Rng rng(s);
    const auto init = garch::to_unconstrained(priors::sample_garch(prior, rng)).to_vector();
    try {
      run.marginal_chains[d][c] = garch_posterior(series[d], prior, cfg, s, init);
    } catch (const NumericalError& e) {
      throw NumericalError("series " + std::to_string(d + 1) + ", chain " + std::to_string(c + 1) + ": " + e.what());
    }
  });

  run.copula_data.resize(y.rows(), D);
  for (int d = 0; d < D; ++d) {
    const Eigen::VectorXd m = pooled(run.marginal_chains[d]).colwise().mean();
    const auto p = garch::from_unconstrained(std::span<const double>(m.data(), m.size()), prior.marginal_kind);
    const auto u = garch::marginal_cdf(p, series[d]);
    for (Eigen::Index t = 0; t < y.rows(); ++t) run.copula_data(t, d) = u[static_cast<std::size_t>(t)];
    run.plugins.push_back(p);
  }

  if (prior.n_factors > 0) {
    // The positive diagonal of G blocks the sign flip of a loading column, so
    // a chain started on the wrong side settles in a mode far below the main
    // one. Short pilots from several prior draws pick the starting points.
    const std::uint64_t cs = Rng::derive(seed, static_cast<std::uint64_t>(D));
    const std::size_t n_pilot = kPilotsPerChain * n_chains;
    McmcConfig pcfg = cfg;
    pcfg.n_burn = std::min<std::size_t>(cfg.n_burn, 1000);
    pcfg.n_iter = 200;
    pcfg.history_every = 0;
    const auto target = copula_log_posterior(run.copula_data, prior, family);
    std::vector<std::vector<double>> pilot_end(n_pilot);
    std::vector<double> pilot_score(n_pilot, -std::numeric_limits<double>::infinity());
    run_parallel(n_pilot, threads, [&](std::size_t i) {
      const std::uint64_t s = Rng::derive(Rng::derive(cs, n_chains), i);
      Rng rng(s);
      const auto init = priors::sample_copula(prior, family, rng).to_vector();
      try {
        const auto pc = mh_sample(target, init, pcfg, s);
        double sc = 0.0;
        for (Eigen::Index t = 0; t < pc.draws.rows(); ++t) {
          const Eigen::VectorXd row = pc.draws.row(t);
          sc += target(std::span<const double>(row.data(), row.size()));
        }
        pilot_score[i] = sc / static_cast<double>(pc.draws.rows());
        const Eigen::VectorXd last = pc.draws.row(pc.draws.rows() - 1);
        pilot_end[i].assign(last.data(), last.data() + last.size());
      } catch (const NumericalError&) {
        // a failed pilot is just not chosen
      }
    });
    std::vector<std::size_t> order(n_pilot);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pilot_score[a] > pilot_score[b]; });
    if (!std::isfinite(pilot_score[order[n_chains - 1]]))
      throw NumericalError("copula: fewer than " + std::to_string(n_chains) + " pilot chains ran");

    run.copula_chains.resize(n_chains);
    run_parallel(n_chains, threads, [&](std::size_t c) {
      const std::uint64_t s = Rng::derive(cs, c);
      try {
        run.copula_chains[c] = copula_posterior(run.copula_data, prior, family, cfg, s, pilot_end[order[c]]);
      } catch (const NumericalError& e) {
        throw NumericalError("copula chain " + std::to_string(c + 1) + ": " + e.what());
      }
    });
  }
  run.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return run;
}

}  // namespace nifm::oracle
