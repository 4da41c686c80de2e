#include "nifm/predict.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>

#include "nifm/copula.hpp"
#include "nifm/errors.hpp"

namespace nifm::predict {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_window(const inference::PosteriorDraws& draws, const Matrix& window, std::size_t n_next) {
  if (window.cols() != draws.D || static_cast<int>(n_next) != draws.D)
    throw ShapeError("predictive density: draws have D=" + std::to_string(draws.D) + ", window has " +
                     std::to_string(window.cols()) + " columns and the observation " + std::to_string(n_next) +
                     " entries");
  if (window.rows() < 1) throw ShapeError("predictive density: empty window");
}

/// sigma^2 at the first step after the window.
double variance_after(const garch::GarchParams& p, const Matrix& window, int d) {
  const Eigen::Index T = window.rows();
  double s2 = garch::unconditional_variance(p);
  for (Eigen::Index t = 1; t < T; ++t) s2 = garch::next_variance(p, window(t - 1, d), s2);
  return garch::next_variance(p, window(T - 1, d), s2);
}

double joint_logpdf(const std::vector<garch::GarchParams>& ps, const copula::CopulaParams* cop,
                    std::span<const double> sigma2, std::span<const double> y) {
  const std::size_t D = ps.size();
  double lp = 0.0;
  std::vector<double> u(D);
  for (std::size_t d = 0; d < D; ++d) {
    if (!(std::isfinite(sigma2[d]) && sigma2[d] > 0.0)) return kNegInf;
    lp += garch::observation_logpdf(ps[d], y[d], sigma2[d]);
    u[d] = std::clamp(garch::error_cdf(ps[d], y[d] / std::sqrt(sigma2[d])), garch::kCdfClamp, 1.0 - garch::kCdfClamp);
  }
  if (cop) lp += copula::CopulaDensity(*cop).log_density(u);
  return lp;
}

/// One draw of the next observation's copula data.
std::vector<double> draw_u(const copula::CopulaParams* cop, std::size_t D, Rng& rng) {
  std::vector<double> u(D);
  if (cop) {
    const Matrix m = copula::simulate_copula_data(*cop, 1, rng);
    for (std::size_t d = 0; d < D; ++d) u[d] = m(0, static_cast<Eigen::Index>(d));
  } else {
    for (auto& v : u) v = rng.uniform();
  }
  return u;
}

double log_mean_exp(const std::vector<double>& v) {
  const double mx = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s / static_cast<double>(v.size()));
}

}  // namespace

double log_density_given_draw(const inference::PosteriorDraws& draws, std::size_t j, const Matrix& window,
                              std::span<const double> y_next) {
  check_window(draws, window, y_next.size());
  const auto& ps = draws.marginals.at(j);
  std::vector<double> s2(ps.size());
  for (std::size_t d = 0; d < ps.size(); ++d) s2[d] = variance_after(ps[d], window, static_cast<int>(d));
  return joint_logpdf(ps, draws.k > 0 ? &draws.copulas.at(j) : nullptr, s2, y_next);
}

PredictiveDensityEstimate predictive_log_density(const inference::PosteriorDraws& draws, const Matrix& window,
                                                 std::span<const double> y_next, std::size_t h, Rng& rng,
                                                 bool keep_draws) {
  check_window(draws, window, y_next.size());
  if (h < 1) throw ConfigError("predictive density: horizon must be at least 1");
  const std::size_t J = draws.size(), D = static_cast<std::size_t>(draws.D);
  if (J == 0) throw ConfigError("predictive density: no posterior draws");
  PredictiveDensityEstimate est;
  est.h = h;
  est.J = J;
  if (keep_draws) est.draws = Matrix(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(D));
  std::vector<double> lps;
  lps.reserve(J);
  std::vector<double> s2(D), y_prev(D);
  for (std::size_t j = 0; j < J; ++j) {
    const auto& ps = draws.marginals[j];
    const copula::CopulaParams* cop = draws.k > 0 ? &draws.copulas[j] : nullptr;
    double lp = kNegInf;
    try {
      for (std::size_t d = 0; d < D; ++d) s2[d] = variance_after(ps[d], window, static_cast<int>(d));
      // simulate the h - 1 unobserved steps, advancing each variance
      for (std::size_t step = 1; step < h; ++step) {
        const auto u = draw_u(cop, D, rng);
        for (std::size_t d = 0; d < D; ++d) {
          const double y = garch::marginal_quantile(ps[d], u[d], s2[d]);
          s2[d] = garch::next_variance(ps[d], y, s2[d]);
        }
      }
      if (keep_draws) {
        const auto u = draw_u(cop, D, rng);
        for (std::size_t d = 0; d < D; ++d)
          (*est.draws)(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(d)) = garch::marginal_quantile(ps[d], u[d], s2[d]);
      }
      lp = joint_logpdf(ps, cop, s2, y_next);
    } catch (const NumericalError&) {
      lp = kNegInf;
    } catch (const std::domain_error&) {
      lp = kNegInf;
    }
    if (std::isfinite(lp))
      lps.push_back(lp);
    else
      ++est.dropped;
  }
  if (lps.empty()) throw NumericalError("predictive density: all " + std::to_string(J) + " draws were non-finite");
  est.log_density = log_mean_exp(lps);
  return est;
}

PredictiveDensityEstimate predictive_log_density(const inference::NifmResult& r, const Matrix& window,
                                                 std::span<const double> y_next, std::size_t h, std::size_t J,
                                                 Rng& rng, bool keep_draws) {
  const auto draws = inference::joint_posterior_sample(r, J, rng);
  return predictive_log_density(draws, window, y_next, h, rng, keep_draws);
}

DrawSampler network_sampler(nets::MarginalNet& marginal, nets::CopulaNet* copula_net,
                            const inference::InferOptions& opts) {
  return [&marginal, copula_net, opts](const Matrix& window, std::size_t J, Rng& rng) {
    const auto r = inference::infer(marginal, copula_net, window, opts);
    return inference::joint_posterior_sample(r, J, rng);
  };
}

ValidationReport rolling_validate(const DrawSampler& sampler, const Matrix& full, std::size_t T, std::size_t h,
                                  std::size_t J, std::uint64_t seed, const std::string& label) {
  const auto n = static_cast<std::size_t>(full.rows());
  if (h < 1) throw ConfigError("rolling validation: horizon must be at least 1");
  if (n < T + h)
    throw ConfigError("rolling validation: need at least T + h = " + std::to_string(T + h) + " rows, got " +
                      std::to_string(n));
  ValidationReport rep;
  rep.label = label;
  rep.T = T;
  rep.K = n - T;
  rep.h = h;
  rep.J = J;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i + h <= rep.K; ++i) {
    const auto r0 = std::chrono::steady_clock::now();
    Rng rng(Rng::derive(seed, i));
    const Matrix window = full.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(T));
    const auto target = static_cast<Eigen::Index>(i + T + h - 1);
    std::vector<double> y(full.row(target).data(), full.row(target).data() + full.cols());
    PredictiveDensityEstimate e;
    try {
      const auto draws = sampler(window, J, rng);
      e = predictive_log_density(draws, window, y, h, rng);
    } catch (const NumericalError& ex) {
      throw NumericalError("roll " + std::to_string(i) + ": " + ex.what());
    } catch (const ShapeError& ex) {
      throw ShapeError("roll " + std::to_string(i) + ": " + ex.what());
    } catch (const ConfigError& ex) {
      throw ConfigError("roll " + std::to_string(i) + ": " + ex.what());
    }
    rep.roll_log_density.push_back(e.log_density);
    rep.roll_dropped.push_back(e.dropped);
    rep.roll_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - r0).count());
    rep.lpds += e.log_density;
  }
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

std::vector<ValidationReport> compare_models(const std::vector<Candidate>& candidates, const Matrix& full,
                                             std::size_t T, std::size_t h, std::size_t J, std::uint64_t seed) {
  if (candidates.empty()) throw ConfigError("compare: no candidates");
  std::vector<ValidationReport> out;
  for (const auto& c : candidates) out.push_back(rolling_validate(c.sampler, full, T, h, J, seed, c.label));
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.lpds > b.lpds; });
  return out;
}

void write_report_csv(const std::string& path, const ValidationReport& r) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  f << "roll,window_start,target_row,log_density,seconds,dropped\n";
  for (std::size_t i = 0; i < r.roll_log_density.size(); ++i)
    f << i << ',' << i + 1 << ',' << i + r.T + r.h << ',' << r.roll_log_density[i] << ',' << r.roll_seconds[i] << ','
      << r.roll_dropped[i] << '\n';
  if (!f) throw IoError("write failed: " + path);
}

void write_ranking_csv(const std::string& path, const std::vector<ValidationReport>& ranked) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path);
  f.precision(17);
  f << "rank,label,LPDS,seconds\n";
  for (std::size_t i = 0; i < ranked.size(); ++i)
    f << i + 1 << ',' << ranked[i].label << ',' << ranked[i].lpds << ',' << ranked[i].seconds << '\n';
  if (!f) throw IoError("write failed: " + path);
}

double silverman_bandwidth(std::span<const double> x) {
  const std::size_t n = x.size();
  if (n < 2) throw ConfigError("kde: need at least two points");
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(n - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const double w = pos - static_cast<double>(lo);
    return lo + 1 < n ? s[lo] * (1 - w) + s[lo + 1] * w : s[lo];
  };
  const double iqr = q(0.75) - q(0.25);
  const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

std::vector<double> kde(std::span<const double> x, std::span<const double> grid, double bandwidth) {
  const double bw = bandwidth > 0.0 ? bandwidth : silverman_bandwidth(x);
  if (!(bw > 0.0)) throw NumericalError("kde: zero bandwidth (constant sample)");
  const double norm = 1.0 / (static_cast<double>(x.size()) * bw * std::sqrt(2.0 * M_PI));
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double s = 0.0;
    for (double v : x) {
      const double z = (grid[g] - v) / bw;
      s += std::exp(-0.5 * z * z);
    }
    out[g] = s * norm;
  }
  return out;
}

}  // namespace nifm::predict
