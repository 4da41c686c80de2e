#pragma once

// Predictive densities from posterior draws, rolling-window LPDS and model
// comparison.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nifm/inference.hpp"
#include "nifm/nets.hpp"
#include "nifm/rng.hpp"
#include "nifm/types.hpp"

namespace nifm::predict {

struct PredictiveDensityEstimate {
  std::size_t h = 1;
  double log_density = 0.0;
  std::size_t J = 0;
  std::size_t dropped = 0;      // draws whose density was not finite
  std::optional<Matrix> draws;  // J x D simulated y_{T+h}
};

/// Joint density of the copula model at y(t) given the window's final state,
/// one draw at a time. The copula term is skipped when draws.k == 0.
double log_density_given_draw(const inference::PosteriorDraws& draws, std::size_t j, const Matrix& window,
                              std::span<const double> y_next);

/// log of (1/J) sum_j p(y_next | theta_j, window). For h > 1 the h - 1
/// intermediate observations are simulated per draw. Non-finite draws are
/// dropped and counted; NumericalError when every draw is dropped.
PredictiveDensityEstimate predictive_log_density(const inference::PosteriorDraws& draws, const Matrix& window,
                                                 std::span<const double> y_next, std::size_t h, Rng& rng,
                                                 bool keep_draws = false);
PredictiveDensityEstimate predictive_log_density(const inference::NifmResult& r, const Matrix& window,
                                                 std::span<const double> y_next, std::size_t h, std::size_t J,
                                                 Rng& rng, bool keep_draws = false);

/// Produces posterior draws for one window.
using DrawSampler = std::function<inference::PosteriorDraws(const Matrix& window, std::size_t J, Rng& rng)>;

/// Sampler backed by trained networks; a null copula net gives the zero-factor model.
DrawSampler network_sampler(nets::MarginalNet& marginal, nets::CopulaNet* copula_net,
                            const inference::InferOptions& opts = {});

struct ValidationReport {
  std::string label;
  std::size_t T = 0;
  std::size_t K = 0;
  std::size_t h = 1;
  std::size_t J = 0;
  std::vector<double> roll_log_density;  // K - h + 1 entries
  std::vector<double> roll_seconds;
  std::vector<std::size_t> roll_dropped;
  double lpds = 0.0;
  double seconds = 0.0;
};

/// Rolls i = 0..K-h: draws from rows [i, i + T), scores row i + T + h - 1.
/// K = full.rows() - T. Roll i uses Rng(Rng::derive(seed, i)).
ValidationReport rolling_validate(const DrawSampler& sampler, const Matrix& full, std::size_t T, std::size_t h,
                                  std::size_t J, std::uint64_t seed, const std::string& label = "");

struct Candidate {
  std::string label;
  DrawSampler sampler;
};

/// One report per candidate, sorted by LPDS descending (stable for ties).
std::vector<ValidationReport> compare_models(const std::vector<Candidate>& candidates, const Matrix& full,
                                             std::size_t T, std::size_t h, std::size_t J, std::uint64_t seed);

/// Columns: roll,window_start,target_row,log_density,seconds,dropped
void write_report_csv(const std::string& path, const ValidationReport& r);
/// Columns: rank,label,LPDS,seconds
void write_ranking_csv(const std::string& path, const std::vector<ValidationReport>& ranked);

/// Gaussian KDE with Silverman's rule, for plotting predictive draws only.
double silverman_bandwidth(std::span<const double> x);
std::vector<double> kde(std::span<const double> x, std::span<const double> grid, double bandwidth = 0.0);

}  // namespace nifm::predict
