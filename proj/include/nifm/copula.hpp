#pragma once

// Factor-structured Gaussian and t copulas.
//
// The correlation matrix is Omega = R1 (G G^T + I) R1 with R1 the inverse
// square root of diag(G G^T + I). G is D x k lower-trapezoidal; its diagonal is
// kept positive by storing log G_jj in the unconstrained vector G~.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "nifm/rng.hpp"
#include "nifm/types.hpp"

namespace nifm::copula {

enum class Family { Gaussian, StudentT };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct FactorLoadings {
  int dim = 0;
  int n_factors = 0;
  /// Free entries of G~, row-major over the support {(i, j): j <= min(i, k-1)}.
  std::vector<double> values;

  /// D k - k (k - 1) / 2
  static std::size_t free_count(int dim, int n_factors);
  static FactorLoadings zeros(int dim, int n_factors);

  /// Requires 0 <= k <= D, a matching value count and finite entries.
  void validate() const;
  /// The constrained D x k loading matrix G.
  Eigen::MatrixXd matrix() const;
  /// Position of G~(i, j) in `values`, or -1 outside the support.
  int index(int i, int j) const;
};

using CorrelationMatrix = Eigen::MatrixXd;

CorrelationMatrix loadings_to_correlation(const FactorLoadings& g);

struct CopulaParams {
  FactorLoadings loadings;
  Family family = Family::Gaussian;
  std::optional<double> nu;  // present iff StudentT, > 2

  void validate() const;
  /// Unconstrained vector: G~ entries then log(nu - 2) for the t family.
  std::vector<double> to_vector() const;
  static CopulaParams from_vector(std::span<const double> v, int dim, int n_factors, Family family);
  static std::size_t param_count(int dim, int n_factors, Family family);
};

/// Log densities of one row of copula data. Throw NumericalError when the
/// correlation matrix cannot be factorised.
double gaussian_copula_logdensity(const CorrelationMatrix& omega, std::span<const double> u_row);
double t_copula_logdensity(const CorrelationMatrix& omega, double nu, std::span<const double> u_row);

/// Reusable evaluator for many rows under one parameter value.
class CopulaDensity {
 public:
  CopulaDensity(const CorrelationMatrix& omega, Family family, std::optional<double> nu);
  explicit CopulaDensity(const CopulaParams& params);

  double log_density(std::span<const double> u_row) const;
  /// Same density from precomputed scores: Phi^-1(u) for the Gaussian family,
  /// T_nu^-1(u) for the t family.
  double log_density_scores(std::span<const double> z) const;
  int dim() const { return static_cast<int>(chol_.rows()); }

 private:
  Eigen::MatrixXd chol_;
  double log_det_ = 0.0;
  Family family_;
  double nu_ = 0.0;
  double t_const_ = 0.0;
};

/// Sum of row log densities of U (T x D). The Gaussian-family normal scores are
/// cached, which makes repeated evaluation for MCMC cheap.
class CopulaLikelihood {
 public:
  explicit CopulaLikelihood(const Matrix& u);
  double operator()(const CopulaParams& params) const;
  std::size_t rows() const { return static_cast<std::size_t>(u_.rows()); }

 private:
  Matrix u_;
  Matrix normal_scores_;
};

/// T rows of copula data. Entries are clamped to [1e-12, 1 - 1e-12].
Matrix simulate_copula_data(const CopulaParams& params, std::size_t T, Rng& rng);

}  // namespace nifm::copula
