#include "nifm/copula.hpp"

#include <algorithm>
#include <cmath>
#include <Eigen/Cholesky>
#include <stdexcept>

#include "nifm/errors.hpp"
#include "nifm/garch.hpp"
#include "nifm/special.hpp"

namespace nifm::copula {
namespace {

double clamp_u(double u) { return std::clamp(u, garch::kCdfClamp, 1.0 - garch::kCdfClamp); }

}  // namespace

std::string to_string(Family f) { return f == Family::Gaussian ? "gaussian" : "t"; }

Family family_from_string(const std::string& s) {
  if (s == "gaussian" || s == "normal") return Family::Gaussian;
  if (s == "t" || s == "student-t" || s == "student_t") return Family::StudentT;
  throw ConfigError("unknown copula family '" + s + "' (expected gaussian or t)");
}

std::size_t FactorLoadings::free_count(int dim, int n_factors) {
  const auto d = static_cast<std::size_t>(dim), k = static_cast<std::size_t>(n_factors);
  return d * k - k * (k - (k > 0 ? 1 : 0)) / 2;
}

FactorLoadings FactorLoadings::zeros(int dim, int n_factors) {
  FactorLoadings g{dim, n_factors, {}};
  g.values.assign(free_count(dim, n_factors), 0.0);
  return g;
}

void FactorLoadings::validate() const {
  if (dim < 1) throw ConfigError("factor loadings: D must be at least 1");
  if (n_factors < 0 || n_factors > dim)
    throw ConfigError("factor loadings: need 0 <= k <= D, got k=" + std::to_string(n_factors) +
                      " D=" + std::to_string(dim));
  if (values.size() != free_count(dim, n_factors))
    throw ShapeError("factor loadings: expected " + std::to_string(free_count(dim, n_factors)) +
                     " free entries, got " + std::to_string(values.size()));
  for (double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("factor loadings: non-finite entry");
}

int FactorLoadings::index(int i, int j) const {
  if (i < 0 || i >= dim || j < 0 || j >= n_factors || j > i) return -1;
  // rows before i contribute min(r + 1, k) entries each
  int pos = 0;
  const int full = std::min(i, n_factors);
  pos = full * (full + 1) / 2 + (i - full) * n_factors;
  return pos + j;
}

Eigen::MatrixXd FactorLoadings::matrix() const {
  validate();
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(dim, n_factors);
  std::size_t p = 0;
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j <= std::min(i, n_factors - 1); ++j) {
      const double v = values[p++];
      G(i, j) = (i == j) ? std::exp(v) : v;
    }
  return G;
}

CorrelationMatrix loadings_to_correlation(const FactorLoadings& g) {
  const Eigen::MatrixXd G = g.matrix();
  Eigen::MatrixXd R = G * G.transpose();
  R.diagonal().array() += 1.0;
  const Eigen::VectorXd r1 = R.diagonal().array().rsqrt();
  CorrelationMatrix omega(R.rows(), R.cols());
  for (Eigen::Index i = 0; i < R.rows(); ++i) {
    omega(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) omega(i, j) = omega(j, i) = r1(i) * R(i, j) * r1(j);
  }
  return omega;
}

void CopulaParams::validate() const {
  loadings.validate();
  if (family == Family::StudentT) {
    if (!nu || !(*nu > 2.0) || !std::isfinite(*nu))
      throw std::invalid_argument("t copula: degrees of freedom must be finite and above 2");
  } else if (nu) {
    throw std::invalid_argument("Gaussian copula takes no degrees of freedom");
  }
}

std::vector<double> CopulaParams::to_vector() const {
  std::vector<double> v = loadings.values;
  if (family == Family::StudentT) v.push_back(std::log(*nu - 2.0));
  return v;
}

std::size_t CopulaParams::param_count(int dim, int n_factors, Family family) {
  return FactorLoadings::free_count(dim, n_factors) + (family == Family::StudentT ? 1 : 0);
}

CopulaParams CopulaParams::from_vector(std::span<const double> v, int dim, int n_factors, Family family) {
  const std::size_t n = param_count(dim, n_factors, family);
  if (v.size() != n)
    throw ShapeError("copula parameter vector: expected " + std::to_string(n) + " entries, got " +
                     std::to_string(v.size()));
  const std::size_t ng = FactorLoadings::free_count(dim, n_factors);
  CopulaParams p;
  p.loadings = FactorLoadings{dim, n_factors, std::vector<double>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(ng))};
  p.family = family;
  if (family == Family::StudentT) p.nu = 2.0 + std::exp(v[ng]);
  return p;
}

CopulaDensity::CopulaDensity(const CorrelationMatrix& omega, Family family, std::optional<double> nu)
    : family_(family) {
  Eigen::LLT<Eigen::MatrixXd> llt(omega);
  if (llt.info() != Eigen::Success) throw NumericalError("copula: correlation matrix is not positive definite");
  chol_ = llt.matrixL();
  log_det_ = 2.0 * chol_.diagonal().array().log().sum();
  if (!std::isfinite(log_det_)) throw NumericalError("copula: correlation matrix is singular");
  if (family == Family::StudentT) {
    if (!nu || !(*nu > 0.0)) throw std::invalid_argument("t copula: degrees of freedom required");
    nu_ = *nu;
    const double D = static_cast<double>(omega.rows());
    t_const_ = std::lgamma(0.5 * (nu_ + D)) + (D - 1.0) * std::lgamma(0.5 * nu_) - D * std::lgamma(0.5 * (nu_ + 1.0));
  }
}

CopulaDensity::CopulaDensity(const CopulaParams& params)
    : CopulaDensity(loadings_to_correlation(params.loadings), params.family, params.nu) {}

double CopulaDensity::log_density_scores(std::span<const double> z) const {
  const int D = dim();
  if (static_cast<int>(z.size()) != D)
    throw ShapeError("copula density: row has " + std::to_string(z.size()) + " entries, expected " + std::to_string(D));
  // forward substitution w = L^-1 z
  double quad = 0.0, zz = 0.0, marg = 0.0;
  double w[64];
  std::vector<double> wbig;
  double* wp = w;
  if (D > 64) {
    wbig.resize(static_cast<std::size_t>(D));
    wp = wbig.data();
  }
  for (int i = 0; i < D; ++i) {
    double s = z[static_cast<std::size_t>(i)];
    for (int j = 0; j < i; ++j) s -= chol_(i, j) * wp[j];
    wp[i] = s / chol_(i, i);
    quad += wp[i] * wp[i];
    const double zi = z[static_cast<std::size_t>(i)];
    zz += zi * zi;
    if (family_ == Family::StudentT) marg += std::log1p(zi * zi / nu_);
  }
  if (family_ == Family::Gaussian) return -0.5 * log_det_ - 0.5 * quad + 0.5 * zz;
  const double D_ = static_cast<double>(D);
  return t_const_ - 0.5 * log_det_ - 0.5 * (nu_ + D_) * std::log1p(quad / nu_) + 0.5 * (nu_ + 1.0) * marg;
}

double CopulaDensity::log_density(std::span<const double> u_row) const {
  std::vector<double> z(u_row.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = family_ == Family::Gaussian ? special::normal_quantile(u_row[i]) : special::t_quantile(nu_, u_row[i]);
  return log_density_scores(z);
}

double gaussian_copula_logdensity(const CorrelationMatrix& omega, std::span<const double> u_row) {
  return CopulaDensity(omega, Family::Gaussian, std::nullopt).log_density(u_row);
}

double t_copula_logdensity(const CorrelationMatrix& omega, double nu, std::span<const double> u_row) {
  return CopulaDensity(omega, Family::StudentT, nu).log_density(u_row);
}

CopulaLikelihood::CopulaLikelihood(const Matrix& u) : u_(u), normal_scores_(u.rows(), u.cols()) {
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double v = u.data()[i];
    if (!(v > 0.0 && v < 1.0)) throw std::invalid_argument("copula data must lie strictly inside (0, 1)");
    normal_scores_.data()[i] = special::normal_quantile(v);
  }
}

double CopulaLikelihood::operator()(const CopulaParams& params) const {
  const CopulaDensity dens(params);
  if (dens.dim() != u_.cols())
    throw ShapeError("copula likelihood: data has " + std::to_string(u_.cols()) + " columns, parameters describe D=" +
                     std::to_string(dens.dim()));
  const auto D = static_cast<std::size_t>(u_.cols());
  double total = 0.0;
  std::vector<double> z(D);
  for (Eigen::Index t = 0; t < u_.rows(); ++t) {
    if (params.family == Family::Gaussian) {
      total += dens.log_density_scores({normal_scores_.row(t).data(), D});
    } else {
      for (std::size_t j = 0; j < D; ++j) z[j] = special::t_quantile(*params.nu, u_(t, static_cast<Eigen::Index>(j)));
      total += dens.log_density_scores(z);
    }
  }
  return total;
}

Matrix simulate_copula_data(const CopulaParams& params, std::size_t T, Rng& rng) {
  params.validate();
  const int D = params.loadings.dim, k = params.loadings.n_factors;
  const Eigen::MatrixXd G = params.loadings.matrix();
  // z = R1 (G f + e) has covariance Omega without a Cholesky factorisation
  Eigen::VectorXd r1(D);
  for (int i = 0; i < D; ++i) r1(i) = 1.0 / std::sqrt(1.0 + G.row(i).squaredNorm());
  Matrix U(static_cast<Eigen::Index>(T), D);
  Eigen::VectorXd f(k), x(D);
  for (std::size_t t = 0; t < T; ++t) {
    for (int j = 0; j < k; ++j) f(j) = rng.normal();
    for (int i = 0; i < D; ++i) x(i) = rng.normal();
    if (k > 0) x += G * f;
    x.array() *= r1.array();
    if (params.family == Family::Gaussian) {
      for (int i = 0; i < D; ++i) U(static_cast<Eigen::Index>(t), i) = clamp_u(special::normal_cdf(x(i)));
    } else {
      const double nu = *params.nu;
      const double scale = 1.0 / std::sqrt(rng.chi_squared(nu) / nu);
      for (int i = 0; i < D; ++i) U(static_cast<Eigen::Index>(t), i) = clamp_u(special::t_cdf(nu, x(i) * scale));
    }
  }
  return U;
}

}  // namespace nifm::copula
