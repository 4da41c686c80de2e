#include <algorithm>
#include <cmath>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/gamma.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "doctest.h"
#include "nifm/errors.hpp"
#include "nifm/priors.hpp"
#include "nifm/rng.hpp"
#include "nifm/simgen.hpp"
#include "nifm/special.hpp"

using namespace nifm;
using namespace nifm::priors;
using garch::ErrorKind;

namespace {

double quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double pos = p * (v.size() - 1);
  const auto i = static_cast<std::size_t>(pos);
  return v[i] + (pos - i) * (v[std::min(i + 1, v.size() - 1)] - v[i]);
}

// Quantile of Gamma(shape, rate) truncated to (lower, inf), via Boost.
double trunc_gamma_quantile(const GammaPrior& g, double p) {
  boost::math::gamma_distribution<> dist(g.shape, 1.0 / g.rate);
  const double f2 = boost::math::cdf(dist, g.lower);
  return boost::math::quantile(dist, f2 + p * (1.0 - f2));
}

bool within(double got, double want, double rel) { return std::fabs(got - want) <= rel * std::fabs(want); }

}  // namespace

TEST_SUITE("priors") {
  TEST_CASE("default hyperparameters reproduce the reference intervals") {
    const auto g = default_priors(ErrorKind::Gaussian, 3, 1);
    boost::math::beta_distribution<> a1(g.alpha1.a, g.alpha1.b);
    CHECK(within(boost::math::quantile(a1, 0.05), 0.069, 0.01));
    CHECK(within(boost::math::quantile(a1, 0.95), 0.175, 0.01));
    // rate convention: shape 4.69, rate 1/0.03
    boost::math::gamma_distribution<> gam(g.gamma.shape, 1.0 / g.gamma.rate);
    CHECK(within(boost::math::quantile(gam, 0.05), 0.053, 0.02));
    CHECK(within(boost::math::quantile(gam, 0.95), 0.262, 0.02));

    const auto t = default_priors(ErrorKind::StudentT, 3, 1);
    REQUIRE(t.nu_tilde.has_value());
    CHECK(within(trunc_gamma_quantile(*t.nu_tilde, 0.05), 6.173, 0.01));
    CHECK(within(trunc_gamma_quantile(*t.nu_tilde, 0.95), 19.795, 0.01));
    CHECK(t.alpha1.a == 28.75);
    CHECK(t.alpha2.b == 22.40);
    CHECK(t.copula_nu.shape == 4.74);
    CHECK(t.copula_nu.rate == doctest::Approx(1 / 2.03));
    for (double m : g.loading_mean) CHECK(m == 0.0);
    CHECK(g.loading_mean.size() == 3);
  }

  TEST_CASE("prior sampling moments") {
    const auto spec = default_priors(ErrorKind::Gaussian, 3, 1);
    Rng rng(123);
    std::vector<double> a1, g;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
      const auto p = sample_garch(spec, rng);
      CHECK_MESSAGE(p.alpha1 + p.alpha2 < 1.0, "draw " << i);
      a1.push_back(p.alpha1);
      g.push_back(p.gamma);
    }
    double mean = 0;
    for (double v : a1) mean += v / n;
    // oracle: E[a1 | a1 + a2 < 1] by quadrature against the Boost beta distributions
    const boost::math::beta_distribution<> b1(11.34, 85.12), b2(19.58, 4.62);
    double num = 0.0, den = 0.0;
    const int m = 200000;
    for (int i = 0; i < m; ++i) {
      const double x = (i + 0.5) / m;
      const double w = boost::math::pdf(b1, x) * boost::math::cdf(b2, 1.0 - x);
      num += x * w;
      den += w;
    }
    CHECK(std::fabs(mean - num / den) < 4 * 0.032 / std::sqrt(double(n)));
    CHECK(within(quantile(g, 0.05), 0.053, 0.10));
    CHECK(within(quantile(g, 0.95), 0.262, 0.10));
  }

  TEST_CASE("truncation at 2 is strict") {
    auto spec = default_priors(ErrorKind::StudentT, 2, 1);
    spec.copula_nu = GammaPrior{0.8, 0.5, 2.0};  // most untruncated mass lies below 2
    Rng rng(7);
    double mn = INFINITY, mn_nu = INFINITY;
    for (int i = 0; i < 1000000; ++i) mn = std::min(mn, *sample_copula(spec, copula::Family::StudentT, rng).nu);
    for (int i = 0; i < 100000; ++i) mn_nu = std::min(mn_nu, *sample_garch(spec, rng).nu_tilde);
    CHECK(mn > 2.0);
    CHECK(mn_nu > 2.0);
  }

  TEST_CASE("log density values") {
    const auto spec = default_priors(ErrorKind::Gaussian, 3, 1);
    garch::GarchParams bad;
    bad.alpha1 = 0.5;
    bad.alpha2 = 0.6;
    bad.gamma = 0.1;
    CHECK(log_prior_garch(spec, bad) == -INFINITY);
    bad.alpha2 = 0.4;
    bad.gamma = -1;
    CHECK(log_prior_garch(spec, bad) == -INFINITY);

    const double a = 11.34, b = 85.12, mode = (a - 1) / (a + b - 2);
    const double direct = (a - 1) * std::log(mode) + (b - 1) * std::log1p(-mode) -
                          (boost::math::lgamma(a) + boost::math::lgamma(b) - boost::math::lgamma(a + b));
    CHECK(special::beta_logpdf(a, b, mode) == doctest::Approx(direct).epsilon(1e-13));

    // ratio between two points only involves the component densities
    garch::GarchParams p1, p2;
    p1.alpha1 = 0.1;
    p1.alpha2 = 0.8;
    p1.gamma = 0.12;
    p2.alpha1 = 0.13;
    p2.alpha2 = 0.7;
    p2.gamma = 0.2;
    const double direct_diff = special::beta_logpdf(a, b, 0.1) - special::beta_logpdf(a, b, 0.13) +
                               special::beta_logpdf(19.58, 4.62, 0.8) - special::beta_logpdf(19.58, 4.62, 0.7) +
                               special::gamma_logpdf(4.69, 1 / 0.03, 0.12) - special::gamma_logpdf(4.69, 1 / 0.03, 0.2);
    CHECK(log_prior_garch(spec, p1) - log_prior_garch(spec, p2) == doctest::Approx(direct_diff).epsilon(1e-12));

    copula::CopulaParams c{copula::FactorLoadings{3, 1, {0.5, -1.0, 2.0}}, copula::Family::Gaussian, std::nullopt};
    const double expected = 3 * special::normal_logpdf(0.0) - 0.5 * (0.25 + 1.0 + 4.0);
    CHECK(log_prior_copula(spec, c) == doctest::Approx(expected).epsilon(1e-14));
    c.family = copula::Family::StudentT;
    c.nu = 1.9;
    CHECK(log_prior_copula(spec, c) == -INFINITY);
  }

  TEST_CASE("stationary mass matches Monte Carlo") {
    BetaPrior a{2.0, 3.0}, b{4.0, 2.0};
    Rng rng(3);
    int hit = 0;
    const int n = 400000;
    for (int i = 0; i < n; ++i) hit += (rng.beta(a.a, a.b) + rng.beta(b.a, b.b) < 1.0);
    const double p = double(hit) / n;
    CHECK(std::fabs(std::exp(log_stationary_mass(a, b)) - p) < 4 * std::sqrt(p * (1 - p) / n));
    const auto d = default_priors(ErrorKind::Gaussian, 2, 1);
    const boost::math::beta_distribution<> b1(d.alpha1.a, d.alpha1.b), b2(d.alpha2.a, d.alpha2.b);
    double mass = 0.0;
    const int m = 200000;
    for (int i = 0; i < m; ++i) {
      const double x = (i + 0.5) / m;
      mass += boost::math::pdf(b1, x) * boost::math::cdf(b2, 1.0 - x) / m;
    }
    CHECK(std::exp(log_stationary_mass(d.alpha1, d.alpha2)) == doctest::Approx(mass).epsilon(1e-6));
  }

  TEST_CASE("log densities are normalised (importance weights average to one)") {
    // Proposal: the component laws without the joint constraints. The weight
    // p/q then only carries the renormalisation constants, so its mean is 1.
    for (auto kind : {ErrorKind::Gaussian, ErrorKind::StudentT}) {
      const auto spec = default_priors(kind, 3, 2);
      Rng rng(kind == ErrorKind::Gaussian ? 10 : 11);
      boost::math::gamma_distribution<> nu_raw(spec.nu_tilde ? spec.nu_tilde->shape : 1.0,
                                               spec.nu_tilde ? 1.0 / spec.nu_tilde->rate : 1.0);
      const int n = 100000;
      double sum_w = 0.0;
      for (int i = 0; i < n; ++i) {
        garch::GarchParams p;
        p.error_kind = kind;
        p.alpha1 = rng.beta(spec.alpha1.a, spec.alpha1.b);
        p.alpha2 = rng.beta(spec.alpha2.a, spec.alpha2.b);
        p.gamma = rng.gamma(spec.gamma.shape) / spec.gamma.rate;
        double logq = special::beta_logpdf(spec.alpha1.a, spec.alpha1.b, p.alpha1) +
                      special::beta_logpdf(spec.alpha2.a, spec.alpha2.b, p.alpha2) +
                      special::gamma_logpdf(spec.gamma.shape, spec.gamma.rate, p.gamma);
        if (kind == ErrorKind::StudentT) {
          const double nu = rng.gamma(spec.nu_tilde->shape) / spec.nu_tilde->rate;
          p.nu_tilde = nu;
          logq += std::log(boost::math::pdf(nu_raw, nu));
        }
        const double lp = log_prior_garch(spec, p);
        if (std::isfinite(lp)) sum_w += std::exp(lp - logq);
      }
      CHECK(std::fabs(sum_w / n - 1.0) < 0.02);

      Rng crng(12);
      double sum_c = 0.0;
      boost::math::gamma_distribution<> cnu(spec.copula_nu.shape, 1.0 / spec.copula_nu.rate);
      for (int i = 0; i < n; ++i) {
        copula::CopulaParams c{copula::FactorLoadings::zeros(3, 2), copula::Family::StudentT, 0.0};
        double logq = 0.0;
        for (auto& v : c.loadings.values) {
          v = crng.normal();
          logq += special::normal_logpdf(v);
        }
        const double nu = crng.gamma(spec.copula_nu.shape) / spec.copula_nu.rate;
        c.nu = nu;
        logq += std::log(boost::math::pdf(cnu, nu));
        const double lp = log_prior_copula(spec, c);
        if (std::isfinite(lp)) sum_c += std::exp(lp - logq);
      }
      CHECK(std::fabs(sum_c / n - 1.0) < 0.02);
    }
  }

  TEST_CASE("unconstrained densities carry the Jacobian") {
    const auto spec = default_priors(ErrorKind::StudentT, 3, 1);
    Rng rng(2);
    for (int i = 0; i < 50; ++i) {
      const auto p = sample_garch(spec, rng);
      const auto t = garch::to_unconstrained(p);
      CHECK(log_prior_garch_unconstrained(spec, t.to_vector()) ==
            doctest::Approx(log_prior_garch(spec, p) + garch::log_jacobian(t)).epsilon(1e-12));
      const auto c = sample_copula(spec, copula::Family::StudentT, rng);
      const double jac = std::log(*c.nu - 2.0);  // d nu / d log(nu - 2) = nu - 2
      CHECK(log_prior_copula_unconstrained(spec, copula::Family::StudentT, c.to_vector()) ==
            doctest::Approx(log_prior_copula(spec, c) + jac).epsilon(1e-12));
    }
  }

  TEST_CASE("maximum-likelihood fits recover hyperparameters") {
    Rng rng(2024);
    std::vector<double> xb(200), xg(200);
    for (auto& v : xb) v = rng.beta(11.34, 85.12);
    for (auto& v : xg) v = rng.gamma(4.69) * 0.03;
    const auto b = fit_beta_ml(xb);
    const auto g = fit_gamma_ml(xg);
    CHECK(within(b.a, 11.34, 0.15));
    CHECK(within(b.b, 85.12, 0.15));
    CHECK(within(g.shape, 4.69, 0.15));
    CHECK(within(g.rate, 1 / 0.03, 0.15));

    // refitting data drawn from the fit stays within sampling noise
    std::vector<double> xb2(20000);
    for (auto& v : xb2) v = rng.beta(b.a, b.b);
    const auto b2 = fit_beta_ml(xb2);
    CHECK(within(b2.a, b.a, 0.05));
    CHECK(within(b2.b, b.b, 0.05));

    CHECK_THROWS_AS(fit_beta_ml(std::vector<double>(10, 0.2)), std::invalid_argument);
    CHECK_THROWS_AS(fit_gamma_ml(std::vector<double>(10, 0.2)), std::invalid_argument);
    CHECK_THROWS_AS(fit_beta_ml(std::vector<double>{0.1, 0.2}), std::invalid_argument);
    CHECK_THROWS_AS(fit_beta_ml(std::vector<double>{0.1, 0.2, 1.2}), std::invalid_argument);
  }

  TEST_CASE("calibration through hooks") {
    const int D = 200;
    const auto truth = default_priors(ErrorKind::Gaussian, D, 1);
    Rng rng(31);
    std::vector<garch::GarchParams> params;
    Matrix hist(120, D);
    for (int d = 0; d < D; ++d) {
      params.push_back(sample_garch(truth, rng));
      const auto y = garch::simulate(params.back(), simgen::draw_innovations(params.back(), 120, rng));
      for (int t = 0; t < 120; ++t) hist(t, d) = y[t];
    }
    // the hook stands in for an estimator and returns the generating parameters
    int next = 0;
    CalibrationHooks hooks;
    hooks.estimate_marginal = [&](std::span<const double>) { return params[static_cast<std::size_t>(next++)]; };
    hooks.estimate_copula = [&](const Matrix& u) {
      CHECK(u.rows() == 120);
      CHECK(u.cols() == D);
      return std::vector<double>(D, 0.25);
    };
    const auto spec = calibrate_priors(hist, ErrorKind::Gaussian, 1, hooks);
    // the stationarity truncation and 200 draws make recovery of the generator loose, so compare
    // against direct fits of the same estimates
    std::vector<double> a1, a2, g;
    for (const auto& p : params) {
      a1.push_back(p.alpha1);
      a2.push_back(p.alpha2);
      g.push_back(p.gamma);
    }
    const auto fa1 = fit_beta_ml(a1), fa2 = fit_beta_ml(a2);
    const auto fg = fit_gamma_ml(g);
    CHECK(spec.alpha1.a == doctest::Approx(fa1.a).epsilon(1e-12));
    CHECK(spec.alpha1.b == doctest::Approx(fa1.b).epsilon(1e-12));
    CHECK(spec.alpha2.a == doctest::Approx(fa2.a).epsilon(1e-12));
    CHECK(spec.gamma.shape == doctest::Approx(fg.shape).epsilon(1e-12));
    CHECK(spec.gamma.rate == doctest::Approx(fg.rate).epsilon(1e-12));
    CHECK(within(spec.alpha1.a / (spec.alpha1.a + spec.alpha1.b), 11.34 / (11.34 + 85.12), 0.15));
    CHECK(within(spec.gamma.shape / spec.gamma.rate, 4.69 * 0.03, 0.15));
    CHECK(spec.loading_mean.size() == D);
    CHECK(spec.loading_mean[5] == 0.25);
    CHECK_NOTHROW(spec.validate());

    CHECK_THROWS_AS(calibrate_priors(hist.leftCols(2), ErrorKind::Gaussian, 1, hooks), ConfigError);
    CHECK_THROWS_AS(calibrate_priors(hist.topRows(50), ErrorKind::Gaussian, 1, hooks), ConfigError);
  }
}
