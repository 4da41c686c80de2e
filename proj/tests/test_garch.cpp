#include <chrono>
#include <cmath>
#include <numbers>

#include <Eigen/LU>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/multiprecision/cpp_bin_float.hpp>

#include "doctest.h"
#include "gradcheck.hpp"
#include "nifm/autodiff.hpp"
#include "nifm/garch.hpp"
#include "nifm/priors.hpp"
#include "nifm/rng.hpp"
#include "nifm/simgen.hpp"
#include "nifm/special.hpp"

using namespace nifm;
using namespace nifm::garch;

namespace {

GarchParams gp(double a1, double a2, double g) {
  GarchParams p;
  p.alpha1 = a1;
  p.alpha2 = a2;
  p.gamma = g;
  return p;
}

GarchParams random_params(Rng& rng, bool t) {
  GarchParams p;
  const double s = 0.02 + 0.97 * rng.uniform();
  const double frac = 0.01 + 0.98 * rng.uniform();
  p.alpha1 = s * frac;
  p.alpha2 = s * (1 - frac);
  p.gamma = std::exp(-4.0 + 4.0 * rng.uniform());
  if (t) {
    p.error_kind = ErrorKind::StudentT;
    p.nu_tilde = 2.1 + 30.0 * rng.uniform();
  }
  return p;
}

double rel(double a, double b) { return std::fabs(a - b) / std::max(std::fabs(b), 1e-300); }

// 50-digit re-implementation of the variance recursion and error densities.
double ll_oracle(const GarchParams& p, const std::vector<double>& y) {
  using R = boost::multiprecision::cpp_bin_float_50;
  const R a1 = p.alpha1, a2 = p.alpha2, g = p.gamma;
  const R pi = boost::math::constants::pi<R>();
  R s2 = g / (R(1) - a1 - a2);
  R total = 0;
  for (std::size_t t = 0; t < y.size(); ++t) {
    if (t > 0) s2 = g + a1 * R(y[t - 1]) * R(y[t - 1]) + a2 * s2;
    const R x = R(y[t]) / sqrt(s2);
    R lp;
    if (p.error_kind == ErrorKind::Gaussian) {
      lp = -0.5 * log(2 * pi) - x * x / 2;
    } else {
      const R nu = *p.nu_tilde;
      lp = boost::math::lgamma((nu + 1) / 2) - boost::math::lgamma(nu / 2) - 0.5 * log(nu * pi) -
           (nu + 1) / 2 * log(1 + x * x / nu);
    }
    total += lp - 0.5 * log(s2);
  }
  return static_cast<double>(total);
}

}  // namespace

TEST_SUITE("garch") {
  TEST_CASE("transform examples") {
    auto t = to_unconstrained(gp(0.1, 0.8, 0.1));
    CHECK(t.phi1 == doctest::Approx(std::log(9.0)).epsilon(1e-14));
    CHECK(std::fabs(t.phi2) < 1e-14);
    CHECK(t.phi3 == doctest::Approx(std::log(1.0 / 8.0)).epsilon(1e-14));

    auto h = to_unconstrained(gp(0.25, 0.25, 0.7));
    CHECK(std::fabs(h.phi1) < 1e-15);
    CHECK(std::fabs(h.phi3) < 1e-15);

    auto p = from_unconstrained(TransformedGarchParams{0, 0, 0, std::nullopt}, ErrorKind::Gaussian);
    CHECK(p.alpha1 == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(p.alpha2 == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(p.gamma == doctest::Approx(0.5).epsilon(1e-15));

    GarchParams tp = gp(0.1, 0.8, 0.1);
    tp.error_kind = ErrorKind::StudentT;
    tp.nu_tilde = 3.0;
    CHECK(std::fabs(*to_unconstrained(tp).df_tilde) < 1e-15);
    auto nu10 = from_unconstrained(TransformedGarchParams{0, 0, 0, std::log(8.0)}, ErrorKind::StudentT);
    CHECK(*nu10.nu_tilde == doctest::Approx(10.0).epsilon(1e-14));

    CHECK_THROWS_AS(to_unconstrained(gp(0.0, 0.0, 1.0)), std::domain_error);
  }

  TEST_CASE("round trips over 10^4 draws at 1e-12") {
    Rng rng(11);
    double worst = 0.0, worst_t = 0.0;
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < 10000; ++i) {
      const bool t = (i % 2) == 1;
      const auto p = random_params(rng, t);
      const auto q = from_unconstrained(to_unconstrained(p), p.error_kind);
      worst = std::max({worst, rel(q.alpha1, p.alpha1), rel(q.alpha2, p.alpha2), rel(q.gamma, p.gamma)});
      if (t) worst = std::max(worst, rel(*q.nu_tilde, *p.nu_tilde));

      TransformedGarchParams z{rng.normal() * 3, rng.normal() * 3, rng.normal() * 3, std::nullopt};
      if (t) z.df_tilde = rng.normal() * 2;
      const auto back = to_unconstrained(from_unconstrained(z, p.error_kind));
      worst_t = std::max({worst_t, std::fabs(back.phi1 - z.phi1) / std::max(1.0, std::fabs(z.phi1)),
                        std::fabs(back.phi2 - z.phi2) / std::max(1.0, std::fabs(z.phi2)),
                        std::fabs(back.phi3 - z.phi3) / std::max(1.0, std::fabs(z.phi3))});
      if (t) worst_t = std::max(worst_t, std::fabs(*back.df_tilde - *z.df_tilde) / std::max(1.0, std::fabs(*z.df_tilde)));
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    CHECK(worst < 1e-12);
    // logit near 1 amplifies rounding of alpha1 + alpha2 by 1 / (1 - psi1)
    CHECK(worst_t < 1e-10);
    CHECK(secs < 1.0);
  }

  TEST_CASE("any finite transformed point is stationary") {
    Rng rng(5);
    for (int i = 0; i < 10000; ++i) {
      TransformedGarchParams z{rng.normal() * 10, rng.normal() * 10, rng.normal() * 10, std::nullopt};
      const auto p = from_unconstrained(z, ErrorKind::Gaussian);
      CHECK(p.alpha1 + p.alpha2 < 1.0);
      CHECK(p.gamma > 0.0);
    }
  }

  TEST_CASE("log Jacobian matches a numerical determinant") {
    Rng rng(8);
    for (int rep = 0; rep < 20; ++rep) {
      const bool t = rep % 2;
      std::vector<double> z{rng.normal(), rng.normal(), rng.normal()};
      if (t) z.push_back(rng.normal());
      const auto kind = t ? ErrorKind::StudentT : ErrorKind::Gaussian;
      const std::size_t m = z.size();
      auto constrained = [&](std::vector<double> v) {
        const auto p = from_unconstrained(v, kind);
        std::vector<double> out{p.alpha1, p.alpha2, p.gamma};
        if (t) out.push_back(*p.nu_tilde);
        return out;
      };
      Eigen::MatrixXd J(m, m);
      const double h = 1e-6;
      for (std::size_t j = 0; j < m; ++j) {
        auto zp = z, zm = z;
        zp[j] += h;
        zm[j] -= h;
        const auto fp = constrained(zp), fm = constrained(zm);
        for (std::size_t i = 0; i < m; ++i) J(i, j) = (fp[i] - fm[i]) / (2 * h);
      }
      const double numeric = std::log(std::fabs(J.determinant()));
      CHECK(log_jacobian(TransformedGarchParams::from_vector(z)) == doctest::Approx(numeric).epsilon(1e-6));
    }
  }

  TEST_CASE("conditional variances") {
    const auto p = gp(0.1, 0.8, 0.1);
    auto s = conditional_variances(p, std::vector<double>{2.0, 0.0, 0.0});
    CHECK(s[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(s[1] == doctest::Approx(1.3).epsilon(1e-15));

    GarchParams flat = gp(0.0, 0.0, 0.37);
    for (double v : conditional_variances(flat, std::vector<double>{1.0, -5.0, 3.0})) CHECK(v == 0.37);

    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
      const auto q = random_params(rng, false);
      std::vector<double> y(50);
      for (auto& v : y) v = rng.normal() * 10;
      for (double v : conditional_variances(q, y)) CHECK(v > 0.0);
    }
  }

  TEST_CASE("log likelihood closed forms and extended-precision oracle") {
    CHECK(log_likelihood(gp(0, 0, 1), std::vector<double>{0.0, 0.0}) ==
          doctest::Approx(-std::log(2 * std::numbers::pi)).epsilon(1e-14));
    const auto p = gp(0.1, 0.8, 0.1);
    CHECK(log_likelihood(p, std::vector<double>{0.0}) == doctest::Approx(special::normal_logpdf(0.0)).epsilon(1e-14));

    Rng rng(21);
    for (int rep = 0; rep < 40; ++rep) {
      const auto q = random_params(rng, rep % 2 == 1);
      std::vector<double> eps(50);
      for (auto& e : eps) e = rng.normal();
      const auto y = simulate(q, eps);
      CHECK(rel(log_likelihood(q, y), ll_oracle(q, y)) < 1e-10);
    }
  }

  TEST_CASE("simulate") {
    const auto p = gp(0.1, 0.8, 0.1);
    auto y = simulate(p, std::vector<double>{1.0, 1.0});
    CHECK(y[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-15));
    for (double v : simulate(p, std::vector<double>(20, 0.0))) CHECK(v == 0.0);

    auto spec = priors::default_priors(ErrorKind::StudentT, 3, 1);
    auto gspec = priors::default_priors(ErrorKind::Gaussian, 3, 1);
    Rng rng(99);
    int finite = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto q = priors::sample_garch(i % 2 ? spec : gspec, rng);
      const auto obs = simulate(q, simgen::draw_innovations(q, 200, rng));
      finite += std::isfinite(log_likelihood(q, obs));
    }
    CHECK(finite == 1000);
  }

  TEST_CASE("marginal cdf and quantile") {
    Rng rng(4);
    for (bool t : {false, true}) {
      const auto p = random_params(rng, t);
      for (double u : marginal_cdf(p, std::vector<double>(5, 0.0))) CHECK(u == doctest::Approx(0.5).epsilon(1e-15));
      std::vector<double> y(100);
      for (auto& v : y) v = rng.normal() * 0.5;
      const auto u = marginal_cdf(p, y);
      const auto s2 = conditional_variances(p, y);
      for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(u[i] > 0.0);
        CHECK(u[i] < 1.0);
        CHECK(std::fabs(marginal_quantile(p, u[i], s2[i]) - y[i]) < 1e-8);
      }
      // monotone in y at fixed sigma (single observation keeps sigma_1 fixed)
      double prev = 0.0;
      for (double v = -5; v <= 5; v += 0.25) {
        const double cur = marginal_cdf(p, std::vector<double>{v})[0];
        CHECK(cur >= prev);
        prev = cur;
      }
    }
    CHECK(marginal_cdf(gp(0, 0, 1), std::vector<double>{1.6448536})[0] == doctest::Approx(0.95).epsilon(1e-7));
    CHECK(marginal_cdf(gp(0, 0, 1), std::vector<double>{1e6})[0] == 1.0 - kCdfClamp);
  }

  TEST_CASE("log likelihood gradient on 100 random points") {
    Rng rng(77);
    for (int rep = 0; rep < 100; ++rep) {
      const bool t = rep % 2 == 1;
      const auto kind = t ? ErrorKind::StudentT : ErrorKind::Gaussian;
      const auto q = random_params(rng, t);
      std::vector<double> eps(50);
      for (auto& e : eps) e = rng.normal();
      const auto y = simulate(q, eps);
      auto theta = ad::Tensor::from({static_cast<std::size_t>(param_count(kind))}, to_unconstrained(q).to_vector());
      const auto r = testutil::check_gradients(
          {theta}, [&](const std::vector<ad::Tensor>& l) { return log_likelihood_ad(l[0], kind, y); });
      CHECK(r.max_rel_err < 1e-5);
      CHECK(log_likelihood_ad(theta, kind, y).item() == doctest::Approx(log_likelihood(q, y)).epsilon(1e-12));
    }
  }

  TEST_CASE("validation") {
    CHECK_THROWS(gp(0.6, 0.5, 1.0).validate());
    CHECK_THROWS(gp(0.1, 0.1, -1.0).validate());
    GarchParams t = gp(0.1, 0.1, 1.0);
    t.error_kind = ErrorKind::StudentT;
    CHECK_FALSE(t.is_valid());
    t.nu_tilde = 1.5;
    CHECK_FALSE(t.is_valid());
    t.nu_tilde = 4.0;
    CHECK(t.is_valid());
  }
}
