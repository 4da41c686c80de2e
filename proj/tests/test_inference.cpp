#include <algorithm>
#include <cmath>
#include <memory>

#include "doctest.h"
#include "json.hpp"
#include "nifm/errors.hpp"
#include "nifm/inference.hpp"
#include "nifm/predict.hpp"
#include "nifm/simgen.hpp"

using namespace nifm;
using namespace nifm::inference;
using garch::ErrorKind;

namespace {

constexpr std::size_t kT = 200;

// Briefly trained desk networks, built once and shared by every case.
struct Trained {
  nets::MarginalNet marginal{nets::MarginalArch::desk(kT, ErrorKind::Gaussian), 3};
  nets::CopulaNet copula{nets::CopulaArch::desk(kT, 3, 1, copula::Family::Gaussian), 4};
  priors::PriorSpec spec = priors::default_priors(ErrorKind::Gaussian, 3, 1);

  Trained() {
    nets::TrainConfig cfg;
    cfg.n_per_epoch = 2000;
    cfg.adam.lr = 1e-3;
    cfg.seed = 21;
    cfg.max_epochs = 15;
    nets::train_marginal(marginal, spec, cfg);
    cfg.max_epochs = 10;
    nets::train_copula(copula, spec, cfg);
  }
};

Trained& trained() {
  static Trained t;
  return t;
}

simgen::JointSample simulate(std::uint64_t seed, const copula::CopulaParams* cop = nullptr) {
  auto& t = trained();
  Rng rng(seed);
  std::vector<garch::GarchParams> ps;
  for (int d = 0; d < 3; ++d) ps.push_back(priors::sample_garch(t.spec, rng));
  const auto c = cop ? *cop : priors::sample_copula(t.spec, copula::Family::Gaussian, rng);
  return simgen::simulate_joint(ps, c, kT, rng);
}

// Two-sided Kolmogorov-Smirnov distance to U(0, 1).
double ks_uniform(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    d = std::max({d, (static_cast<double>(i) + 1) / n - x[i], x[i] - static_cast<double>(i) / n});
  return d;
}

std::vector<double> column(const Matrix& m, Eigen::Index c) {
  const Eigen::VectorXd v = m.col(c);  // strided in a row-major matrix
  return {v.data(), v.data() + v.size()};
}

}  // namespace

TEST_SUITE("inference") {
  TEST_CASE("contract errors") {
    auto& t = trained();
    Rng rng(1);
    Matrix one(kT, 1);
    for (Eigen::Index i = 0; i < one.size(); ++i) one.data()[i] = 0.1 * rng.normal();
    CHECK_THROWS_AS(infer(t.marginal, &t.copula, one), ConfigError);

    Matrix short_y = simulate(2).y.topRows(150);
    CHECK_THROWS_AS(infer(t.marginal, &t.copula, short_y), ShapeError);

    Matrix four(kT, 4);
    for (Eigen::Index i = 0; i < four.size(); ++i) four.data()[i] = 0.1 * rng.normal();
    CHECK_THROWS_AS(infer(t.marginal, &t.copula, four), ShapeError);
    CHECK_NOTHROW(infer(t.marginal, nullptr, four));

    Matrix y = simulate(3).y;
    y(17, 1) = std::nan("");
    CHECK_THROWS_WITH_AS(infer(t.marginal, &t.copula, y), doctest::Contains("series 2"), NumericalError);
  }

  TEST_CASE("result invariants, determinism and no training side effects") {
    auto& t = trained();
    const auto sim = simulate(5);
    const auto before_m = t.marginal.state_vector();
    const auto before_c = t.copula.state_vector();
    const auto a = infer(t.marginal, &t.copula, sim.y);
    const auto b = infer(t.marginal, &t.copula, sim.y);
    CHECK(t.marginal.state_vector() == before_m);
    CHECK(t.copula.state_vector() == before_c);

    CHECK(a.copula_data == b.copula_data);
    REQUIRE(a.copula_posterior);
    CHECK(a.copula_posterior->mean == b.copula_posterior->mean);
    CHECK(a.copula_posterior->chol == b.copula_posterior->chol);
    for (int d = 0; d < 3; ++d) CHECK(a.marginal_posteriors[d].mean == b.marginal_posteriors[d].mean);

    CHECK(a.D == 3);
    CHECK(a.k == 1);
    CHECK(a.T == kT);
    CHECK(a.copula_data.minCoeff() > 0.0);
    CHECK(a.copula_data.maxCoeff() < 1.0);
    for (const auto& p : a.marginal_plugins) CHECK(p.is_valid());
    CHECK(a.seconds < 1.0);

    // the plug-in is the back-transformed analytic mean
    for (int d = 0; d < 3; ++d) {
      const auto& q = a.marginal_posteriors[d];
      const auto p = garch::from_unconstrained(std::span<const double>(q.mean.data(), 3), ErrorKind::Gaussian);
      CHECK(p.alpha1 == a.marginal_plugins[d].alpha1);
      CHECK(p.gamma == a.marginal_plugins[d].gamma);
    }
  }

  TEST_CASE("sampled-mean plug-ins average the constrained draws") {
    auto& t = trained();
    const auto sim = simulate(6);
    InferOptions opts;
    opts.plugin = PluginMode::SampledMean;
    opts.plugin_draws = 20000;
    opts.seed = 4;
    const auto r = infer(t.marginal, &t.copula, sim.y, opts);
    const auto r2 = infer(t.marginal, &t.copula, sim.y, opts);
    CHECK(r.copula_data == r2.copula_data);
    CHECK(r.plugin == PluginMode::SampledMean);
    CHECK(plugin_mode_from_string(to_string(PluginMode::SampledMean)) == PluginMode::SampledMean);
    CHECK_THROWS_AS(plugin_mode_from_string("median"), ConfigError);

    // independent Monte Carlo estimate with a different stream
    Rng rng(99);
    for (int d = 0; d < 3; ++d) {
      const Matrix draws = nets::sample_posterior(r.marginal_posteriors[d], 20000, rng);
      double a1 = 0.0, a2 = 0.0, g = 0.0, a1sq = 0.0;
      for (Eigen::Index j = 0; j < draws.rows(); ++j) {
        const auto p = garch::from_unconstrained(std::span<const double>(draws.row(j).data(), 3), ErrorKind::Gaussian);
        a1 += p.alpha1;
        a1sq += p.alpha1 * p.alpha1;
        a2 += p.alpha2;
        g += p.gamma;
      }
      const double n = static_cast<double>(draws.rows());
      const double se = std::sqrt((a1sq / n - (a1 / n) * (a1 / n)) / n);
      CHECK(std::abs(r.marginal_plugins[d].alpha1 - a1 / n) < 6 * se + 1e-12);
      CHECK(r.marginal_plugins[d].alpha2 == doctest::Approx(a2 / n).epsilon(0.02));
      CHECK(r.marginal_plugins[d].gamma == doctest::Approx(g / n).epsilon(0.05));
      CHECK(r.marginal_plugins[d].is_valid());
    }
  }

  TEST_CASE("joint posterior draws") {
    auto& t = trained();
    const auto r = infer(t.marginal, &t.copula, simulate(7).y);
    constexpr std::size_t J = 4000;
    Rng rng(8);
    const auto draws = joint_posterior_sample(r, J, rng);
    REQUIRE(draws.size() == J);
    CHECK(draws.marginal_transformed.rows() == static_cast<Eigen::Index>(J));
    CHECK(draws.marginal_transformed.cols() == 9);
    CHECK(draws.copula_transformed.cols() == 3);
    for (const auto& row : draws.marginals)
      for (const auto& p : row) {
        CHECK(p.alpha1 + p.alpha2 < 1.0);
        CHECK(p.is_valid());
      }

    // Monte Carlo means against the Gaussian means: each z must be within 3
    // sigma/sqrt(J) in most coordinates; with 12 of them a 3.1 sigma draw is
    // not rare, so also bound sum z^2 by the chi-square(12) 0.999 quantile.
    double z2 = 0.0;
    int over3 = 0;
    auto score = [&](double m, double mu, double sd) {
      const double z = (m - mu) / (sd / std::sqrt(double(J)));
      z2 += z * z;
      over3 += std::abs(z) > 3.0;
      CHECK(std::abs(z) < 4.0);
    };
    for (int d = 0; d < 3; ++d) {
      const auto& q = r.marginal_posteriors[d];
      const Eigen::VectorXd sd = q.sd();
      for (int i = 0; i < 3; ++i) score(draws.marginal_transformed.col(3 * d + i).mean(), q.mean(i), sd(i));
    }
    const Eigen::VectorXd csd = r.copula_posterior->sd();
    for (int i = 0; i < 3; ++i) score(draws.copula_transformed.col(i).mean(), r.copula_posterior->mean(i), csd(i));
    CHECK(over3 <= 1);
    CHECK(z2 < 32.91);

    // factors are sampled independently
    const double bound = 4.0 / std::sqrt(double(J));
    for (int a = 0; a < 9; ++a)
      for (int c = 0; c < 3; ++c) {
        const Eigen::ArrayXd x = draws.marginal_transformed.col(a).array() - draws.marginal_transformed.col(a).mean();
        const Eigen::ArrayXd z = draws.copula_transformed.col(c).array() - draws.copula_transformed.col(c).mean();
        const double rxy = (x * z).sum() / std::sqrt((x * x).sum() * (z * z).sum());
        CHECK(std::abs(rxy) < bound);
      }

    // back-transforms agree with the transformed columns
    const auto p0 = garch::from_unconstrained(
        std::span<const double>(draws.marginal_transformed.row(11).data() + 3, 3), ErrorKind::Gaussian);
    CHECK(p0.alpha1 == draws.marginals[11][1].alpha1);
    CHECK(draws.copulas[11].to_vector()[2] == draws.copula_transformed(11, 2));

    Rng r1(3), r2(3);
    CHECK(joint_posterior_sample(r, 10, r1).marginal_transformed == joint_posterior_sample(r, 10, r2).marginal_transformed);

    const auto zero = infer(t.marginal, nullptr, simulate(7).y);
    CHECK(!zero.copula_posterior);
    const auto zd = joint_posterior_sample(zero, 5, rng);
    CHECK(zd.k == 0);
    CHECK(zd.copula_transformed.cols() == 0);
    CHECK(zd.copulas.empty());
  }

  TEST_CASE("JSON report") {
    auto& t = trained();
    const auto r = infer(t.marginal, &t.copula, simulate(9).y);
    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["config"]["D"] == 3);
    CHECK(j["config"]["k"] == 1);
    CHECK(j["config"]["plugin"] == "transformed-mean");
    REQUIRE(j["marginals"].size() == 3);
    CHECK(j["marginals"][1]["posterior"]["y2.phi2"]["mean"].get<double>() == r.marginal_posteriors[1].mean(1));
    CHECK(j["marginals"][2]["plugin"]["alpha1"].get<double>() == r.marginal_plugins[2].alpha1);
    CHECK(j["copula"]["G_3_1"]["mean"].get<double>() == r.copula_posterior->mean(2));
    CHECK(marginal_param_names(ErrorKind::StudentT, 1).back() == "y2.df");
    CHECK(copula_param_names(3, 2, copula::Family::StudentT) ==
          std::vector<std::string>{"G_1_1", "G_2_1", "G_2_2", "G_3_1", "G_3_2", "nu"});
  }

  TEST_CASE("copula data is KS-uniform on simulated data") {
    auto& t = trained();
    const double crit = 1.628 / std::sqrt(double(kT));  // 1% level
    int rejected = 0;
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto sim = simulate(100 + s);
      const auto r = infer(t.marginal, &t.copula, sim.y);
      for (int d = 0; d < 3; ++d) rejected += ks_uniform(column(r.copula_data, d)) > crit;
    }
    // 15 columns at the 1% level; allow one rejection
    CHECK(rejected <= 1);

    // the test has power: a badly wrong plug-in scale is rejected
    const auto sim = simulate(100);
    auto p = trained().marginal.posteriors(sim.y)[0];
    auto wrong = garch::from_unconstrained(std::span<const double>(p.mean.data(), 3), ErrorKind::Gaussian);
    wrong.gamma *= 25.0;
    CHECK(ks_uniform(garch::marginal_cdf(wrong, column(sim.y, 0))) > crit);
  }

  TEST_CASE("independence data gives loadings near zero") {
    auto& t = trained();
    // G~ = (log 1e-8, 0, 0): Omega is the identity to 1e-16
    copula::CopulaParams indep{copula::FactorLoadings{3, 1, {std::log(1e-8), 0.0, 0.0}}, copula::Family::Gaussian,
                               std::nullopt};
    CHECK((copula::loadings_to_correlation(indep.loadings) - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-15);
    for (std::uint64_t s = 0; s < 5; ++s) {
      const auto r = infer(t.marginal, &t.copula, simulate(200 + s, &indep).y);
      const Eigen::VectorXd sd = r.copula_posterior->sd();
      for (int i = 1; i < 3; ++i) CHECK(std::abs(r.copula_posterior->mean(i)) < 2 * sd(i));
    }
  }

  TEST_CASE("network sampler") {
    auto& t = trained();
    const auto sampler = predict::network_sampler(t.marginal, &t.copula);
    const auto sim = simulate(11);
    Rng a(5), b(5);
    const auto da = sampler(sim.y, 50, a);
    const auto db = sampler(sim.y, 50, b);
    CHECK(da.size() == 50);
    CHECK(da.D == 3);
    CHECK(da.k == 1);
    CHECK(da.copula_transformed == db.copula_transformed);
  }
}
