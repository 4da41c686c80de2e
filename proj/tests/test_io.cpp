#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "nifm/config.hpp"
#include "nifm/errors.hpp"
#include "nifm/io.hpp"
#include "nifm/rng.hpp"

using namespace nifm;
using namespace nifm::io;

namespace {

std::string tmp(const std::string& name) { return (std::filesystem::temp_directory_path() / ("nifm_io_" + name)).string(); }

void put(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("dataset round trip is exact") {
    Rng rng(1);
    Matrix y(57, 4);
    for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.normal() * std::exp(3 * rng.normal());
    const auto p = tmp("data.csv");
    write_dataset(p, y);
    std::ifstream f(p);
    std::string header;
    std::getline(f, header);
    CHECK(header == "y1,y2,y3,y4");
    CHECK(read_dataset(p) == y);
    std::filesystem::remove(p);
  }

  TEST_CASE("malformed CSVs are rejected with a location") {
    const auto p = tmp("bad.csv");
    put(p, "y1,y2\n1,2\n3\n");
    try {
      read_csv(p);
      FAIL("expected IoError");
    } catch (const IoError& e) {
      CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    put(p, "y1,y2\n1,abc\n");
    CHECK_THROWS_AS(read_csv(p), IoError);
    put(p, "a,b\n1,2\n");
    CHECK_NOTHROW(read_csv(p));
    CHECK_THROWS_AS(read_dataset(p), IoError);
    put(p, "y1,y2\n");
    CHECK_THROWS_AS(read_dataset(p), IoError);
    put(p, "");
    CHECK_THROWS_AS(read_csv(p), IoError);
    std::filesystem::remove(p);
    CHECK_THROWS_AS(read_csv(tmp("missing.csv")), IoError);
  }

  TEST_CASE("config parsing") {
    const std::set<std::string> keys{"D", "k", "lr", "family"};
    const auto kv = parse_config("# comment\nD = 3\nk=1  # trailing\n\nlr=9e-5\nfamily=t\n", keys);
    CHECK(get_int(kv, "D", 0) == 3);
    CHECK(get_int(kv, "k", 0) == 1);
    CHECK(get_double(kv, "lr", 0) == 9e-5);
    CHECK(get_string(kv, "family", "") == "t");
    CHECK(get_int(kv, "T", 200) == 200);
    try {
      parse_config("D=3\nlearning_rate=1\n", keys);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("learning_rate") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config("D 3\n", keys), ConfigError);
    CHECK_THROWS_AS(get_int(parse_config("D=3.5\n", keys), "D", 0), ConfigError);
    CHECK_THROWS_AS(get_double(parse_config("lr=fast\n", keys), "lr", 0), ConfigError);
    CHECK_THROWS_AS(read_config(tmp("nope.cfg"), keys), ConfigError);
  }

  TEST_CASE("truth file round trip") {
    Truth t;
    for (int d = 0; d < 3; ++d) {
      garch::GarchParams p;
      p.error_kind = garch::ErrorKind::StudentT;
      p.alpha1 = 0.1 + 0.01 * d;
      p.alpha2 = 0.8;
      p.gamma = 0.05 / 3.0;
      p.nu_tilde = 6.123456789;
      t.marginals.push_back(p);
    }
    t.copula = copula::CopulaParams{copula::FactorLoadings{3, 2, {0.1, -0.2, 0.3, 1.0 / 3.0, 0.5}}, copula::Family::StudentT,
                                    7.5};
    const auto p = tmp("truth.txt");
    write_truth(p, t);
    const auto back = read_truth(p);
    REQUIRE(back.marginals.size() == 3);
    CHECK(back.marginals[2].alpha1 == t.marginals[2].alpha1);
    CHECK(back.marginals[0].gamma == t.marginals[0].gamma);
    CHECK(*back.marginals[1].nu_tilde == *t.marginals[1].nu_tilde);
    REQUIRE(back.copula);
    CHECK(back.copula->loadings.values == t.copula->loadings.values);
    CHECK(*back.copula->nu == 7.5);

    t.copula.reset();
    write_truth(p, t);
    CHECK(!read_truth(p).copula);
    std::filesystem::remove(p);
  }

  TEST_CASE("records reader keeps text fields") {
    const auto p = tmp("records.csv");
    put(p, "parameter,mean\ny1.phi1,0.5,9\n");
    CHECK_THROWS_AS(read_records(p), IoError);
    put(p, "parameter,mean\ny1.phi1,0.5\ny1.phi2,-1e-3\n");
    const auto r = read_records(p);
    REQUIRE(r.rows.size() == 2);
    CHECK(r.rows[1][r.column("parameter")] == "y1.phi2");
    CHECK(r.rows[1][r.column("mean")] == "-1e-3");
    CHECK_THROWS_AS(r.column("sd"), IoError);
    std::filesystem::remove(p);
  }

  TEST_CASE("experiment configuration") {
    using config::ExperimentConfig;
    ExperimentConfig c;
    CHECK_NOTHROW(c.validate());
    CHECK(c.lr == 9e-5);
    CHECK(c.batch == 32);
    CHECK(c.patience == 100);
    CHECK(c.max_epochs == 4000);

    const auto desk = ExperimentConfig::desk();
    CHECK(desk.T == 200);
    CHECK(desk.D == 3);
    CHECK(desk.n_per_epoch == 2000);
    CHECK(desk.max_epochs == 300);
    CHECK(desk.marginal_arch().head_hidden == nets::MarginalArch::desk(200, garch::ErrorKind::Gaussian).head_hidden);

    // preset first, then the other keys on top of it
    ExperimentConfig d;
    d.apply(parse_config("preset=desk\nD=4\nk=2\nmarginal_kind=t\nprior_gamma_shape=5\n", ExperimentConfig::keys()));
    CHECK(d.n_per_epoch == 2000);
    CHECK(d.D == 4);
    CHECK(d.prior.dim == 4);
    CHECK(d.prior.n_factors == 2);
    CHECK(d.prior.loading_mean.size() == 7);
    CHECK(d.prior.nu_tilde.has_value());
    CHECK(d.prior.gamma.shape == 5.0);
    CHECK_NOTHROW(d.validate());

    // to_text reads back to the same configuration
    ExperimentConfig e;
    e.apply(parse_config(d.to_text(), ExperimentConfig::keys()));
    CHECK(e.to_text() == d.to_text());
    CHECK(e.prior.gamma.rate == d.prior.gamma.rate);

    auto bad = [](const std::string& text, const std::string& field) {
      try {
        ExperimentConfig x;
        x.apply(parse_config(text, ExperimentConfig::keys()));
        x.validate();
        FAIL("expected ConfigError for " << text);
      } catch (const ConfigError& err) {
        CHECK_MESSAGE(std::string(err.what()).find(field) != std::string::npos, err.what());
      }
    };
    bad("k=4\n", "k");
    bad("D=0\n", "D");
    bad("lr=-1\n", "lr");
    bad("val_frac=1\n", "val_frac");
    bad("max_epochs=-3\n", "max_epochs");
    bad("preset=laptop\n", "preset");
    bad("plugin=median\n", "plugin");
    bad("prior_loading_mean=0,0\n", "mu*");
    bad("prior_nu_tilde_shape=3\n", "prior_nu_tilde");
    bad("prior_alpha1_a=0\n", "alpha1");
    bad("mcmc_iter=10\n", "mcmc_iter");

    // k = D is allowed for saturated factor models
    ExperimentConfig sat;
    sat.apply(parse_config("k=3\n", ExperimentConfig::keys()));
    CHECK_NOTHROW(sat.validate());
    CHECK(sat.copula_arch().k == 3);
  }
}
