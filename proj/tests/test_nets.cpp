#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <Eigen/Cholesky>
#include <Eigen/LU>

#include "doctest.h"
#include "gradsuite.hpp"
#include "nifm/errors.hpp"
#include "nifm/nets.hpp"

using namespace nifm;
using namespace nifm::nets;
using garch::ErrorKind;

namespace {

ad::Tensor randn(ad::Shape s, Rng& rng, double scale = 1.0) {
  std::vector<double> v(ad::numel(s));
  for (auto& x : v) x = scale * rng.normal();
  return ad::Tensor::from(std::move(s), std::move(v));
}

ad::Tensor randpos(ad::Shape s, Rng& rng) {
  std::vector<double> v(ad::numel(s));
  for (auto& x : v) x = 0.4 + 1.5 * rng.uniform();
  return ad::Tensor::from(std::move(s), std::move(v));
}

Matrix randmat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Matrix uniform_data(std::size_t T, int D, Rng& rng) {
  Matrix u(static_cast<Eigen::Index>(T), D);
  for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] = rng.uniform();
  return u;
}

// Direct multivariate normal log density from the explicit covariance.
double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, const Eigen::MatrixXd& S) {
  const Eigen::VectorXd r = x - mu;
  const double quad = r.dot(S.inverse() * r);
  return -0.5 * x.size() * std::log(2 * std::numbers::pi) - 0.5 * std::log(S.determinant()) - 0.5 * quad;
}

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("nifm_test_" + name)).string();
}

}  // namespace

TEST_SUITE("nets") {
  TEST_CASE("marginal architecture matches the reference table") {
    MarginalNet net(MarginalArch::full(1000, ErrorKind::Gaussian), 1);
    CHECK(net.parameter_count() == 6641369);
    std::vector<LayerTrace> tr;
    const auto out = net.forward(ad::Tensor::zeros({32, 1000}), false, &tr);
    REQUIRE(tr.size() == 16);
    using S = ad::Shape;
    CHECK(tr[0].in_shape == S{32, 1, 1000});
    CHECK(tr[0].out_shape == S{32, 8, 500});
    CHECK(tr[0].params == 32);
    CHECK(tr[1].out_shape == S{32, 16, 250});
    CHECK(tr[1].params == 400);
    CHECK(tr[2].out_shape == S{32, 32, 125});
    CHECK(tr[2].params == 1568);
    CHECK(tr[3].out_shape == S{32, 4000});
    const std::size_t head_params[] = {2048512, 131328, 32896, 387};
    const std::size_t head_out[] = {512, 256, 128, 3};
    for (int h = 0; h < 3; ++h)
      for (int l = 0; l < 4; ++l) {
        const auto& row = tr[static_cast<std::size_t>(4 + 4 * h + l)];
        CHECK(row.params == head_params[l]);
        CHECK(row.out_shape == S{32, head_out[l]});
      }
    CHECK(out.mean.shape() == S{32, 3});
    CHECK(out.diag.shape() == S{32, 3});
    CHECK(out.lower.shape() == S{32, 3});
    MarginalNet tnet(MarginalArch::full(1000, ErrorKind::StudentT), 1);
    const auto tout = tnet.forward(ad::Tensor::zeros({2, 1000}), false);
    CHECK(tout.mean.shape() == S{2, 4});
    CHECK(tout.lower.shape() == S{2, 6});
  }

  TEST_CASE("copula architecture matches the reference tables") {
    using S = ad::Shape;
    CopulaNet net(CopulaArch::full(1000, 20, 1, copula::Family::Gaussian), 1);
    CHECK(net.parameter_count() == 2615784);
    std::vector<LayerTrace> tr;
    const auto out = net.forward(ad::Tensor::full({32, 20000}, 0.5), false, &tr);
    REQUIRE(tr.size() == 5 + 2 * 9);
    CHECK(tr[0].in_shape == S{32, 1000, 20});
    CHECK(tr[0].out_shape == S{32, 1000, 64});
    CHECK(tr[0].params == 1344);
    CHECK(tr[3].params == 131584);
    CHECK(tr[4].name == "Mean");
    CHECK(tr[4].out_shape == S{32, 512});
    const std::size_t trunk[] = {525312, 2048, 524800, 1024, 131328, 512, 32896, 256, 2580};
    for (int h = 0; h < 2; ++h)
      for (int l = 0; l < 9; ++l) CHECK(tr[static_cast<std::size_t>(5 + 9 * h + l)].params == trunk[l]);
    CHECK(tr[13].out_shape == S{32, 20});
    CHECK(out.mean.shape() == S{32, 20});
    CHECK(out.var.shape() == S{32, 20});

    CopulaNet four(CopulaArch::full(1000, 20, 4, copula::Family::Gaussian), 1);
    CHECK(four.parameter_count() == 7271616 + 2 * (5140 + 4883 + 4626 + 4369));
    std::vector<LayerTrace> tr4;
    const auto out4 = four.forward(ad::Tensor::full({2, 20000}, 0.5), false, &tr4);
    CHECK(out4.mean.shape() == S{2, 74});
    std::vector<std::size_t> head_widths, head_params;
    for (const auto& r : tr4)
      if (r.name.rfind("Linear (factor", 0) == 0) {
        head_widths.push_back(r.out_shape[1]);
        head_params.push_back(r.params);
      }
    CHECK(head_widths == std::vector<std::size_t>{20, 19, 18, 17, 20, 19, 18, 17});
    CHECK(head_params == std::vector<std::size_t>{5140, 4883, 4626, 4369, 5140, 4883, 4626, 4369});

    CopulaNet tcop(CopulaArch::full(50, 5, 2, copula::Family::StudentT), 1);
    CHECK(tcop.forward(ad::Tensor::full({2, 250}, 0.5), false).mean.shape() == S{2, 10});
  }

  TEST_CASE("nll closed forms and density oracle") {
    Matrix t1(1, 1);
    t1 << 0.3;
    CHECK(nll_full(ad::Tensor::from({1, 1}, {0.3}), ad::Tensor::from({1, 1}, {1.0}), ad::Tensor::zeros({1, 0}), t1).item() ==
          doctest::Approx(0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));
    CHECK(nll_mean_field(ad::Tensor::from({1, 1}, {0.3}), ad::Tensor::from({1, 1}, {1.0}), t1).item() ==
          doctest::Approx(0.918938533204673).epsilon(1e-14));
    Matrix t3(1, 3);
    t3 << 1, 2, 3;
    CHECK(nll_full(ad::Tensor::from({1, 3}, {1, 2, 3}), ad::Tensor::full({1, 3}, 1.0), ad::Tensor::zeros({1, 3}), t3).item() ==
          doctest::Approx(1.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));

    Rng rng(8);
    for (int rep = 0; rep < 50; ++rep) {
      const std::size_t m = 1 + rep % 5, nl = m * (m - 1) / 2;
      auto mean = randn({1, m}, rng), diag = randpos({1, m}, rng), lower = randn({1, nl}, rng, 0.5);
      Matrix target = randmat(1, static_cast<Eigen::Index>(m), rng);
      Eigen::MatrixXd L = Eigen::MatrixXd::Zero(m, m);
      std::size_t p = 0;
      for (std::size_t i = 0; i < m; ++i) {
        L(i, i) = diag[i];
        for (std::size_t j = 0; j < i; ++j) L(i, j) = lower[p++];
      }
      Eigen::VectorXd mu(m), x(m);
      for (std::size_t i = 0; i < m; ++i) {
        mu(i) = mean[i];
        x(i) = target(0, i);
      }
      const double oracle = -mvn_logpdf(x, mu, L * L.transpose());
      const double got = nll_full(mean, diag, lower, target).item();
      CHECK(std::fabs(got - oracle) / std::fabs(oracle) < 1e-10);
      GaussianPosterior q{GaussianPosterior::Kind::FullCholesky, mu, L};
      std::vector<double> th(x.data(), x.data() + m);
      CHECK(-posterior_logpdf(q, th) == doctest::Approx(oracle).epsilon(1e-10));
    }
  }

  TEST_CASE("nll gradients match finite differences (20 instances each)") {
    for (const auto& gc : testutil::nll_cases()) {
      INFO(gc.name);
      CHECK(testutil::worst_over_instances(gc, 20, 500) < 1e-5);
    }
  }

  TEST_CASE("full-network gradient check on a T=64 mini-architecture") {
    const auto r = testutil::full_network_checks();
    CHECK(r.marginal.checked >= 50);
    CHECK(r.marginal.max_rel_err < 1e-5);
    CHECK(r.copula.checked >= 50);
    CHECK(r.copula.max_rel_err < 1e-5);
  }

  TEST_CASE("deep sets output is invariant to row permutations") {
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      Rng rng(900 + trial);
      const int D = 2 + trial % 4, k = 1 + trial % D;
      const auto fam = trial % 2 ? copula::Family::StudentT : copula::Family::Gaussian;
      CopulaNet net(CopulaArch::desk(40, D, k, fam), static_cast<std::uint64_t>(trial));
      const Matrix u = uniform_data(40, D, rng);
      std::vector<Eigen::Index> perm(40);
      for (Eigen::Index i = 0; i < 40; ++i) perm[static_cast<std::size_t>(i)] = i;
      for (std::size_t i = perm.size() - 1; i > 0; --i)
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.uniform() * (i + 1))]);
      Matrix pu(40, D);
      for (Eigen::Index i = 0; i < 40; ++i) pu.row(i) = u.row(perm[static_cast<std::size_t>(i)]);
      const auto a = net.posterior(u), b = net.posterior(pu);
      worst = std::max({worst, (a.mean - b.mean).cwiseAbs().maxCoeff(), (a.chol - b.chol).cwiseAbs().maxCoeff()});
    }
    CHECK(worst < 1e-6);
  }

  TEST_CASE("posterior heads stay valid") {
    MarginalNet net(MarginalArch::desk(64, ErrorKind::StudentT), 2);
    Rng rng(6);
    int ok = 0;
    for (int rep = 0; rep < 100; ++rep) {
      Matrix y = randmat(64, 100, rng) * std::exp(2 * rng.normal());
      for (const auto& q : net.posteriors(y)) {
        Eigen::LLT<Eigen::MatrixXd> llt(q.covariance());
        ok += (llt.info() == Eigen::Success) && (q.chol.diagonal().array() > 0).all();
      }
    }
    CHECK(ok == 10000);

    // eval-mode determinism
    Matrix y = randmat(64, 2, rng);
    y.col(1) = y.col(0);
    const auto qs = net.posteriors(y);
    CHECK(qs[0].mean == qs[1].mean);
    CHECK(qs[0].chol == qs[1].chol);
    CHECK_THROWS_AS(net.posteriors(randmat(63, 1, rng)), ShapeError);
  }

  TEST_CASE("posterior sampling") {
    GaussianPosterior q;
    q.mean = Eigen::Vector2d(0.5, -1.0);
    q.chol = Eigen::Matrix2d{{0.8, 0.0}, {0.3, 0.4}};
    Rng rng(2);
    const Matrix d = sample_posterior(q, 100000, rng);
    const Eigen::RowVectorXd mu = d.colwise().mean();
    const Eigen::MatrixXd c = d.rowwise() - mu;
    const Eigen::MatrixXd cov = c.transpose() * c / (d.rows() - 1.0);
    const Eigen::MatrixXd S = q.covariance();
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) CHECK(std::fabs(cov(i, j) - S(i, j)) < 0.05 * std::fabs(S(i, j)));
    CHECK(posterior_mean(q) == q.mean);
  }

  TEST_CASE("checkpoint round trip is bitwise") {
    Rng rng(10);
    const auto spec = priors::default_priors(ErrorKind::Gaussian, 3, 1);
    CopulaNet net(CopulaArch::desk(30, 3, 1, copula::Family::Gaussian), 4);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.n_per_epoch = 100;
    cfg.seed = 3;
    train_copula(net, spec, cfg);  // moves the batch-norm statistics away from their defaults
    const Matrix u = uniform_data(30, 3, rng);
    const auto before = net.posterior(u);
    const std::string path = tmp_path("cop.ckpt");
    save_checkpoint(path, make_checkpoint(net, {{"seed", "4"}}));
    const auto c = load_checkpoint(path);
    CHECK(c.descriptor.at("seed") == "4");
    auto loaded = copula_from_checkpoint(c);
    const auto after = loaded.posterior(u);
    CHECK(before.mean == after.mean);
    CHECK(before.chol == after.chol);
    CHECK_THROWS_AS(marginal_from_checkpoint(c), IoError);
    CHECK_THROWS_AS(loaded.posterior(uniform_data(31, 3, rng)), ShapeError);

    MarginalNet mnet(MarginalArch::desk(40, ErrorKind::StudentT), 9);
    const Matrix y = randmat(40, 2, rng);
    const auto mb = mnet.posteriors(y);
    save_checkpoint(path, make_checkpoint(mnet));
    auto mloaded = marginal_from_checkpoint(load_checkpoint(path));
    const auto ma = mloaded.posteriors(y);
    CHECK(mb[1].mean == ma[1].mean);
    CHECK(mb[1].chol == ma[1].chol);

    // descriptor that disagrees with the payload
    auto bad = load_checkpoint(path);
    bad.descriptor["T"] = "80";
    CHECK_THROWS_AS(marginal_from_checkpoint(bad), ShapeError);

    // one flipped byte in the payload
    {
      std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
      f.seekg(200);
      char ch;
      f.read(&ch, 1);
      ch ^= 0x10;
      f.seekp(200);
      f.write(&ch, 1);
    }
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("checksum"), IoError);

    Checkpoint v2 = make_checkpoint(mnet);
    v2.version = 2;
    save_checkpoint(path, v2);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), IoError);
    CHECK_THROWS_AS(load_checkpoint(tmp_path("missing.ckpt")), IoError);
    std::remove(path.c_str());
  }

  TEST_CASE("training reproducibility, early stopping and loss curves") {
    const auto spec = priors::default_priors(ErrorKind::Gaussian, 3, 1);
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.n_per_epoch = 200;
    cfg.seed = 11;
    cfg.adam.lr = 1e-3;
    MarginalNet a(MarginalArch::desk(32, ErrorKind::Gaussian), 1), b(MarginalArch::desk(32, ErrorKind::Gaussian), 1);
    const auto ra = train_marginal(a, spec, cfg);
    const auto rb = train_marginal(b, spec, cfg);
    REQUIRE(ra.curve.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(ra.curve[i].train == rb.curve[i].train);
      CHECK(ra.curve[i].val == rb.curve[i].val);
    }
    CHECK(a.state_vector() == b.state_vector());

    cfg.threads = 3;
    MarginalNet c(MarginalArch::desk(32, ErrorKind::Gaussian), 1);
    const auto rc = train_marginal(c, spec, cfg);
    CHECK(rc.curve.back().val == ra.curve.back().val);

    cfg.threads = 1;
    cfg.max_epochs = 50;
    cfg.patience = 2;
    cfg.adam.lr = 0.5;  // large enough to stall validation progress quickly
    MarginalNet d(MarginalArch::desk(32, ErrorKind::Gaussian), 1);
    const auto rd = train_marginal(d, spec, cfg);
    CHECK(rd.epochs_run < 50);
    CHECK(rd.stop_reason == "patience");
    for (const auto& e : rd.curve)
      if (std::isfinite(e.val)) CHECK(rd.best_val <= e.val);

    const std::string path = tmp_path("loss.csv");
    write_loss_csv(path, ra);
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);
    CHECK(line == "epoch,train_loss,val_loss");
    std::getline(f, line);
    CHECK(line.rfind("0,,", 0) == 0);
    std::remove(path.c_str());

    CHECK_THROWS_AS(train_copula(*std::make_unique<CopulaNet>(CopulaArch::desk(20, 4, 1, copula::Family::Gaussian), 1),
                                 spec, cfg),
                    ConfigError);
  }

  TEST_CASE("short training run lowers the validation loss") {
    const auto spec = priors::default_priors(ErrorKind::Gaussian, 3, 1);
    TrainConfig cfg;
    cfg.max_epochs = 8;
    cfg.n_per_epoch = 1000;
    cfg.seed = 5;
    cfg.adam.lr = 1e-3;
    MarginalNet net(MarginalArch::desk(200, ErrorKind::Gaussian), 2);
    const auto r = train_marginal(net, spec, cfg);
    CHECK(r.best_val < r.initial_val);
  }

  TEST_CASE("constant-target task drives the mean head to the target") {
    MarginalArch a = MarginalArch::desk(32, ErrorKind::Gaussian);
    MarginalNet net(a, 7);
    Rng rng(1);
    Matrix target(16, 3);
    for (Eigen::Index i = 0; i < 16; ++i) target.row(i) << 0.5, -1.0, 2.0;
    ad::AdamState st;
    ad::AdamConfig cfg;
    for (int step = 0; step < 2000; ++step) {
      // exponential decay: at a fixed rate the shrinking variance heads make the mean jitter
      cfg.lr = 2e-3 * std::pow(0.01, step / 2000.0);
      const auto x = randn({16, 32}, rng);
      ad::Tape tape;
      ad::Tensor L;
      {
        ad::Recording rec(tape);
        const auto o = net.forward(x, true);
        L = nll_full(o.mean, o.diag, o.lower, target);
      }
      for (auto& p : net.parameters()) p.zero_grad();
      tape.backward(L);
      ad::adam_step(net.parameters(), st, cfg);
    }
    const auto probe = randn({1, 32}, rng);
    const auto q = net.posterior(std::vector<double>(probe.data().begin(), probe.data().end()));
    CHECK(std::fabs(q.mean(0) - 0.5) < 1e-2);
    CHECK(std::fabs(q.mean(1) + 1.0) < 1e-2);
    CHECK(std::fabs(q.mean(2) - 2.0) < 1e-2);
  }
}
