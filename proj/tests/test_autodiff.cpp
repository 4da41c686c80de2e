#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gradsuite.hpp"
#include "nifm/autodiff.hpp"
#include "nifm/errors.hpp"
#include "nifm/rng.hpp"

using namespace nifm;
using namespace nifm::ad;

using testutil::randn;

TEST_SUITE("autodiff") {
  TEST_CASE("every primitive matches finite differences (20 instances each)") {
    for (const auto& gc : testutil::primitive_cases()) {
      INFO(gc.name);
      CHECK(testutil::worst_over_instances(gc) < 1e-5);
    }
  }

  TEST_CASE("conv1d output length and cross-correlation convention") {
    auto x = Tensor::zeros({32, 1, 1000});
    auto w = Tensor::zeros({8, 1, 3});
    auto b = Tensor::zeros({8});
    CHECK(conv1d(x, w, b, 2, 1).shape() == Shape{32, 8, 500});
    // x_{c,1} = k1 y1 + k2 y2 + k3 y3 + b without kernel flip
    auto y = Tensor::from({1, 1, 3}, {1.0, 2.0, 3.0});
    auto k = Tensor::from({1, 1, 3}, {10.0, 100.0, 1000.0});
    auto out = conv1d(y, k, Tensor::from({1}, {0.5}), 1, 0);
    CHECK(out.item() == doctest::Approx(10 + 200 + 3000 + 0.5));
  }

  TEST_CASE("softplus(0) = log 2") { CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-15)); }

  TEST_CASE("backward contract") {
    auto x = Tensor::from({4}, {1, 2, 3, 4}, true);
    Tape tape;
    Tensor loss;
    {
      Recording rec(tape);
      loss = sum(x);
    }
    tape.backward(loss);
    for (double g : x.grad()) CHECK(g == 1.0);
    CHECK_THROWS(tape.backward(loss));

    Tape t2;
    Tensor v;
    {
      Recording rec(t2);
      v = scale(x, 2.0);
    }
    CHECK_THROWS_AS(t2.backward(v), ShapeError);
  }

  TEST_CASE("shape errors name both shapes") {
    auto a = Tensor::zeros({2, 3});
    auto b = Tensor::zeros({3, 2});
    try {
      add(a, b);
      FAIL("expected throw");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2, 3]") != std::string::npos);
      CHECK(msg.find("[3, 2]") != std::string::npos);
    }
  }

  TEST_CASE("forward values do not depend on recording") {
    Rng rng(3);
    auto x = randn({4, 5}, rng);
    auto w = randn({3, 5}, rng);
    auto b = randn({3}, rng);
    x.set_requires_grad(true);
    const auto plain = softplus(linear(x, w, b));
    Tape tape;
    Tensor rec_out;
    {
      Recording rec(tape);
      rec_out = softplus(linear(x, w, b));
    }
    for (std::size_t i = 0; i < plain.size(); ++i) CHECK(plain[i] == rec_out[i]);
  }

  TEST_CASE("adam") {
    SUBCASE("default learning rate") { CHECK(AdamConfig{}.lr == 9e-5); }
    SUBCASE("zero gradient leaves parameters unchanged") {
      std::vector<Tensor> p{Tensor::from({2}, {0.3, -0.4}, true)};
      AdamState st;
      adam_step(p, st, AdamConfig{});
      CHECK(p[0][0] == 0.3);
      CHECK(p[0][1] == -0.4);
    }
    SUBCASE("quadratic bowl converges") {
      std::vector<Tensor> p{Tensor::from({2}, {1.0, 1.0}, true)};
      AdamState st;
      AdamConfig cfg;
      cfg.lr = 1e-2;
      for (int i = 0; i < 10000; ++i) {
        Tape tape;
        Tensor loss;
        {
          Recording rec(tape);
          loss = scale(sum(square(p[0])), 0.5);
        }
        p[0].zero_grad();
        tape.backward(loss);
        adam_step(p, st, cfg);
      }
      CHECK(std::hypot(p[0][0], p[0][1]) < 1e-3);
    }
  }
}
