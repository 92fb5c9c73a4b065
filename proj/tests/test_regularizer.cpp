#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "gorqat/regularizer.hpp"
#include "gorqat/rng.hpp"

using namespace gorqat;

TEST_CASE("gor_step") {
  SECTION("hand-evaluated step") {
    GoRState s;
    s.eta_alpha = 0.1;
    const GoRState next = gor_step(s, 2.0, 3.0);
    // grad_task = 2 - 3 = -1, grad_kd = 3 - 2 = 1 at (1, 1).
    REQUIRE(next.alpha_task == Catch::Approx(1.1).margin(1e-15));
    REQUIRE(next.alpha_kd == Catch::Approx(0.9).margin(1e-15));
    REQUIRE(next.step_count == 1);
  }
  SECTION("symmetric fixed point") {
    GoRState s;
    s.alpha_task = 0.8;
    s.alpha_kd = 0.8;
    const GoRState next = gor_step(s, 1.3, 1.3);
    REQUIRE(next.alpha_task == s.alpha_task);
    REQUIRE(next.alpha_kd == s.alpha_kd);
  }
  SECTION("clipping hits the floor exactly") {
    GoRState s;
    s.eta_alpha = 10.0;
    GorStepInfo info;
    const GoRState next = gor_step(s, 100.0, 0.0, &info);
    REQUIRE(next.alpha_task == 1e-4);
    REQUIRE(info.clipped_task);
    REQUIRE_FALSE(info.clipped_kd);
  }
  SECTION("non-finite losses abort") {
    GoRState s;
    REQUIRE_THROWS_AS(gor_step(s, std::nan(""), 1.0), DivergenceError);
    REQUIRE_THROWS_AS(gor_step(s, 1.0, std::numeric_limits<double>::infinity()),
                      DivergenceError);
  }
  SECTION("negative losses are rejected") {
    GoRState s;
    REQUIRE_THROWS_AS(gor_step(s, -0.1, 1.0), ValueError);
  }
  SECTION("corrupted scalars are a state error") {
    GoRState s;
    s.alpha_task = 0.0;
    REQUIRE_THROWS_AS(gor_step(s, 1.0, 1.0), StateError);
  }
}

TEST_CASE("equilibrium_residual") {
  GoRState s;
  SECTION("exact equilibrium") {
    s.alpha_task = 1.0;
    s.alpha_kd = 2.0;
    REQUIRE(equilibrium_residual(s, 4.0, 1.0) == 0.0);
  }
  SECTION("arithmetic") {
    REQUIRE(equilibrium_residual(s, 4.0, 1.0) == Catch::Approx(0.75));
  }
  SECTION("zero losses") {
    REQUIRE(equilibrium_residual(s, 0.0, 0.0) == 0.0);
  }
}

TEST_CASE("fixed point iff residual vanishes") {
  Rng rng(17);
  for (int rep = 0; rep < 200; ++rep) {
    GoRState s;
    s.alpha_task = rng.uniform(0.1, 3.0);
    s.alpha_kd = rng.uniform(0.1, 3.0);
    s.eta_alpha = 1e-3;
    const double l_task = rng.uniform(0.01, 5.0);
    // Pick l_kd on the equilibrium manifold half the time.
    const bool on_manifold = rep % 2 == 0;
    const double l_kd = on_manifold ? s.alpha_task * s.alpha_task * l_task /
                                          (s.alpha_kd * s.alpha_kd)
                                    : rng.uniform(0.01, 5.0);
    const double residual = equilibrium_residual(s, l_task, l_kd);
    const GoRState next = gor_step(s, l_task, l_kd);
    const double moved =
        std::abs(next.alpha_task - s.alpha_task) + std::abs(next.alpha_kd - s.alpha_kd);
    if (residual <= 1e-14) {
      REQUIRE(moved <= 1e-12);
    } else if (residual > 1e-8) {
      REQUIRE(moved > 0.0);
    }
  }
}

TEST_CASE("positivity under adversarial fuzzing") {
  Rng rng(23);
  GoRState s;
  s.eta_alpha = 1e-2;
  for (int i = 0; i < 100000; ++i) {
    // Wild loss magnitudes, including zeros and huge spikes.
    const double scale = std::pow(10.0, rng.uniform(-6.0, 6.0));
    const double l_task = rng.uniform() < 0.05 ? 0.0 : scale * rng.uniform();
    const double l_kd = rng.uniform() < 0.05 ? 0.0 : scale * rng.uniform();
    s = gor_step(s, l_task, l_kd);
    REQUIRE(s.alpha_task >= 1e-4);
    REQUIRE(s.alpha_kd >= 1e-4);
  }
}

TEST_CASE("antagonism at equal scalars") {
  Rng rng(29);
  for (int rep = 0; rep < 100; ++rep) {
    GoRState s;
    s.alpha_task = s.alpha_kd = rng.uniform(0.2, 4.0);
    const double l_task = rng.uniform(0.0, 3.0);
    const double l_kd = rng.uniform(0.0, 3.0);
    GorStepInfo info;
    (void)gor_step(s, l_task, l_kd, &info);
    // Gradients are exact negatives of each other when the scalars match.
    REQUIRE(info.grad_task == Catch::Approx(-info.grad_kd).margin(1e-12));
  }
}

TEST_CASE("effective weights depend only on the scalar ratio") {
  Rng rng(37);
  for (int rep = 0; rep < 100; ++rep) {
    GoRState s;
    s.alpha_task = rng.uniform(0.1, 5.0);
    s.alpha_kd = rng.uniform(0.1, 5.0);
    GoRState scaled = s;
    const double c = rng.uniform(0.1, 10.0);
    scaled.alpha_task *= c;
    scaled.alpha_kd *= c;
    REQUIRE(std::abs(s.weight_task() - scaled.weight_task()) <=
            1e-12 * std::abs(s.weight_task()));
    REQUIRE(std::abs(s.weight_kd() - scaled.weight_kd()) <= 1e-12 * std::abs(s.weight_kd()));
  }
}

TEST_CASE("single-scalar variant") {
  SECTION("static beta never moves") {
    SingleScalarState s;
    s.beta = 0.3;
    s.learnable = false;
    for (int i = 0; i < 100; ++i) s = single_scalar_step(s, 5.0, 0.1);
    REQUIRE(s.beta == 0.3);
    REQUIRE(s.step_count == 100);
  }
  SECTION("beta 0.5 weights both losses equally") {
    SingleScalarState s;
    REQUIRE(s.weight_task() == 0.5);
    REQUIRE(s.weight_kd() == 0.5);
  }
  SECTION("learnable variant drifts monotonically with constant unequal losses") {
    SingleScalarState s;
    s.learnable = true;
    s.eta = 1e-3;
    double prev = s.beta;
    for (int i = 0; i < 1000; ++i) {
      s = single_scalar_step(s, 4.0, 1.0);  // grad = -3, beta grows every step
      REQUIRE(s.beta > prev);
      prev = s.beta;
    }
    REQUIRE(s.beta == Catch::Approx(0.5 + 1000 * 1e-3 * 3.0));
  }
  SECTION("learnable variant clips at the floor when drifting down") {
    SingleScalarState s;
    s.learnable = true;
    s.eta = 1e-2;
    SingleScalarStepInfo info;
    bool clipped = false;
    for (int i = 0; i < 1000; ++i) {
      s = single_scalar_step(s, 1.0, 4.0, &info);  // grad = +3, beta shrinks
      clipped = clipped || info.clipped;
      REQUIRE(s.beta >= 1e-4);
    }
    REQUIRE(clipped);
    REQUIRE(s.beta == 1e-4);
  }
  SECTION("loss validation matches the pair step") {
    SingleScalarState s;
    s.learnable = true;
    REQUIRE_THROWS_AS(single_scalar_step(s, std::nan(""), 1.0), DivergenceError);
    REQUIRE_THROWS_AS(single_scalar_step(s, -1.0, 1.0), ValueError);
  }
}
