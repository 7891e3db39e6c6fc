#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "heaplab/distributions.hpp"
#include "heaplab/errors.hpp"
#include "heaplab/heap_report.hpp"

using namespace heaplab;

namespace {

HeapParams single_grid(double disp, double heap, int m) {
  HeapParams p;
  p.theta_disp = disp;
  p.theta_heap = heap;
  p.grids = {m};
  return p;
}

HeapParams regimes(double disp, double heap, std::vector<double> gamma) {
  HeapParams p;
  p.theta_disp = disp;
  p.theta_heap = heap;
  p.gamma = std::move(gamma);
  p.grids = {5, 10, 50};
  return p;
}

std::vector<double> random_ordered_gamma(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> slope(0.01, 3.0), first(-30.0, 10.0),
      gap(0.01, 20.0);
  std::vector<double> g{slope(rng), first(rng)};
  for (int j = 0; j < 2; ++j) g.push_back(g.back() - gap(rng));
  return g;
}

}  // namespace

TEST_CASE("regime_weights examples") {
  // Frozen from direct logistic evaluation (numpy).
  const RegimeWeights w = regime_weights({0.5, -10.0, -20.0, -40.0}, 14);
  REQUIRE(w.v.size() == 4);
  CHECK(w.v[0] == doctest::Approx(0.9525741268224334).epsilon(1e-12));
  CHECK(w.v[1] == doctest::Approx(0.04742361285326868).epsilon(1e-10));
  CHECK(w.v[2] < 1e-5);
  CHECK(w.v[2] == doctest::Approx(2.2603242932905943e-06).epsilon(1e-8));

  // gamma_1 + gamma_0 x = 0 at the midpoint
  const RegimeWeights mid = regime_weights({0.5, -5.0, -10.0, -20.0}, 10);
  CHECK(mid.v[0] == doctest::Approx(0.5));
}

TEST_CASE("regime_weights form a distribution for every x") {
  std::mt19937_64 rng(11);
  for (int rep = 0; rep < 100; ++rep) {
    const auto gamma = random_ordered_gamma(rng);
    for (State x = 0; x <= 1000; ++x) {
      const RegimeWeights w = regime_weights(gamma, x);
      double total = 0.0;
      for (double v : w.v) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
        total += v;
      }
      REQUIRE(std::abs(total - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("regime_weights rejects unordered gamma") {
  CHECK_THROWS_AS(regime_weights({0.5, -10.0, -5.0, -40.0}, 3), DomainError);
  CHECK_THROWS_AS(regime_weights({-0.5, -10.0, -20.0, -40.0}, 3), DomainError);
  CHECK(logistic_complement(800.0) >= 0.0);
  CHECK(logistic_complement(-800.0) == 1.0);
}

TEST_CASE("heap_rates single grid") {
  const RateSchedule r = heap_rates(single_grid(1.0, 2.5, 5), 33);
  CHECK(r.birth(33) == doctest::Approx(41.5));
  CHECK(r.death(33) == doctest::Approx(38.0));
  CHECK(r.birth(35) == doctest::Approx(36.0));
  CHECK(r.death(35) == doctest::Approx(35.0));
  CHECK(r.death(0) == 0.0);

  const RateSchedule lin = heap_rates(single_grid(0.7, 0.0, 5), 33);
  for (State k = 0; k < 40; ++k) {
    CHECK(lin.birth(k) == doctest::Approx(0.7 * (1.0 + k)));
    CHECK(lin.death(k) == doctest::Approx(0.7 * k));
  }
}

TEST_CASE("heap contributions vanish at common multiples of the active grid") {
  const HeapParams p = single_grid(0.0, 3.0, 10);
  const RateSchedule r = heap_rates(p, 20);
  for (State k = 0; k <= 200; k += 10) {
    CHECK(r.birth(k) == 0.0);
    CHECK(r.death(k) == 0.0);
  }
  CHECK(neg_mod(36, 5) == 4);
  CHECK(neg_mod(35, 5) == 0);
}

TEST_CASE("reporting_pmf basics") {
  SUBCASE("frozen chain") {
    const auto g = reporting_pmf(single_grid(0.0, 0.0, 5), 12);
    CHECK(g[12] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("dispersion-only moments") {
    const auto g = reporting_pmf(single_grid(0.5, 0.0, 5), 7);
    DiscreteDist d{0, g};
    CHECK(d.mean() == doctest::Approx(7.5).epsilon(1e-6));
    CHECK(d.variance() == doctest::Approx(7.75).epsilon(1e-6));
    double total = 0.0;
    for (double v : g) total += v;
    CHECK(std::abs(total - 1.0) < 1e-6);
  }
  SUBCASE("heaps at 5 and 10 from x = 7") {
    const HeapParams p = single_grid(0.5, 2.0, 5);
    const auto g = reporting_pmf(p, 7);
    // Frozen from a dense matrix exponential (scipy.linalg.expm).
    CHECK(g[5] == doctest::Approx(0.31466).epsilon(1e-4));
    CHECK(g[10] == doctest::Approx(0.143127).epsilon(1e-4));
    for (State y : {5u, 10u}) {
      CHECK(g[y] > g[y - 1]);
      CHECK(g[y] > g[y + 1]);
    }
    const auto u = uniformization_row(heap_rates(p, 7), 7, 1.0,
                                      SolverConfig{.truncation_cap = g.size() - 1});
    for (State y = 0; y < g.size(); ++y) CHECK(std::abs(g[y] - u[y]) < 1e-6);
  }
}

TEST_CASE("reporting_pmf tracks the normal approximation without heaping") {
  for (State x : {5u, 20u, 50u}) {
    for (double theta : {0.5, 1.0}) {
      const auto g = reporting_pmf(single_grid(theta, 0.0, 5), x);
      const DiscreteDist exact{0, g};
      const DiscreteDist approx = normal_approx_pmf(x, theta, 0, g.size() - 1);
      const double mean_gap = approx.mean() - exact.mean();
      const double var_gap = (approx.variance() - exact.variance()) / exact.variance();
      if (x == 5 && theta == 1.0) {
        // sd 3.46 around 6: truncating the normal at zero shifts it visibly.
        // Values frozen from scipy (interval-discretized, renormalized).
        CHECK(mean_gap == doctest::Approx(0.2467854).epsilon(1e-5));
        CHECK(var_gap == doctest::Approx(-0.1327326).epsilon(1e-5));
        continue;
      }
      CHECK(std::abs(mean_gap) < 0.05);
      CHECK(std::abs(var_gap) < 0.05);
    }
  }
}

TEST_CASE("two active regimes can pull asymmetrically") {
  const auto g = reporting_pmf(regimes(0.5, 1.5, {1.0, -5.0, -10.0, -20.0}), 14);
  CHECK(std::abs(g[10] - g[20]) > 1e-3);
}

TEST_CASE("mixture_loglik") {
  SUBCASE("degenerate reporting recovers the Poisson likelihood") {
    const auto m = mixture_loglik(6, 4.0, single_grid(1e-7, 0.0, 5));
    CHECK(m.value == doctest::Approx(log_poisson(6, 4.0)).epsilon(1e-5));
    CHECK_FALSE(m.underflow);
  }
  SUBCASE("brute force over x <= 60") {
    const HeapParams p = single_grid(0.5, 0.0, 5);
    double brute = 0.0;
    for (State x = 0; x <= 60; ++x) {
      const auto g = reporting_pmf(p, x);
      brute += std::exp(-1.0 - std::lgamma(x + 1.0)) * g[0];
    }
    CHECK(mixture_loglik(0, 1.0, p).value == doctest::Approx(std::log(brute)).epsilon(1e-10));
  }
  SUBCASE("intensity near the report is preferred") {
    const HeapParams p = regimes(0.5, 2.0, {0.5, -5.0, -10.0, -20.0});
    CHECK(mixture_loglik(10, 10.0, p).value > mixture_loglik(10, 100.0, p).value);
  }
}

TEST_CASE("HeapParams validation") {
  HeapParams p = regimes(0.5, 2.0, {0.5, -5.0, -10.0, -20.0});
  CHECK_NOTHROW(p.validate());
  p.grids = {5, 5, 50};
  CHECK_THROWS_AS(p.validate(), DomainError);
  p = regimes(-0.1, 2.0, {0.5, -5.0, -10.0, -20.0});
  CHECK_THROWS_AS(p.validate(), DomainError);
  p = regimes(0.5, 2.0, {0.5, -5.0});
  CHECK_THROWS_AS(p.validate(), DomainError);
}
