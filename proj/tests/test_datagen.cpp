#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "heaplab/datagen.hpp"
#include "heaplab/errors.hpp"

using namespace heaplab;

namespace {

// Upper tail of the chi-square distribution by the Wilson-Hilferty cube-root
// normal approximation; adequate at the 1e-3 level used here.
double chi2_upper_tail(double stat, double df) {
  const double z = (std::cbrt(stat / df) - (1.0 - 2.0 / (9.0 * df))) / std::sqrt(2.0 / (9.0 * df));
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace

TEST_CASE("paper defaults") {
  const SimConfig cfg;
  CHECK(cfg.alpha == 2.0);
  CHECK(cfg.sigma2_beta == 1.21);
  CHECK(cfg.theta_disp == 0.5);
  CHECK(cfg.theta_heap == 2.0);
  CHECK(cfg.gamma == std::vector<double>{0.5, -5.0, -10.0, -20.0});
  CHECK(cfg.repeats == 5);
}

TEST_CASE("reporting draws follow the exact pmf") {
  HeapParams hp;
  hp.theta_disp = 0.5;
  hp.theta_heap = 2.0;
  hp.grids = {5};
  const auto pmf = reporting_pmf(hp, 7);
  Rng rng(77);
  const int n = 200000;
  std::vector<double> counts(pmf.size(), 0.0);
  for (int i = 0; i < n; ++i) {
    const State y = sample_reporting(7, hp, rng);
    REQUIRE(y < counts.size());
    counts[y] += 1.0;
  }
  // Pool cells with expected count below 5 into one.
  double stat = 0.0, pooled_obs = 0.0, pooled_exp = 0.0;
  int cells = 0;
  for (std::size_t y = 0; y < pmf.size(); ++y) {
    const double expected = n * pmf[y];
    if (expected < 5.0) {
      pooled_obs += counts[y];
      pooled_exp += expected;
      continue;
    }
    stat += (counts[y] - expected) * (counts[y] - expected) / expected;
    ++cells;
  }
  if (pooled_exp > 0.0) {
    stat += (pooled_obs - pooled_exp) * (pooled_obs - pooled_exp) / pooled_exp;
    ++cells;
  }
  CHECK(chi2_upper_tail(stat, cells - 1) > 0.001);
}

TEST_CASE("frozen chain reports the true count") {
  HeapParams hp;
  hp.theta_disp = 1e-9;
  Rng rng(1);
  for (State x : {0u, 5u, 33u}) CHECK(sample_reporting(x, hp, rng) == x);
  SimConfig cfg;
  cfg.theta_disp = 0.0;
  cfg.theta_heap = 0.0;
  cfg.n_subjects = 10;
  const SimulatedPanel sim = simulate_panel(cfg);
  CHECK(sim.data.y == sim.truth.x);
}

TEST_CASE("seeded determinism") {
  HeapParams hp;
  hp.theta_disp = 0.5;
  hp.theta_heap = 2.0;
  hp.gamma = {0.5, -5.0, -10.0, -20.0};
  hp.grids = {5, 10, 50};
  Rng a(5), b(5);
  for (int i = 0; i < 200; ++i) CHECK(sample_reporting(18, hp, a) == sample_reporting(18, hp, b));
  SimConfig cfg;
  cfg.seed = 12;
  const SimulatedPanel s1 = simulate_panel(cfg);
  const SimulatedPanel s2 = simulate_panel(cfg);
  CHECK(s1.data.y == s2.data.y);
  CHECK(s1.truth.x == s2.truth.x);
  cfg.seed = 13;
  CHECK(simulate_panel(cfg).data.y != s1.data.y);
}

TEST_CASE("panel shape and ground truth") {
  SimConfig cfg;
  cfg.n_subjects = 7;
  const SimulatedPanel sim = simulate_panel(cfg);
  CHECK(sim.data.n_subjects() == 7);
  CHECK(sim.data.n_obs() == 35);
  CHECK(sim.truth.omega(0) == doctest::Approx(std::log(2.0)));
  CHECK(sim.truth.gamma == cfg.gamma);
  CHECK(sim.truth.beta.rows() == 7);
}

TEST_CASE("latent mean matches the lognormal mixing identity") {
  SimConfig cfg;
  cfg.n_subjects = 4000;
  cfg.theta_disp = 0.0;
  cfg.theta_heap = 0.0;
  cfg.seed = 3;
  const SimulatedPanel sim = simulate_panel(cfg);
  double mean = 0.0;
  for (State x : sim.truth.x) mean += static_cast<double>(x);
  mean /= static_cast<double>(sim.truth.x.size());
  const double expected = std::exp(cfg.alpha + cfg.sigma2_beta / 2.0);
  // Between-subject sd of e^{alpha + beta} dominates the error.
  const double sd = expected * std::sqrt(std::exp(cfg.sigma2_beta) - 1.0) / std::sqrt(4000.0);
  CHECK(std::abs(mean - expected) < 4.0 * sd);
}

TEST_CASE("heaped reports favour multiples of five") {
  // Exact share of positive reports on a multiple of five: quadrature over
  // the random intercept, then the Poisson latent count and g(y | x).
  const SimConfig cfg;
  HeapParams hp;
  hp.theta_disp = cfg.theta_disp;
  hp.theta_heap = cfg.theta_heap;
  hp.gamma = cfg.gamma;
  hp.grids = cfg.grids;
  const State max_x = 600;
  std::vector<double> px(max_x + 1, 0.0);
  const double sd = std::sqrt(cfg.sigma2_beta);
  const int nodes = 801;
  for (int q = 0; q < nodes; ++q) {
    const double z = -8.0 + 16.0 * q / (nodes - 1);
    const double wz = std::exp(-0.5 * z * z) / std::sqrt(2.0 * 3.14159265358979323846) * 16.0 / (nodes - 1);
    const double eta = std::exp(cfg.alpha + sd * z);
    for (State x = 0; x <= max_x; ++x) {
      px[x] += wz * std::exp(static_cast<double>(x) * std::log(eta) - eta -
                             std::lgamma(static_cast<double>(x) + 1.0));
    }
  }
  double positive = 0.0, fives = 0.0;
  for (State x = 0; x <= max_x; ++x) {
    if (px[x] < 1e-14) continue;
    const auto g = reporting_pmf(hp, x);
    for (State y = 1; y < g.size(); ++y) {
      positive += px[x] * g[y];
      if (y % 5 == 0) fives += px[x] * g[y];
    }
  }
  const double exact = fives / positive;
  CHECK(exact > 0.2);
  CHECK(exact == doctest::Approx(0.2774).epsilon(0.01));

  double pos = 0.0, hits = 0.0;
  SimConfig sim_cfg;
  sim_cfg.n_subjects = 500;
  for (std::uint64_t seed = 1; seed <= 4; ++seed) {
    sim_cfg.seed = seed;
    for (State y : simulate_panel(sim_cfg).data.y) {
      if (y == 0) continue;
      pos += 1.0;
      hits += y % 5 == 0;
    }
  }
  CHECK(std::abs(hits / pos - exact) < 0.02);
}

TEST_CASE("invalid configurations") {
  SimConfig cfg;
  cfg.gamma = {0.5, -10.0, -5.0, -20.0};
  CHECK_THROWS_AS(cfg.validate(), DomainError);
  cfg = SimConfig{};
  cfg.n_subjects = 0;
  CHECK_THROWS_AS(cfg.validate(), DomainError);
}
