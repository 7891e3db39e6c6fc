#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "heaplab/errors.hpp"
#include "heaplab/glmm.hpp"

using namespace heaplab;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Scalar reference densities, written without the library helpers.
double ref_poisson(std::size_t x, double mean) {
  return static_cast<double>(x) * std::log(mean) - mean - std::lgamma(static_cast<double>(x) + 1.0);
}

double ref_normal(double x, double var) { return -0.5 * std::log(2 * kPi * var) - x * x / (2 * var); }

double ref_inv_gamma(double x, double a, double b) {
  return a * std::log(b) - std::lgamma(a) - (a + 1) * std::log(x) - b / x;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<double> ref_weights(const std::vector<double>& g, State x) {
  const double s = g[0] * static_cast<double>(x);
  std::vector<double> up{1.0};
  for (std::size_t j = 1; j < g.size(); ++j) up.push_back(sigmoid(g[j] + s));
  up.push_back(0.0);
  std::vector<double> v;
  for (std::size_t j = 0; j + 1 < up.size(); ++j) v.push_back(up[j] - up[j + 1]);
  return v;
}

PanelData small_panel(std::mt19937_64& rng, std::size_t subjects, std::size_t repeats) {
  std::vector<std::size_t> subject;
  std::vector<State> y;
  std::uniform_int_distribution<State> count(0, 25);
  for (std::size_t i = 0; i < subjects; ++i) {
    for (std::size_t t = 0; t < repeats; ++t) {
      subject.push_back(i);
      y.push_back(count(rng));
    }
  }
  return make_intercept_panel(subject, y);
}

ModelParams random_params(std::mt19937_64& rng, const PanelData& data, const ModelSpec& spec) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ModelParams p = initial_params(data, spec);
  p.alpha(0) = 1.0 + 2.0 * u(rng);
  for (Eigen::Index i = 0; i < p.beta.rows(); ++i) p.beta(i, 0) = u(rng) - 0.5;
  p.sigma_beta(0, 0) = 0.5 + u(rng);
  p.theta_disp = 0.1 + u(rng);
  for (Eigen::Index j = 0; j < p.omega.size(); ++j) p.omega(j) = u(rng) - 0.5;
  for (Eigen::Index i = 0; i < p.xi.size(); ++i) p.xi(i) = u(rng) - 0.5;
  p.sigma2_xi = 0.2 + u(rng);
  if (!p.gamma.empty()) p.gamma = {0.2 + 0.5 * u(rng), -2.0 * u(rng), -4.0 - u(rng), -12.0 - u(rng)};
  std::uniform_int_distribution<int> shift(-3, 3);
  for (std::size_t k = 0; k < p.x.size(); ++k) {
    if (traits(spec.variant).bdp) {
      p.x[k] = static_cast<State>(std::max(0, static_cast<int>(data.y[k]) + shift(rng)));
    }
  }
  return p;
}

double ref_log_joint(const ModelParams& p, const PanelData& data, const Hyperparams& h,
                     const ModelSpec& spec) {
  const VariantTraits t = traits(spec.variant);
  double prior = ref_normal(p.alpha(0), h.alpha_var);
  prior += ref_inv_gamma(p.sigma_beta(0, 0), h.beta_df, h.beta_scale);
  if (t.bdp) prior += ref_inv_gamma(p.theta_disp, h.theta_shape, h.theta_rate);
  if (t.global_heap) prior += ref_inv_gamma(std::exp(p.omega(0)), h.theta_shape, h.theta_rate);
  if (t.subject_heap) {
    prior += ref_normal(p.omega(0), h.omega_var);
    prior += ref_inv_gamma(p.sigma2_xi, h.xi_shape, h.xi_rate);
  }
  if (t.regimes) {
    for (double g : p.gamma) prior += ref_normal(g, h.gamma_var);
  }
  double effects = 0.0;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    effects += ref_normal(p.beta(static_cast<Eigen::Index>(i), 0), p.sigma_beta(0, 0));
    if (t.subject_heap) effects += ref_normal(p.xi(static_cast<Eigen::Index>(i)), p.sigma2_xi);
  }
  double latent = 0.0, report = 0.0;
  for (std::size_t k = 0; k < data.n_obs(); ++k) {
    const std::size_t i = data.subject[k];
    latent += ref_poisson(p.x[k], std::exp(p.alpha(0) + p.beta(static_cast<Eigen::Index>(i), 0)));
    if (t.wh08) {
      const auto v = ref_weights(p.gamma, p.x[k]);
      double prob = data.y[k] == p.x[k] ? v[0] : 0.0;
      for (std::size_t j = 0; j < spec.grids.size(); ++j) {
        const State m = static_cast<State>(spec.grids[j]);
        const State lower = p.x[k] / m * m;
        const State near = (p.x[k] - lower) * 2 >= m ? lower + m : lower;
        if (near == data.y[k]) prob += v[j + 1];
      }
      report += std::log(prob);
    } else if (t.bdp) {
      HeapParams hp;
      hp.theta_disp = p.theta_disp;
      if (t.global_heap || t.subject_heap) {
        hp.theta_heap = t.global_heap ? std::exp(p.omega(0))
                                      : std::exp(p.omega(0) + p.xi(static_cast<Eigen::Index>(i)));
        hp.gamma = p.gamma;
        hp.grids = spec.grids;
      }
      const auto g = reporting_pmf(hp, p.x[k], spec.solver, data.y[k]);
      report += std::log(g[data.y[k]]);
    } else {
      report += data.y[k] == p.x[k] ? 0.0 : -std::numeric_limits<double>::infinity();
    }
  }
  return prior + effects + latent + report;
}

}  // namespace

TEST_CASE("latent intensity") {
  Eigen::RowVectorXd w(2), z(1), b(1);
  w << 1.0, 0.0;
  z << 1.0;
  b << 0.0;
  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(2);
  CHECK(latent_intensity(w, z, alpha, b) == doctest::Approx(1.0));
  alpha(0) = 2.0;
  CHECK(latent_intensity(w, z, alpha, b) == doctest::Approx(7.389056).epsilon(1e-6));
  alpha(0) = 701.0;
  CHECK_THROWS_AS(latent_intensity(w, z, alpha, b), NumericalFailure);
}

TEST_CASE("latent intensity is increasing in alpha for positive covariates") {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    Eigen::RowVectorXd w(3), z(1), b(1);
    w << 1.0, u(rng), u(rng);
    z << 1.0;
    b << u(rng) - 0.5;
    Eigen::VectorXd alpha(3);
    alpha << u(rng), u(rng) - 0.5, u(rng) - 0.5;
    const double before = latent_intensity(w, z, alpha, b);
    alpha.array() += 0.01;
    CHECK(latent_intensity(w, z, alpha, b) > before);
  }
}

TEST_CASE("subject heap intensity") {
  Eigen::VectorXd h(1), omega(1);
  h << 1.0;
  omega << 0.0;
  CHECK(subject_heap_intensity(h, omega, 0.0) == doctest::Approx(1.0));
  Eigen::VectorXd h2(2), omega2(2);
  h2 << 1.0, 1.0;
  omega2 << 0.5, -0.03;
  CHECK(subject_heap_intensity(h2, omega2, 0.0) == doctest::Approx(std::exp(0.47)));
  omega << 800.0;
  CHECK_THROWS_AS(subject_heap_intensity(h, omega, 0.0), NumericalFailure);
}

TEST_CASE("nearest multiple rounds half up") {
  CHECK(nearest_multiple(22, 5) == 20);
  CHECK(nearest_multiple(23, 5) == 25);
  CHECK(nearest_multiple(75, 50) == 100);
  CHECK(nearest_multiple(74, 50) == 50);
  CHECK(nearest_multiple(15, 10) == 20);
  CHECK(nearest_multiple(0, 5) == 0);
  CHECK(nearest_multiple(2, 5) == 0);
  for (int m : {5, 10, 50}) {
    for (State k = 0; k < 10; ++k) CHECK(nearest_multiple(k * m, m) == k * m);
  }
}

TEST_CASE("wh08 report with a forced regime") {
  Rng rng(9);
  // gamma_0 tiny and gamma_1 very negative: regime 0 always.
  const std::vector<double> truthful{1e-6, -60.0, -70.0, -80.0};
  // gamma_3 very positive: the coarsest regime always.
  const std::vector<double> coarse{1e-6, 90.0, 80.0, 70.0};
  const std::vector<int> grids{5, 10, 50};
  for (State x : {0u, 7u, 22u, 75u}) CHECK(wh08_report(x, truthful, grids, rng) == x);
  CHECK(wh08_report(75, coarse, grids, rng) == 100);
  CHECK(wh08_report(22, coarse, grids, rng) == 0);
  const std::vector<double> fives{1e-6, 60.0, -60.0, -70.0};
  CHECK(wh08_report(22, fives, grids, rng) == 20);
}

TEST_CASE("wh08 log probability sums to one over reports") {
  const std::vector<double> gamma{0.5, -5.0, -10.0, -20.0};
  const std::vector<int> grids{5, 10, 50};
  for (State x : {0u, 3u, 14u, 25u, 75u, 120u}) {
    double total = 0.0;
    for (State y = 0; y <= 200; ++y) total += std::exp(wh08_log_prob(y, x, gamma, grids));
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("log prior support") {
  Rng seed_rng(1);
  const PanelData data = make_intercept_panel({0, 0}, {3, 4});
  ModelSpec spec;
  Hyperparams hyper;
  ModelParams p = initial_params(data, spec);
  CHECK(std::isfinite(log_prior(p, hyper, spec)));
  CHECK(p.theta_disp == 1.0);
  p.gamma = {0.5, -10.0, -5.0, -20.0};
  CHECK(log_prior(p, hyper, spec) == -std::numeric_limits<double>::infinity());
  p.gamma = {-0.5, -5.0, -10.0, -20.0};
  CHECK(log_prior(p, hyper, spec) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("default hyperparameters") {
  const Hyperparams h;
  CHECK(h.alpha_var == 10.0);
  CHECK(h.gamma_var == 100.0);
  CHECK(h.beta_df == 4.0);
  CHECK(h.beta_scale == 5.0);
  CHECK(h.theta_shape == 0.001);
  CHECK(h.theta_rate == 0.001);
}

TEST_CASE("log joint matches an independent term-by-term sum") {
  std::mt19937_64 rng(2024);
  const Hyperparams hyper;
  const std::vector<Variant> variants{Variant::NoHeaping, Variant::WH08, Variant::DispersionOnly,
                                      Variant::Heaping, Variant::SubjectHeaping};
  for (int rep = 0; rep < 50; ++rep) {
    const PanelData data = small_panel(rng, 1 + rep % 3, 1 + rep % 2);
    ModelSpec spec;
    spec.variant = variants[static_cast<std::size_t>(rep) % variants.size()];
    const ModelParams p = random_params(rng, data, spec);
    const double expected = ref_log_joint(p, data, hyper, spec);
    const double got = log_joint(p, data, hyper, spec);
    CAPTURE(rep);
    CAPTURE(variant_name(spec.variant));
    REQUIRE(std::isfinite(expected));
    CHECK(got == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("log joint at the frozen chain reduces to Poisson plus priors") {
  const PanelData data = make_intercept_panel({0, 0, 1}, {4, 9, 2});
  ModelSpec spec;
  spec.variant = Variant::DispersionOnly;
  const Hyperparams hyper;
  ModelParams p = initial_params(data, spec);
  p.theta_disp = 1e-9;
  const double lp = log_prior(p, hyper, spec);
  double expected = lp;
  for (std::size_t i = 0; i < 2; ++i) expected += ref_normal(0.0, 1.0);
  for (std::size_t k = 0; k < 3; ++k) expected += ref_poisson(data.y[k], std::exp(p.alpha(0)));
  CHECK(log_joint(p, data, hyper, spec) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("log joint drops when x leaves both y and eta") {
  const PanelData data = make_intercept_panel({0}, {10});
  ModelSpec spec;
  const Hyperparams hyper;
  ModelParams p = initial_params(data, spec);
  p.alpha(0) = std::log(10.0);
  p.theta_disp = 0.5;
  p.omega(0) = std::log(2.0);
  p.gamma = {0.5, -5.0, -10.0, -20.0};
  p.x = {10};
  const double near = log_joint(p, data, hyper, spec);
  p.x = {100};
  CHECK(log_joint(p, data, hyper, spec) < near - 50.0);
}

TEST_CASE("log joint rejects mismatched dimensions") {
  const PanelData data = make_intercept_panel({0, 1}, {3, 4});
  ModelSpec spec;
  ModelParams p = initial_params(data, spec);
  p.x.pop_back();
  CHECK_THROWS_AS(log_joint(p, data, Hyperparams{}, spec), DomainError);
}

TEST_CASE("variant names round trip") {
  for (Variant v : all_variants()) CHECK(parse_variant(variant_name(v)) == v);
  CHECK(all_variants().size() == 6);
  CHECK_THROWS_AS(parse_variant("poisson"), DomainError);
}

TEST_CASE("global heaping is the subject model with degenerate xi") {
  const PanelData data = make_intercept_panel({0, 1}, {12, 30});
  ModelSpec global{Variant::Heaping};
  ModelSpec subject{Variant::SubjectHeaping};
  ModelParams p = initial_params(data, subject);
  p.omega(0) = 0.7;
  p.xi.setZero();
  ModelParams q = initial_params(data, global);
  q.omega(0) = 0.7;
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(heap_intensity(data, p, subject, i) == doctest::Approx(heap_intensity(data, q, global, i)));
  }
}
