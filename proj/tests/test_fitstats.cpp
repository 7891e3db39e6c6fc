#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "heaplab/errors.hpp"
#include "heaplab/fitstats.hpp"

using namespace heaplab;

namespace {

double neg2_log_poisson(State y, double mean) {
  return -2.0 * (static_cast<double>(y) * std::log(mean) - mean -
                 std::lgamma(static_cast<double>(y) + 1.0));
}

Chain constant_chain(const ModelParams& p, Variant v, std::size_t n) {
  Chain c;
  c.variant = v;
  for (std::size_t s = 0; s < n; ++s) {
    c.samples.push_back(p);
    c.iteration.push_back(s);
  }
  return c;
}

}  // namespace

TEST_CASE("quantiles interpolate between order statistics") {
  const std::vector<double> v{4.0, 1.0, 3.0, 2.0, 5.0};
  CHECK(quantile(v, 0.0) == 1.0);
  CHECK(quantile(v, 1.0) == 5.0);
  CHECK(quantile(v, 0.5) == 3.0);
  CHECK(quantile(v, 0.125) == doctest::Approx(1.5));
  double prev = quantile(v, 0.0);
  for (double level = 0.05; level <= 1.0; level += 0.05) {
    const double q = quantile(v, level);
    CHECK(q >= prev);
    prev = q;
  }
}

TEST_CASE("constant chain summaries collapse to the constant") {
  const PanelData data = make_intercept_panel({0, 1}, {10, 30});
  ModelSpec spec;
  ModelParams p = initial_params(data, spec);
  p.gamma = {0.5, -5.0, -10.0, -20.0};
  p.theta_disp = 0.7;
  const FitReport r = summarize(constant_chain(p, Variant::Heaping, 20), data);
  const ParamSummary& t = r.find("theta_disp");
  CHECK(t.mean == doctest::Approx(0.7));
  CHECK(t.q025 == doctest::Approx(0.7));
  CHECK(t.q975 == doctest::Approx(0.7));
  CHECK(t.var == doctest::Approx(0.0));
  REQUIRE(r.midpoints.size() == 3);
  CHECK(r.midpoints[0].mean == doctest::Approx(10.0));
  CHECK(r.midpoints[1].mean == doctest::Approx(20.0));
  CHECK(r.midpoints[2].mean == doctest::Approx(40.0));
  CHECK_THROWS_AS(r.find("nonexistent"), DomainError);
}

TEST_CASE("constant chain has no effective parameters") {
  const PanelData data = make_intercept_panel({0, 0, 1}, {4, 10, 15});
  ModelSpec spec;
  spec.variant = Variant::Heaping;
  ModelParams p = initial_params(data, spec);
  p.theta_disp = 0.4;
  p.omega(0) = std::log(1.5);
  p.gamma = {0.5, -5.0, -10.0, -20.0};
  const DicResult r = dic(constant_chain(p, spec.variant, 5), data, spec);
  CHECK(std::abs(r.p_d) < 1e-9);
  CHECK(r.dic == doctest::Approx(deviance(p, data, spec)).epsilon(1e-12));
}

TEST_CASE("two-sample dic by hand") {
  const PanelData data = make_intercept_panel({0}, {3});
  ModelSpec spec;
  spec.variant = Variant::NoHeaping;
  ModelParams p = initial_params(data, spec);
  Chain chain;
  chain.variant = spec.variant;
  for (double eta : {2.0, 4.0}) {
    p.alpha(0) = std::log(eta);
    chain.samples.push_back(p);
    chain.iteration.push_back(chain.iteration.size());
  }
  const double d_bar = 0.5 * (neg2_log_poisson(3, 2.0) + neg2_log_poisson(3, 4.0));
  const double d_hat = neg2_log_poisson(3, std::sqrt(8.0));
  const DicResult r = dic(chain, data, spec);
  CHECK(r.d_bar == doctest::Approx(d_bar).epsilon(1e-12));
  CHECK(r.d_hat == doctest::Approx(d_hat).epsilon(1e-12));
  CHECK(r.p_d == doctest::Approx(d_bar - d_hat).epsilon(1e-12));
  CHECK(r.dic == doctest::Approx(2 * d_bar - d_hat).epsilon(1e-12));

  std::reverse(chain.samples.begin(), chain.samples.end());
  CHECK(dic(chain, data, spec).dic == doctest::Approx(r.dic).epsilon(1e-14));
}

TEST_CASE("dic rejects mismatched or empty chains") {
  const PanelData data = make_intercept_panel({0}, {3});
  ModelSpec spec;
  spec.variant = Variant::NoHeaping;
  const ModelParams p = initial_params(data, spec);
  const Chain chain = constant_chain(p, Variant::NoHeaping, 2);
  ModelSpec other;
  other.variant = Variant::Heaping;
  CHECK_THROWS_AS(dic(chain, data, other), DomainError);
  CHECK_THROWS_AS(dic(Chain{Variant::NoHeaping}, data, spec), DomainError);
}

TEST_CASE("sspe of fixed predictions") {
  CHECK(sspe(std::vector<State>{10}, std::vector<double>{8.0}) == doctest::Approx(4.0));
  CHECK(sspe(std::vector<State>{1, 5, 9}, std::vector<double>{1.0, 5.0, 9.0}) == 0.0);
  CHECK_THROWS_AS(sspe(std::vector<State>{1}, std::vector<double>{}), DomainError);
}

TEST_CASE("predictive means under a frozen report equal the latent counts") {
  const PanelData data = make_intercept_panel({0, 0, 1}, {4, 10, 15});
  ModelSpec spec;
  spec.variant = Variant::DispersionOnly;
  ModelParams p = initial_params(data, spec);
  p.theta_disp = 1e-10;
  const auto means = predictive_means(constant_chain(p, spec.variant, 10), data, spec);
  CHECK(means == std::vector<double>{4.0, 10.0, 15.0});
  CHECK(sspe(constant_chain(p, spec.variant, 10), data, spec) == 0.0);
}

TEST_CASE("replicate summary") {
  std::vector<FitReport> reports(4);
  const double means[] = {1.8, 2.0, 2.2, 2.6};
  for (std::size_t r = 0; r < 4; ++r) {
    reports[r].params.push_back({"alpha[intercept]", means[r], 0.04, means[r] - 0.3, means[r] + 0.3});
  }
  const ReplicateSummary s = summarize_replicates("alpha[intercept]", 2.0, reports);
  CHECK(s.mean_of_means == doctest::Approx(2.15));
  CHECK(s.mean_of_vars == doctest::Approx(0.04));
  CHECK(s.mse == doctest::Approx((0.04 + 0.0 + 0.04 + 0.36) / 4.0));
  CHECK(s.covered == 3);
  CHECK(s.replicates == 4);
}

TEST_CASE("pooling keeps every sample") {
  const PanelData data = make_intercept_panel({0}, {3});
  ModelSpec spec;
  spec.variant = Variant::NoHeaping;
  const ModelParams p = initial_params(data, spec);
  const Chain pooled = pool_chains({constant_chain(p, spec.variant, 3), constant_chain(p, spec.variant, 4)});
  CHECK(pooled.samples.size() == 7);
  CHECK_THROWS_AS(pool_chains({constant_chain(p, Variant::NoHeaping, 1),
                               constant_chain(p, Variant::Heaping, 1)}),
                  DomainError);
}
