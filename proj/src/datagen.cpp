#include "heaplab/datagen.hpp"

#include <cmath>
#include <map>
#include <random>

#include "heaplab/errors.hpp"

namespace heaplab {

void SimConfig::validate() const {
  if (n_subjects == 0 || repeats == 0) {
    throw DomainError("simulation: subjects and repeats must be positive");
  }
  if (!(sigma2_beta >= 0.0) || !(theta_disp >= 0.0) || !(theta_heap >= 0.0)) {
    throw DomainError("simulation: variances and intensities must be nonnegative");
  }
  HeapParams hp{theta_disp, theta_heap, gamma, grids};
  hp.validate();
}

State sample_reporting(State x, const HeapParams& hp, Rng& rng, const SolverConfig& solver) {
  if (hp.theta_disp < 1e-8 && hp.theta_heap < 1e-8) return x;
  const std::vector<double> g = reporting_pmf(hp, x, solver);
  return sample_index(g, rng);
}

SimulatedPanel simulate_panel(const SimConfig& cfg, const SolverConfig& solver) {
  cfg.validate();
  const HeapParams hp{cfg.theta_disp, cfg.theta_heap, cfg.gamma, cfg.grids};
  std::map<State, std::vector<double>> rows;

  std::vector<std::size_t> subject;
  std::vector<State> x, y;
  Eigen::VectorXd beta(static_cast<Eigen::Index>(cfg.n_subjects));
  const double sd = std::sqrt(cfg.sigma2_beta);
  for (std::size_t i = 0; i < cfg.n_subjects; ++i) {
    Rng rng(derive_seed(cfg.seed, i));
    beta(static_cast<Eigen::Index>(i)) = sd * sample_standard_normal(rng);
    std::poisson_distribution<State> poisson(
        std::exp(cfg.alpha + beta(static_cast<Eigen::Index>(i))));
    for (std::size_t t = 0; t < cfg.repeats; ++t) {
      const State xt = poisson(rng);
      State yt;
      if (cfg.wh08) {
        yt = wh08_report(xt, cfg.gamma, cfg.grids, rng);
      } else if (hp.theta_disp < 1e-8 && hp.theta_heap < 1e-8) {
        yt = xt;
      } else {
        auto it = rows.find(xt);
        if (it == rows.end()) it = rows.emplace(xt, reporting_pmf(hp, xt, solver)).first;
        yt = sample_index(it->second, rng);
      }
      subject.push_back(i);
      x.push_back(xt);
      y.push_back(yt);
    }
  }

  SimulatedPanel out;
  out.data = make_intercept_panel(subject, y);
  ModelParams& truth = out.truth;
  truth.alpha = Eigen::VectorXd::Constant(1, cfg.alpha);
  truth.beta = beta;
  truth.sigma_beta = Eigen::MatrixXd::Constant(1, 1, cfg.sigma2_beta);
  truth.theta_disp = cfg.theta_disp;
  truth.omega = Eigen::VectorXd::Constant(1, std::log(cfg.theta_heap));
  truth.sigma2_xi = 1.0;
  truth.gamma = cfg.gamma;
  truth.x = x;
  return out;
}

}  // namespace heaplab
