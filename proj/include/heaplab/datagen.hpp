#pragma once

// Simulated longitudinal panels with heaped reports.

#include <cstdint>
#include <vector>

#include "heaplab/glmm.hpp"

namespace heaplab {

struct SimConfig {
  std::size_t n_subjects = 20;
  std::size_t repeats = 5;
  double alpha = 2.0;
  double sigma2_beta = 1.21;
  double theta_disp = 0.5;
  double theta_heap = 2.0;
  std::vector<double> gamma{0.5, -5.0, -10.0, -20.0};
  std::vector<int> grids{5, 10, 50};
  /// Report by nearest-multiple rounding instead of the BDP.
  bool wh08 = false;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SimulatedPanel {
  PanelData data;
  /// Ground truth in the parameterization of the heaping variant
  /// (omega = log theta_heap).
  ModelParams truth;
};

/// Subject i draws from its own stream derived from (seed, i).
SimulatedPanel simulate_panel(const SimConfig& cfg, const SolverConfig& solver = {});

/// Inverse-CDF draw from reporting_pmf(hp, x).
State sample_reporting(State x, const HeapParams& hp, Rng& rng,
                       const SolverConfig& solver = {});

}  // namespace heaplab
