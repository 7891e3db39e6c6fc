#pragma once

// Heaping rate schedules and the reporting distribution g(y | x).

#include <vector>

#include "heaplab/bdp_engine.hpp"

namespace heaplab {

/// Parameters of the heaping reporting process.
///
/// `gamma` holds gamma_0..gamma_J for J = grids.size() regimes and must
/// satisfy gamma_0 > 0 and gamma_1 > ... > gamma_J. An empty `gamma` with a
/// single grid is the one-grid model, where that grid carries all weight.
struct HeapParams {
  double theta_disp = 0.0;
  double theta_heap = 0.0;
  std::vector<double> gamma;
  std::vector<int> grids;

  /// Throws DomainError when an invariant is violated.
  void validate() const;
};

struct RegimeWeights {
  /// v[0] is the truthful-report weight, v[j] the weight of grids[j-1].
  std::vector<double> v;
};

/// True when gamma_0 > 0 and gamma_1 > ... > gamma_J.
bool gamma_is_ordered(const std::vector<double>& gamma);

/// 1 / (1 + e^z) without overflow.
double logistic_complement(double z);

/// Proportional-odds regime weights at true count x.
RegimeWeights regime_weights(const std::vector<double>& gamma, State x);

/// Weights for `p`, including the forced one-grid and no-grid cases.
RegimeWeights regime_weights(const HeapParams& p, State x);

/// (-k mod m) taken in {0, .., m-1}.
inline int neg_mod(State k, int m) {
  const int r = static_cast<int>(k % static_cast<State>(m));
  return r == 0 ? 0 : m - r;
}

/// Birth/death rates attracted to the heaping grids, with regime weights
/// evaluated at the true count x and held fixed over states.
RateSchedule heap_rates(const HeapParams& p, State x);

/// Starting truncation cap for rows started at x.
State heap_initial_cap(const HeapParams& p, State x, State min_cap = 0);

/// g(. | x) = P_{x,.}(1) under heap_rates(p, x), indexed from 0.
std::vector<double> reporting_pmf(const HeapParams& p, State x,
                                  const SolverConfig& cfg = {},
                                  State min_cap = 0);

struct MixtureLogLik {
  double value = 0.0;
  bool underflow = false;
};

/// log sum_x g(y | x) Poisson(x; eta) over a window outside of which the
/// terms are negligible.
MixtureLogLik mixture_loglik(State y, double eta, const HeapParams& p,
                             const SolverConfig& cfg = {});

}  // namespace heaplab
