#pragma once

// Transition probabilities of a general birth-death process on the
// nonnegative integers. The primary route solves the Laplace-transformed
// forward equations on a truncated state space and inverts the transform
// numerically; uniformization provides an independent time-domain route.

#include <complex>
#include <cstddef>
#include <functional>
#include <utility>
#include <vector>

namespace heaplab {

using State = std::size_t;
using Complex = std::complex<double>;

/// Birth rates lambda_k (k >= 0) and death rates mu_k (k >= 1) given as
/// rules over states. death(0) is always 0.
class RateSchedule {
 public:
  using RateFn = std::function<double(State)>;

  RateSchedule(RateFn birth, RateFn death);

  double birth(State k) const { return birth_(k); }
  double death(State k) const { return k == 0 ? 0.0 : death_(k); }

  /// Evaluates both sequences on [0, cap]. The birth rate at `cap` is
  /// zeroed so the truncated chain reflects and conserves mass.
  /// Throws DomainError on a negative or non-finite rate.
  void materialize(State cap, std::vector<double>& birth,
                   std::vector<double>& death) const;

  static RateSchedule zero();
  /// lambda_k = theta (1 + k), mu_k = theta k.
  static RateSchedule linear_immigration(double theta);
  /// lambda_k = rate, mu_k = 0.
  static RateSchedule pure_birth(double rate);

 private:
  RateFn birth_;
  RateFn death_;
};

struct TransitionQuery {
  State a = 0;
  State b = 0;
  double t = 1.0;
};

struct SolverConfig {
  /// Initial truncation cap; 0 selects a default from the rates at `a`.
  State truncation_cap = 0;
  /// When false the cap is used as given and never doubled.
  bool adaptive_cap = true;
  int max_cap_doublings = 6;
  /// Mass allowed on the top three states of the truncated chain.
  double tail_tolerance = 1e-10;
  /// Points on the Bromwich contour, counting conjugate pairs twice:
  /// 2 x (15 series terms + 15 Euler-averaged terms).
  int inversion_terms = 60;
  /// Contour abscissa parameter A; discretization error is about e^{-A}.
  double inversion_precision = 24.0;
  double target_abs_error = 1e-8;
};

/// A pmf on the contiguous support [offset, offset + p.size()).
struct DiscreteDist {
  State offset = 0;
  std::vector<double> p;

  double at(State k) const {
    return (k < offset || k - offset >= p.size()) ? 0.0 : p[k - offset];
  }
  State last() const { return offset + p.size() - 1; }
  double mean() const;
  double variance() const;
};

/// Solution of the truncated tridiagonal system (sI - Q)^T h = e_a at a
/// fixed cap (no adaptation). Requires Re(s) > 0.
std::vector<Complex> laplace_row_fixed(const RateSchedule& rates, State a,
                                       Complex s, State cap);

/// h_{a,b}(s) for b = 0..cap. With cfg.adaptive_cap the cap doubles until
/// |s| times the top-three magnitude is below the tail tolerance.
std::vector<Complex> laplace_row(const RateSchedule& rates, State a, Complex s,
                                 const SolverConfig& cfg = {});

/// Bottom-up evaluation of the continued fraction for h_00(s), deepening
/// until two successive depths agree to `tol`.
Complex continued_fraction_h00(const RateSchedule& rates, Complex s,
                               double tol = 1e-15,
                               State max_depth = State{1} << 20);

/// P_{a,b}(t) for b = 0..cap by Euler-accelerated Bromwich inversion of
/// laplace_row. Entries lie in [0, 1] and sum to one.
std::vector<double> transition_row(const RateSchedule& rates, State a, double t,
                                   const SolverConfig& cfg = {},
                                   State min_cap = 0);

double transition_prob(const RateSchedule& rates, const TransitionQuery& q,
                       const SolverConfig& cfg = {});

/// Row of exp(Qt) by uniformization on the same truncated chain.
std::vector<double> uniformization_row(const RateSchedule& rates, State a,
                                       double t, const SolverConfig& cfg = {},
                                       State min_cap = 0);

/// Mean and variance of the linear immigration process lambda_k = theta(1+k),
/// mu_k = theta k started at a.
std::pair<double, double> dispersion_moments(State a, double theta_disp,
                                             double t = 1.0);

/// Discretized normal with the dispersion moments (variance optionally
/// scaled), restricted to [lo, hi] and renormalized.
DiscreteDist normal_approx_pmf(State a, double theta_disp, State lo, State hi,
                               double variance_scale = 1.0, double t = 1.0);

}  // namespace heaplab
