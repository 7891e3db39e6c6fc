#include "heaplab/bdp_engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <string>

#include "heaplab/errors.hpp"

namespace heaplab {

RateSchedule::RateSchedule(RateFn birth, RateFn death)
    : birth_(std::move(birth)), death_(std::move(death)) {}

void RateSchedule::materialize(State cap, std::vector<double>& birth,
                               std::vector<double>& death) const {
  birth.resize(cap + 1);
  death.resize(cap + 1);
  for (State k = 0; k <= cap; ++k) {
    birth[k] = k == cap ? 0.0 : birth_(k);
    death[k] = k == 0 ? 0.0 : death_(k);
    if (!(birth[k] >= 0.0) || !(death[k] >= 0.0) || !std::isfinite(birth[k]) ||
        !std::isfinite(death[k])) {
      throw DomainError("rate schedule: negative or non-finite rate at state " +
                        std::to_string(k));
    }
  }
}

RateSchedule RateSchedule::zero() {
  return {[](State) { return 0.0; }, [](State) { return 0.0; }};
}

RateSchedule RateSchedule::linear_immigration(double theta) {
  return {[theta](State k) { return theta * (1.0 + static_cast<double>(k)); },
          [theta](State k) { return theta * static_cast<double>(k); }};
}

RateSchedule RateSchedule::pure_birth(double rate) {
  return {[rate](State) { return rate; }, [](State) { return 0.0; }};
}

double DiscreteDist::mean() const {
  double m = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    m += p[i] * static_cast<double>(offset + i);
  }
  return m;
}

double DiscreteDist::variance() const {
  const double m = mean();
  double v = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = static_cast<double>(offset + i) - m;
    v += p[i] * d * d;
  }
  return v;
}

namespace {

// Multi-node sweep buffers, reused across calls on the same thread.
struct SweepBuffers {
  std::vector<double> sr, si, cr, ci, gr, gi, zeros;
};

SweepBuffers& sweep_buffers() {
  thread_local SweepBuffers buffers;
  return buffers;
}

// One elimination step of the Thomas sweep for every node: from c'_{b-1},
// g_{b-1} to c'_b, g_b.
void forward_step(std::size_t nk, const double* __restrict sr, const double* __restrict si,
                  double diag, double lower, double upper, double rhs,
                  const double* __restrict pcr, const double* __restrict pci,
                  const double* __restrict pgr, const double* __restrict pgi,
                  double* __restrict ocr, double* __restrict oci, double* __restrict ogr,
                  double* __restrict ogi) {
  for (std::size_t k = 0; k < nk; ++k) {
    const double dr = sr[k] + diag - lower * pcr[k];
    const double di = si[k] - lower * pci[k];
    const double inv_norm = 1.0 / (dr * dr + di * di);
    const double inv_r = dr * inv_norm;
    const double inv_i = -di * inv_norm;
    ocr[k] = upper * inv_r;
    oci[k] = upper * inv_i;
    const double nr = rhs - lower * pgr[k];
    const double ni = -lower * pgi[k];
    ogr[k] = nr * inv_r - ni * inv_i;
    ogi[k] = nr * inv_i + ni * inv_r;
  }
}

// Truncated chain on [0, cap] with reusable Thomas-algorithm workspace.
class TruncatedChain {
 public:
  TruncatedChain(const RateSchedule& rates, State cap) : cap_(cap) {
    rates.materialize(cap, birth_, death_);
    sweep_.resize(cap + 1);
    rhs_.resize(cap + 1);
  }

  State cap() const { return cap_; }
  const std::vector<double>& birth() const { return birth_; }
  const std::vector<double>& death() const { return death_; }

  // Solves (sI - Q)^T h = e_a into `h`. Row b of the system reads
  //   -lambda_{b-1} h_{b-1} + (s + lambda_b + mu_b) h_b - mu_{b+1} h_{b+1}.
  // The matrix is column diagonally dominant for Re(s) > 0, so no pivoting.
  void solve(State a, Complex s, std::vector<Complex>& h) {
    h.resize(cap_ + 1);
    const double sr = s.real();
    const double si = s.imag();
    double prev_cr = 0.0, prev_ci = 0.0;  // c'_{b-1}
    double prev_gr = 0.0, prev_gi = 0.0;  // g_{b-1}
    for (State b = 0; b <= cap_; ++b) {
      const double lower = b == 0 ? 0.0 : -birth_[b - 1];
      const double upper = b == cap_ ? 0.0 : -death_[b + 1];
      // denom = diag - lower * c'_{b-1}
      const double dr = sr + birth_[b] + death_[b] - lower * prev_cr;
      const double di = si - lower * prev_ci;
      const double norm = dr * dr + di * di;
      if (!(norm > 0.0) || !std::isfinite(norm)) {
        throw NumericalFailure("laplace solve: singular pivot at state " +
                               std::to_string(b));
      }
      const double inv_r = dr / norm;
      const double inv_i = -di / norm;
      const double cr = upper * inv_r;
      const double ci = upper * inv_i;
      // numerator = r_b - lower * g_{b-1}
      const double nr = (b == a ? 1.0 : 0.0) - lower * prev_gr;
      const double ni = -lower * prev_gi;
      const double gr = nr * inv_r - ni * inv_i;
      const double gi = nr * inv_i + ni * inv_r;
      sweep_[b] = Complex(cr, ci);
      rhs_[b] = Complex(gr, gi);
      prev_cr = cr;
      prev_ci = ci;
      prev_gr = gr;
      prev_gi = gi;
    }
    h[cap_] = rhs_[cap_];
    for (State b = cap_; b-- > 0;) {
      h[b] = rhs_[b] - sweep_[b] * h[b + 1];
    }
  }

  // Solves for every node at once and accumulates sum_k w_k Re h_b(s_k)
  // for the two weight vectors. Nodes run in the inner loop so the
  // recurrences for different s pipeline instead of serializing.
  void solve_weighted(State a, std::span<const Complex> nodes,
                      std::span<const double> w_value,
                      std::span<const double> w_shifted,
                      std::vector<double>& value, std::vector<double>& shifted) {
    const std::size_t nk = nodes.size();
    const State n = cap_ + 1;
    SweepBuffers& ws = sweep_buffers();
    auto& sr_ = ws.sr;
    auto& si_ = ws.si;
    auto& cr_ = ws.cr;
    auto& ci_ = ws.ci;
    auto& gr_ = ws.gr;
    auto& gi_ = ws.gi;
    ws.zeros.assign(nk, 0.0);
    const double* zero_row = ws.zeros.data();
    sr_.resize(nk);
    si_.resize(nk);
    for (std::size_t k = 0; k < nk; ++k) {
      sr_[k] = nodes[k].real();
      si_[k] = nodes[k].imag();
    }
    cr_.resize(n * nk);
    ci_.resize(n * nk);
    gr_.resize(n * nk);
    gi_.resize(n * nk);
    for (State b = 0; b < n; ++b) {
      const double lower = b == 0 ? 0.0 : -birth_[b - 1];
      const double upper = b == cap_ ? 0.0 : -death_[b + 1];
      const double diag = birth_[b] + death_[b];
      const double rhs = b == a ? 1.0 : 0.0;
      const double* pcr = b == 0 ? zero_row : &cr_[(b - 1) * nk];
      const double* pci = b == 0 ? zero_row : &ci_[(b - 1) * nk];
      const double* pgr = b == 0 ? zero_row : &gr_[(b - 1) * nk];
      const double* pgi = b == 0 ? zero_row : &gi_[(b - 1) * nk];
      forward_step(nk, sr_.data(), si_.data(), diag, lower, upper, rhs, pcr, pci, pgr, pgi,
                   &cr_[b * nk], &ci_[b * nk], &gr_[b * nk], &gi_[b * nk]);
    }
    // Back substitution reuses gr_/gi_ to hold h.
    value.resize(n);
    shifted.resize(n);
    for (State b = n; b-- > 0;) {
      double* hr = &gr_[b * nk];
      double* hi = &gi_[b * nk];
      if (b + 1 < n) {
        const double* nr = &gr_[(b + 1) * nk];
        const double* ni = &gi_[(b + 1) * nk];
        const double* c_r = &cr_[b * nk];
        const double* c_i = &ci_[b * nk];
        for (std::size_t k = 0; k < nk; ++k) {
          const double tr = c_r[k] * nr[k] - c_i[k] * ni[k];
          const double ti = c_r[k] * ni[k] + c_i[k] * nr[k];
          hr[k] -= tr;
          hi[k] -= ti;
        }
      }
      double acc_v = 0.0, acc_s = 0.0;
      for (std::size_t k = 0; k < nk; ++k) {
        acc_v += w_value[k] * hr[k];
        acc_s += w_shifted[k] * hr[k];
      }
      value[b] = acc_v;
      shifted[b] = acc_s;
    }
    for (State b = 0; b < n; ++b) {
      if (!std::isfinite(value[b]) || !std::isfinite(shifted[b])) {
        throw NumericalFailure("laplace solve: singular pivot near state " +
                               std::to_string(b));
      }
    }
  }

 private:
  State cap_;
  std::vector<double> birth_;
  std::vector<double> death_;
  std::vector<Complex> sweep_;
  std::vector<Complex> rhs_;
};

State default_cap(const RateSchedule& rates, State a, State min_cap) {
  const double spread = rates.birth(a) + rates.death(a) + 1.0;
  const auto pad = static_cast<State>(std::ceil(10.0 * std::sqrt(spread)));
  return std::max(a, min_cap) + 20 + pad;
}

State initial_cap(const RateSchedule& rates, State a, const SolverConfig& cfg,
                  State min_cap) {
  State cap = cfg.truncation_cap == 0 ? default_cap(rates, a, min_cap)
                                      : cfg.truncation_cap;
  if (cfg.adaptive_cap) {
    cap = std::max(cap, std::max(a, min_cap) + 3);
  } else if (cap < a || cap < min_cap) {
    throw DomainError("truncation cap below the queried states");
  }
  return cap;
}

double top_mass(const std::vector<double>& row) {
  double m = 0.0;
  const std::size_t n = row.size();
  for (std::size_t i = n >= 3 ? n - 3 : 0; i < n; ++i) m += std::abs(row[i]);
  return m;
}

// Abate-Whitt Euler weights. Term k of the Bromwich series, Re F(s_k) with
// s_k = (A + 2 k pi i) / (2t), enters the Euler-averaged partial sums with
// weight `value[k]`; `shifted[k]` is the same average started one term later
// and is used for the error estimate.
struct EulerWeights {
  std::vector<Complex> nodes;
  std::vector<double> value;
  std::vector<double> shifted;
};

EulerWeights euler_weights(int half_terms, double precision, double t) {
  const int euler = half_terms / 2;
  const int head = half_terms - euler;
  const int count = half_terms + 2;  // k = 0..half_terms+1
  std::vector<double> binom(euler + 1);
  binom[0] = 1.0;
  for (int q = 1; q <= euler; ++q) {
    binom[q] = binom[q - 1] * (euler - q + 1) / q;
  }
  const double scale = std::ldexp(1.0, -euler);
  for (double& b : binom) b *= scale;

  // tail[j] = sum over q with head + q >= j of binom[q]
  auto average_weight = [&](int first, int k) {
    double w = 0.0;
    for (int q = 0; q <= euler; ++q) {
      if (first + q >= k) w += binom[q];
    }
    return w;
  };

  EulerWeights out;
  out.nodes.resize(count);
  out.value.resize(count);
  out.shifted.resize(count);
  const double factor = std::exp(precision / 2.0) / t;
  for (int k = 0; k < count; ++k) {
    out.nodes[k] =
        Complex(precision, 2.0 * std::numbers::pi * k) / (2.0 * t);
    const double sign = (k % 2 == 0 ? 1.0 : -1.0) * (k == 0 ? 0.5 : 1.0);
    out.value[k] = factor * sign * average_weight(head, k);
    out.shifted[k] = factor * sign * average_weight(head + 1, k);
  }
  return out;
}

struct InvertedRow {
  std::vector<double> row;
  double error_estimate = 0.0;
};

InvertedRow invert_row(TruncatedChain& chain, State a, double t,
                       int inversion_terms, double precision) {
  const EulerWeights w = euler_weights(inversion_terms / 2, precision, t);
  const State n = chain.cap() + 1;
  std::vector<double> value, shifted;
  chain.solve_weighted(a, w.nodes, w.value, w.shifted, value, shifted);
  InvertedRow out;
  out.row = std::move(value);
  for (State b = 0; b < n; ++b) {
    out.error_estimate =
        std::max(out.error_estimate, std::abs(out.row[b] - shifted[b]));
  }
  return out;
}

}  // namespace

std::vector<Complex> laplace_row_fixed(const RateSchedule& rates, State a,
                                       Complex s, State cap) {
  if (!(s.real() > 0.0)) throw DomainError("laplace_row: Re(s) must be > 0");
  if (cap < a) throw DomainError("laplace_row: cap below start state");
  TruncatedChain chain(rates, cap);
  std::vector<Complex> h;
  chain.solve(a, s, h);
  return h;
}

std::vector<Complex> laplace_row(const RateSchedule& rates, State a, Complex s,
                                 const SolverConfig& cfg) {
  if (!(s.real() > 0.0)) throw DomainError("laplace_row: Re(s) must be > 0");
  State cap = initial_cap(rates, a, cfg, 0);
  for (int round = 0;; ++round) {
    std::vector<Complex> h = laplace_row_fixed(rates, a, s, cap);
    if (!cfg.adaptive_cap) return h;
    double tail = 0.0;
    for (State b = cap - 2; b <= cap; ++b) tail += std::abs(h[b]);
    if (std::abs(s) * tail < cfg.tail_tolerance) return h;
    if (round >= cfg.max_cap_doublings) {
      throw TruncationFailure("laplace_row: boundary mass above tolerance at cap " +
                              std::to_string(cap));
    }
    cap *= 2;
  }
}

Complex continued_fraction_h00(const RateSchedule& rates, Complex s, double tol,
                               State max_depth) {
  auto evaluate = [&](State depth) {
    Complex tail = s + rates.birth(depth) + rates.death(depth);
    for (State k = depth - 1; k >= 1; --k) {
      tail = s + rates.birth(k) + rates.death(k) -
             rates.birth(k) * rates.death(k + 1) / tail;
    }
    return 1.0 / (s + rates.birth(0) - rates.birth(0) * rates.death(1) / tail);
  };
  State depth = 16;
  Complex prev = evaluate(depth);
  while (depth < max_depth) {
    depth *= 2;
    const Complex next = evaluate(depth);
    if (std::abs(next - prev) <= tol * std::max(1.0, std::abs(next))) {
      return next;
    }
    prev = next;
  }
  throw TruncationFailure("continued fraction did not converge");
}

std::vector<double> transition_row(const RateSchedule& rates, State a, double t,
                                   const SolverConfig& cfg, State min_cap) {
  if (!(t > 0.0)) throw DomainError("transition_row: t must be > 0");
  State cap = initial_cap(rates, a, cfg, min_cap);
  for (int round = 0;; ++round) {
    TruncatedChain chain(rates, cap);
    InvertedRow inv;
    int terms = cfg.inversion_terms;
    bool accurate = false;
    for (int attempt = 0; attempt < 3; ++attempt, terms += 30) {
      inv = invert_row(chain, a, t, terms, cfg.inversion_precision);
      if (inv.error_estimate <= cfg.target_abs_error) {
        accurate = true;
        break;
      }
    }
    if (!accurate) {
      throw AccuracyFailure("transition_row: inversion error estimate " +
                            std::to_string(inv.error_estimate) +
                            " above target");
    }
    std::vector<double>& row = inv.row;
    const bool truncated = top_mass(row) >= cfg.tail_tolerance;
    if (truncated && cfg.adaptive_cap) {
      if (round >= cfg.max_cap_doublings) {
        throw TruncationFailure("transition_row: boundary mass above tolerance at cap " +
                                std::to_string(cap));
      }
      cap *= 2;
      continue;
    }
    double sum = 0.0;
    for (double& p : row) {
      p = std::clamp(p, 0.0, 1.0);
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
      throw AccuracyFailure("transition_row: row sums to " + std::to_string(sum));
    }
    for (double& p : row) p /= sum;
    return row;
  }
}

double transition_prob(const RateSchedule& rates, const TransitionQuery& q,
                       const SolverConfig& cfg) {
  const std::vector<double> row = transition_row(rates, q.a, q.t, cfg, q.b);
  return q.b < row.size() ? row[q.b] : 0.0;
}

std::vector<double> uniformization_row(const RateSchedule& rates, State a,
                                       double t, const SolverConfig& cfg,
                                       State min_cap) {
  if (!(t > 0.0)) throw DomainError("uniformization_row: t must be > 0");
  State cap = initial_cap(rates, a, cfg, min_cap);
  for (int round = 0;; ++round) {
    std::vector<double> birth, death;
    rates.materialize(cap, birth, death);
    const State n = cap + 1;
    double uniform_rate = 0.0;
    for (State k = 0; k < n; ++k) {
      uniform_rate = std::max(uniform_rate, birth[k] + death[k]);
    }
    std::vector<double> row(n, 0.0);
    if (uniform_rate == 0.0) {
      row[a] = 1.0;
      return row;
    }
    const double mass = uniform_rate * t;
    const auto steps =
        static_cast<std::size_t>(std::ceil(mass + 12.0 * std::sqrt(mass) + 40.0));
    const double log_mass = std::log(mass);
    std::vector<double> v(n, 0.0), next(n, 0.0);
    v[a] = 1.0;
    for (std::size_t step = 0; step <= steps; ++step) {
      const double log_w = -mass + static_cast<double>(step) * log_mass -
                           std::lgamma(static_cast<double>(step) + 1.0);
      const double w = std::exp(log_w);
      if (w > 0.0) {
        for (State k = 0; k < n; ++k) row[k] += w * v[k];
      }
      // next = v P with P = I + Q / uniform_rate
      for (State k = 0; k < n; ++k) {
        double acc = v[k] * (1.0 - (birth[k] + death[k]) / uniform_rate);
        if (k > 0) acc += v[k - 1] * birth[k - 1] / uniform_rate;
        if (k + 1 < n) acc += v[k + 1] * death[k + 1] / uniform_rate;
        next[k] = acc;
      }
      v.swap(next);
    }
    if (top_mass(row) >= cfg.tail_tolerance && cfg.adaptive_cap) {
      if (round >= cfg.max_cap_doublings) {
        throw TruncationFailure("uniformization_row: boundary mass above tolerance");
      }
      cap *= 2;
      continue;
    }
    return row;
  }
}

std::pair<double, double> dispersion_moments(State a, double theta_disp,
                                             double t) {
  const double x = static_cast<double>(a);
  return {x + theta_disp * t,
          (2.0 * x + 1.0) * theta_disp * t + theta_disp * theta_disp * t * t};
}

namespace {

// P(lo < Z < hi) for a standard normal, accurate in either tail.
double normal_interval(double lo, double hi) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  if (lo >= 0.0) {
    return 0.5 * (std::erfc(lo * inv_sqrt2) - std::erfc(hi * inv_sqrt2));
  }
  if (hi <= 0.0) {
    return 0.5 * (std::erfc(-hi * inv_sqrt2) - std::erfc(-lo * inv_sqrt2));
  }
  return 1.0 - 0.5 * (std::erfc(-lo * inv_sqrt2) + std::erfc(hi * inv_sqrt2));
}

}  // namespace

DiscreteDist normal_approx_pmf(State a, double theta_disp, State lo, State hi,
                               double variance_scale, double t) {
  if (hi < lo) throw DomainError("normal_approx_pmf: empty support");
  if (!(theta_disp > 0.0)) {
    throw DomainError("normal_approx_pmf: theta_disp must be > 0");
  }
  const auto [mean, var] = dispersion_moments(a, theta_disp, t);
  const double sd = std::sqrt(var * variance_scale);
  DiscreteDist d;
  d.offset = lo;
  d.p.resize(hi - lo + 1);
  double sum = 0.0;
  for (State k = lo; k <= hi; ++k) {
    const double x = static_cast<double>(k);
    const double p = normal_interval((x - 0.5 - mean) / sd, (x + 0.5 - mean) / sd);
    d.p[k - lo] = p;
    sum += p;
  }
  if (!(sum > 0.0)) {
    // Support lies far in a tail; fall back to log-density weights.
    double peak = -HUGE_VAL;
    for (State k = lo; k <= hi; ++k) {
      const double z = (static_cast<double>(k) - mean) / sd;
      d.p[k - lo] = -0.5 * z * z;
      peak = std::max(peak, d.p[k - lo]);
    }
    sum = 0.0;
    for (double& p : d.p) {
      p = std::exp(p - peak);
      sum += p;
    }
  }
  for (double& p : d.p) p /= sum;
  return d;
}

}  // namespace heaplab
