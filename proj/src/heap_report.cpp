#include "heaplab/heap_report.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "heaplab/distributions.hpp"
#include "heaplab/errors.hpp"

namespace heaplab {

void HeapParams::validate() const {
  if (!(theta_disp >= 0.0) || !(theta_heap >= 0.0)) {
    throw DomainError("heap params: theta_disp and theta_heap must be >= 0");
  }
  for (std::size_t j = 0; j < grids.size(); ++j) {
    if (grids[j] < 2) throw DomainError("heap params: grid spacing must be >= 2");
    if (j > 0 && grids[j] <= grids[j - 1]) {
      throw DomainError("heap params: grids must be strictly increasing");
    }
  }
  if (gamma.empty()) {
    if (grids.size() > 1) {
      throw DomainError("heap params: several grids need regime parameters");
    }
    return;
  }
  if (gamma.size() != grids.size() + 1) {
    throw DomainError("heap params: gamma must have one entry more than grids");
  }
  if (!gamma_is_ordered(gamma)) {
    throw DomainError("heap params: gamma ordering violated");
  }
}

bool gamma_is_ordered(const std::vector<double>& gamma) {
  if (gamma.size() < 2 || !(gamma[0] > 0.0)) return false;
  for (std::size_t j = 2; j < gamma.size(); ++j) {
    if (!(gamma[j - 1] > gamma[j])) return false;
  }
  return true;
}

double logistic_complement(double z) {
  if (z > 30.0) {
    const double e = std::exp(-z);
    return e / (1.0 + e);
  }
  return 1.0 / (1.0 + std::exp(z));
}

namespace {

// L(lo) - L(hi) for lo < hi where L = logistic_complement, computed on
// whichever side keeps the operands small.
double logistic_gap(double lo, double hi) {
  if (hi <= 0.0) {
    // Both near 1: use 1 - L(z) = L(-z).
    return logistic_complement(-hi) - logistic_complement(-lo);
  }
  return logistic_complement(lo) - logistic_complement(hi);
}

}  // namespace

RegimeWeights regime_weights(const std::vector<double>& gamma, State x) {
  if (!gamma_is_ordered(gamma)) {
    throw DomainError("regime_weights: gamma ordering violated");
  }
  const std::size_t regimes = gamma.size() - 1;
  const double shift = gamma[0] * static_cast<double>(x);
  RegimeWeights w;
  w.v.resize(regimes + 1);
  w.v[0] = logistic_complement(gamma[1] + shift);
  for (std::size_t j = 1; j < regimes; ++j) {
    w.v[j] = logistic_gap(gamma[j + 1] + shift, gamma[j] + shift);
  }
  w.v[regimes] = logistic_complement(-(gamma[regimes] + shift));
  for (double& v : w.v) v = std::clamp(v, 0.0, 1.0);
  return w;
}

RegimeWeights regime_weights(const HeapParams& p, State x) {
  if (!p.gamma.empty()) return regime_weights(p.gamma, x);
  RegimeWeights w;
  if (p.grids.empty()) {
    w.v = {1.0};
  } else {
    w.v = {0.0, 1.0};
  }
  return w;
}

RateSchedule heap_rates(const HeapParams& p, State x) {
  p.validate();
  const RegimeWeights w = regime_weights(p, x);
  std::vector<double> heap_weight;
  std::vector<int> grids;
  for (std::size_t j = 0; j < p.grids.size(); ++j) {
    const double weight = p.theta_heap * w.v[j + 1];
    if (weight > 0.0) {
      heap_weight.push_back(weight);
      grids.push_back(p.grids[j]);
    }
  }
  const double disp = p.theta_disp;
  auto birth = [disp, heap_weight, grids](State k) {
    double r = disp * (1.0 + static_cast<double>(k));
    for (std::size_t j = 0; j < grids.size(); ++j) {
      r += heap_weight[j] * static_cast<double>(k % static_cast<State>(grids[j]));
    }
    return r;
  };
  auto death = [disp, heap_weight, grids](State k) {
    double r = disp * static_cast<double>(k);
    for (std::size_t j = 0; j < grids.size(); ++j) {
      r += heap_weight[j] * static_cast<double>(neg_mod(k, grids[j]));
    }
    return r;
  };
  return {birth, death};
}

State heap_initial_cap(const HeapParams& p, State x, State min_cap) {
  // Grids with negligible attraction do not widen the starting cap; the tail
  // check in transition_row widens it if needed.
  State anchor = x;
  const RegimeWeights w = regime_weights(p, x);
  for (std::size_t j = 0; j < p.grids.size(); ++j) {
    if (p.theta_heap * w.v[j + 1] < 1e-6) continue;
    const auto step = static_cast<State>(p.grids[j]);
    anchor = std::max(anchor, (x / step + 1) * step);
  }
  const double xd = static_cast<double>(x);
  const double var = (2.0 * xd + 1.0) * p.theta_disp + p.theta_disp * p.theta_disp;
  const auto pad = static_cast<State>(std::ceil(10.0 * std::sqrt(var)));
  return std::max({anchor, x + pad, min_cap + 3}) + 20;
}

std::vector<double> reporting_pmf(const HeapParams& p, State x,
                                  const SolverConfig& cfg, State min_cap) {
  SolverConfig local = cfg;
  if (local.truncation_cap == 0) {
    local.truncation_cap = heap_initial_cap(p, x, min_cap);
  }
  return transition_row(heap_rates(p, x), x, 1.0, local, min_cap);
}

MixtureLogLik mixture_loglik(State y, double eta, const HeapParams& p,
                             const SolverConfig& cfg) {
  if (!(eta > 0.0)) throw DomainError("mixture_loglik: eta must be > 0");
  const double root = std::sqrt(eta);
  const double lo_eta = std::max(0.0, std::floor(eta - 10.0 * root - 10.0));
  const double hi_eta = std::ceil(eta + 10.0 * root + 10.0);
  const double yd = static_cast<double>(y);
  const auto half_width = static_cast<State>(
      10 + std::ceil(10.0 * std::sqrt((2.0 * yd + 1.0) * p.theta_disp)));
  std::set<State> support;
  for (auto x = static_cast<State>(lo_eta); x <= static_cast<State>(hi_eta); ++x) {
    support.insert(x);
  }
  for (State x = y > half_width ? y - half_width : 0; x <= y + half_width; ++x) {
    support.insert(x);
  }

  std::vector<double> terms;
  terms.reserve(support.size());
  for (State x : support) {
    const std::vector<double> g = reporting_pmf(p, x, cfg, y);
    const double gy = y < g.size() ? g[y] : 0.0;
    if (gy > 0.0) terms.push_back(std::log(gy) + log_poisson(x, eta));
  }
  MixtureLogLik out;
  if (terms.empty()) {
    out.value = -std::numeric_limits<double>::infinity();
    out.underflow = true;
    return out;
  }
  out.value = log_sum_exp(terms);
  return out;
}

}  // namespace heaplab
