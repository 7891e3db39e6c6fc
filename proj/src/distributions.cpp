#include "heaplab/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "heaplab/errors.hpp"

namespace heaplab {

namespace {
constexpr double kLogTwoPi = 1.8378770664093454836;

// log of the multivariate gamma function Gamma_p(a).
double log_multigamma(double a, int p) {
  double r = 0.25 * p * (p - 1) * std::log(std::numbers::pi);
  for (int j = 0; j < p; ++j) r += std::lgamma(a - 0.5 * j);
  return r;
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

double log_sum_exp(std::span<const double> terms) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double t : terms) peak = std::max(peak, t);
  if (!std::isfinite(peak)) return peak;
  double s = 0.0;
  for (double t : terms) s += std::exp(t - peak);
  return peak + std::log(s);
}

double log_poisson(std::size_t x, double mean) {
  const double xd = static_cast<double>(x);
  if (mean == 0.0) {
    return x == 0 ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  return xd * std::log(mean) - mean - std::lgamma(xd + 1.0);
}

double log_normal(double x, double mean, double variance) {
  const double d = x - mean;
  return -0.5 * (kLogTwoPi + std::log(variance) + d * d / variance);
}

double log_mvn_zero(const Eigen::VectorXd& v, const Eigen::MatrixXd& cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw NumericalFailure("log_mvn_zero: covariance not SPD");
  }
  const Eigen::VectorXd z = llt.matrixL().solve(v);
  const double log_det =
      2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  return -0.5 * (static_cast<double>(v.size()) * kLogTwoPi + log_det +
                 z.squaredNorm());
}

double log_inv_gamma(double x, double shape, double rate) {
  if (!(x > 0.0)) return -std::numeric_limits<double>::infinity();
  return shape * std::log(rate) - std::lgamma(shape) -
         (shape + 1.0) * std::log(x) - rate / x;
}

double log_inv_wishart(const Eigen::MatrixXd& sigma, double df,
                       const Eigen::MatrixXd& scale) {
  const int p = static_cast<int>(sigma.rows());
  Eigen::LLT<Eigen::MatrixXd> s_llt(sigma);
  Eigen::LLT<Eigen::MatrixXd> psi_llt(scale);
  if (s_llt.info() != Eigen::Success) {
    return -std::numeric_limits<double>::infinity();
  }
  if (psi_llt.info() != Eigen::Success) {
    throw NumericalFailure("log_inv_wishart: scale not SPD");
  }
  const double log_det_sigma =
      2.0 * s_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double log_det_psi =
      2.0 * psi_llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double trace = s_llt.solve(scale).trace();
  return 0.5 * df * log_det_psi - 0.5 * df * p * std::numbers::ln2 -
         log_multigamma(0.5 * df, p) - 0.5 * (df + p + 1.0) * log_det_sigma -
         0.5 * trace;
}

double sample_standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

double sample_uniform(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(rng);
}

double sample_inv_gamma(double shape, double rate, Rng& rng) {
  std::gamma_distribution<double> g(shape, 1.0 / rate);
  return 1.0 / g(rng);
}

Eigen::MatrixXd sample_inv_wishart(double df, const Eigen::MatrixXd& scale,
                                   Rng& rng) {
  // Sigma = W^{-1} with W ~ Wishart(df, scale^{-1}) drawn by the Bartlett
  // decomposition.
  const Eigen::Index p = scale.rows();
  Eigen::LLT<Eigen::MatrixXd> psi_llt(scale);
  if (psi_llt.info() != Eigen::Success) {
    throw NumericalFailure("sample_inv_wishart: scale not SPD");
  }
  const Eigen::MatrixXd precision =
      psi_llt.solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::LLT<Eigen::MatrixXd> prec_llt(precision);
  const Eigen::MatrixXd chol = prec_llt.matrixL();
  Eigen::MatrixXd bartlett = Eigen::MatrixXd::Zero(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    std::chi_squared_distribution<double> chi(df - static_cast<double>(i));
    bartlett(i, i) = std::sqrt(chi(rng));
    for (Eigen::Index j = 0; j < i; ++j) bartlett(i, j) = sample_standard_normal(rng);
  }
  const Eigen::MatrixXd factor = chol * bartlett;
  const Eigen::MatrixXd wishart = factor * factor.transpose();
  Eigen::MatrixXd sigma = wishart.llt().solve(Eigen::MatrixXd::Identity(p, p));
  sigma = 0.5 * (sigma + sigma.transpose());
  if (sigma.llt().info() != Eigen::Success) {
    throw NumericalFailure("sample_inv_wishart: draw not SPD");
  }
  return sigma;
}

std::size_t sample_index(std::span<const double> weights, Rng& rng) {
  double total = 0.0;
  for (double w : weights) total += w;
  const double u = sample_uniform(rng) * total;
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    acc += weights[i];
    if (u < acc) return i;
  }
  // Rounding at the top end: return the last positive weight.
  for (std::size_t i = weights.size(); i-- > 0;) {
    if (weights[i] > 0.0) return i;
  }
  return 0;
}

}  // namespace heaplab
