#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>

#include <Eigen/Dense>

namespace heaplab {

using Rng = std::mt19937_64;

/// Seed for stream `stream` (a chain or a subject) derived from a base seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

double log_sum_exp(std::span<const double> terms);

double log_poisson(std::size_t x, double mean);
double log_normal(double x, double mean, double variance);
/// log N(v; 0, cov). Throws NumericalFailure if cov is not SPD.
double log_mvn_zero(const Eigen::VectorXd& v, const Eigen::MatrixXd& cov);
/// Inverse-gamma with shape a and rate (scale) b: b^a / Gamma(a) x^{-a-1} e^{-b/x}.
double log_inv_gamma(double x, double shape, double rate);
/// Inverse-Wishart with `df` degrees of freedom and scale matrix `scale`.
double log_inv_wishart(const Eigen::MatrixXd& sigma, double df,
                       const Eigen::MatrixXd& scale);

double sample_inv_gamma(double shape, double rate, Rng& rng);
Eigen::MatrixXd sample_inv_wishart(double df, const Eigen::MatrixXd& scale,
                                   Rng& rng);
double sample_standard_normal(Rng& rng);
double sample_uniform(Rng& rng);

/// Inverse-CDF draw of an index from nonnegative weights (need not sum to 1).
std::size_t sample_index(std::span<const double> weights, Rng& rng);

}  // namespace heaplab
