#pragma once

// Metropolis-within-Gibbs sampler for the latent-count model.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "heaplab/errors.hpp"
#include "heaplab/glmm.hpp"

namespace heaplab {

enum class Block { Latent, Alpha, Beta, SigmaBeta, ThetaDisp, Gamma, Omega, Xi, SigmaXi };

std::string_view block_name(Block b);
Block parse_block(std::string_view name);
std::vector<Block> default_block_order();

struct SamplerConfig {
  std::size_t iterations = 20000;
  std::size_t burn_in = 5000;
  std::size_t thin = 5;
  /// Iterations per Robbins-Monro batch during burn-in.
  std::size_t adapt_window = 50;
  bool adapt = true;
  std::uint64_t seed = 1;
  std::size_t chains = 1;

  // Initial random-walk scales.
  double step_alpha = 0.05;
  double step_beta = 0.3;
  double step_theta_disp = 0.2;
  double step_gamma = 0.05;
  double step_omega = 0.2;
  double step_xi = 0.3;

  /// Latent proposal: variance inflation and window half-width in sds.
  double latent_inflation = 1.5;
  double latent_window = 6.0;
  /// Dispersion used by the latent proposal under nearest-multiple rounding.
  double wh08_proposal_theta = 1.0;

  std::vector<Block> order = default_block_order();

  /// Throws DomainError on an invalid configuration.
  void validate() const;
};

/// Kept draws plus sampler metadata.
struct Chain {
  Variant variant = Variant::Heaping;
  std::uint64_t seed = 0;
  std::vector<ModelParams> samples;
  std::vector<std::size_t> iteration;
  /// Post-burn-in acceptance rate per block.
  std::map<std::string, double> acceptance;
  /// Final proposal scale per block (median over subjects for per-subject blocks).
  std::map<std::string, double> step_size;
  double seconds = 0.0;
};

/// Raised when a block fails; carries the state at the failure.
class SamplerAbort : public HeapError {
 public:
  SamplerAbort(const std::string& what, std::string block, std::size_t iteration,
               ModelParams state)
      : HeapError(what), block(std::move(block)), iteration(iteration),
        state(std::move(state)) {}
  std::string block;
  std::size_t iteration;
  ModelParams state;
};

/// Row cache for g(y | x). Rows are keyed by the reporting parameters and x;
/// the grids are assumed fixed for the lifetime of the cache. Lookups are
/// bit-identical to bdp_log_prob.
class ReportCache {
 public:
  explicit ReportCache(SolverConfig cfg = {}) : cfg_(cfg) {}

  double log_prob(State y, State x, const HeapParams& hp);

  /// g(. | x) at the cap chosen for x alone.
  const std::vector<double>& row(State x, const HeapParams& hp);

  /// Drops rows for parameter sets not in `keep`.
  void retain(const std::vector<HeapParams>& keep);

  std::size_t rows() const;
  std::size_t misses() const { return misses_; }

 private:
  struct Key {
    double theta_disp;
    double theta_heap;
    std::vector<double> gamma;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const;
  };
  struct Rows {
    std::unordered_map<State, std::vector<double>> base;
    std::map<std::pair<State, State>, std::vector<double>> extended;
  };

  static Key key_of(const HeapParams& hp);
  const std::vector<double>& base_row(Rows& rows, State x, const HeapParams& hp);

  SolverConfig cfg_;
  std::unordered_map<Key, Rows, KeyHash> rows_;
  std::size_t misses_ = 0;
};

/// Proposal used for latent counts: the dispersion-only normal
/// approximation around x, or a +-1 walk when its support is {x}.
struct LatentProposal {
  bool walk = false;
  DiscreteDist dist;
};

LatentProposal latent_proposal(State x, double theta, double inflation,
                               double window);
double latent_proposal_log_prob(const LatentProposal& q, State from, State to);

/// One MH update of a latent count targeting exp(log_target).
State latent_mh_step(State x, const std::function<double(State)>& log_target,
                     double theta, double inflation, double window, Rng& rng,
                     bool* accepted = nullptr);

/// Exact transition probabilities of latent_mh_step from x to 0..max_state.
/// Mass proposed outside [0, max_state] must have zero target density.
std::vector<double> latent_kernel_row(State x,
                                      const std::function<double(State)>& log_target,
                                      double theta, double inflation,
                                      double window, State max_state);

/// Conjugate draw of Sigma_beta given the rows of beta.
Eigen::MatrixXd draw_sigma_beta(const Eigen::MatrixXd& beta, const Hyperparams& hyper,
                                Rng& rng);
/// Shape and rate of the inverse-gamma full conditional of sigma2_xi.
std::pair<double, double> sigma_xi_posterior(const Eigen::VectorXd& xi,
                                             const Hyperparams& hyper);

/// Runs one chain. `init` overrides the default starting values.
Chain run_mcmc(const PanelData& data, const Hyperparams& hyper,
               const ModelSpec& spec, const SamplerConfig& cfg,
               const ModelParams* init = nullptr);

/// Runs cfg.chains chains in parallel, at most `threads` at a time (0 reads
/// HEAPLAB_THREADS, defaulting to the hardware concurrency). Chain k uses a
/// seed derived from (cfg.seed, k).
std::vector<Chain> run_chains(const PanelData& data, const Hyperparams& hyper,
                              const ModelSpec& spec, const SamplerConfig& cfg,
                              std::size_t threads = 0);

}  // namespace heaplab
