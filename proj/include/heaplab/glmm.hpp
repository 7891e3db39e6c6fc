#pragma once

// Poisson GLMM for latent true counts with subject random effects, heaping
// parameters, priors and the deterministic-rounding baseline.

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "heaplab/bdp_engine.hpp"
#include "heaplab/distributions.hpp"
#include "heaplab/heap_report.hpp"

namespace heaplab {

enum class Variant {
  NoHeaping,
  WH08,
  DispersionOnly,
  Heaping,
  SubjectHeaping,
  SubjectHeapingCov,
};

std::string_view variant_name(Variant v);
/// Throws DomainError on an unknown name.
Variant parse_variant(std::string_view name);
std::vector<Variant> all_variants();

/// Which parameter groups a variant carries.
struct VariantTraits {
  bool latent = false;          // X sampled rather than fixed at Y
  bool bdp = false;             // reports follow the birth-death process
  bool wh08 = false;            // reports follow nearest-multiple rounding
  bool regimes = false;         // gamma is a parameter
  bool global_heap = false;     // one theta_heap shared by all subjects
  bool subject_heap = false;    // theta_heap,i = exp(H_i omega + xi_i)
  bool heap_covariates = false; // H_i includes the h_* columns
};

VariantTraits traits(Variant v);

/// Longitudinal panel. Observations are stored flat; `subject[k]` is the
/// dense subject index of observation k.
struct PanelData {
  std::vector<std::string> subject_ids;
  std::vector<std::size_t> subject;
  std::vector<long> time_index;
  std::vector<State> y;
  Eigen::MatrixXd w;  // observations x d
  Eigen::MatrixXd z;  // observations x c
  Eigen::MatrixXd h;  // subjects x e (heaping covariates, without intercept)
  std::vector<std::string> w_names;
  std::vector<std::string> z_names;
  std::vector<std::string> h_names;

  std::size_t n_obs() const { return y.size(); }
  std::size_t n_subjects() const { return subject_ids.size(); }
  std::size_t d() const { return static_cast<std::size_t>(w.cols()); }
  std::size_t c() const { return static_cast<std::size_t>(z.cols()); }

  /// Observation indices grouped by subject.
  std::vector<std::vector<std::size_t>> obs_by_subject() const;

  /// Throws DomainError on inconsistent dimensions or an empty subject.
  void validate() const;
};

/// Intercept-only panel: W = Z = 1, no heaping covariates.
PanelData make_intercept_panel(const std::vector<std::size_t>& subject,
                               const std::vector<State>& y);

/// Model configuration that is not a parameter.
struct ModelSpec {
  Variant variant = Variant::Heaping;
  std::vector<int> grids{5, 10, 50};
  SolverConfig solver;
};

struct Hyperparams {
  double alpha_var = 10.0;     // V_alpha = alpha_var I
  double theta_shape = 0.001;  // inverse-gamma prior on theta_disp, theta_heap
  double theta_rate = 0.001;
  double omega_var = 10.0;     // Sigma_omega = omega_var I
  double gamma_var = 100.0;    // V_gamma = gamma_var I
  double beta_df = 4.0;        // A_beta
  double beta_scale = 5.0;     // m_beta (scale matrix m_beta I when c > 1)
  double xi_shape = 0.001;     // inverse-gamma prior on sigma2_xi
  double xi_rate = 0.001;

  void validate() const;
};

struct ModelParams {
  Eigen::VectorXd alpha;       // d
  Eigen::MatrixXd beta;        // subjects x c
  Eigen::MatrixXd sigma_beta;  // c x c
  double theta_disp = 1.0;
  Eigen::VectorXd omega;       // heaping design coefficients
  Eigen::VectorXd xi;          // subjects (subject heaping only)
  double sigma2_xi = 1.0;
  std::vector<double> gamma;
  std::vector<State> x;        // latent counts, one per observation

  /// Throws DomainError when an invariant is violated for `spec`.
  void validate(const ModelSpec& spec, const PanelData& data) const;
};

/// Heaping design row for subject i under `v`: (1) or (1, h_i).
Eigen::VectorXd heap_design(const PanelData& data, std::size_t i, Variant v);
std::size_t heap_design_dim(const PanelData& data, Variant v);

/// Starting values: alpha from the mean report, X = Y, neutral heaping.
ModelParams initial_params(const PanelData& data, const ModelSpec& spec);

/// eta = exp(W alpha + Z beta_i). Throws NumericalFailure above e^700.
double latent_intensity(const Eigen::Ref<const Eigen::RowVectorXd>& w,
                        const Eigen::Ref<const Eigen::RowVectorXd>& z,
                        const Eigen::VectorXd& alpha,
                        const Eigen::Ref<const Eigen::RowVectorXd>& beta);

/// theta_heap,i = exp(H omega + xi). Throws NumericalFailure above e^700.
double subject_heap_intensity(const Eigen::VectorXd& h,
                              const Eigen::VectorXd& omega, double xi);

double obs_intensity(const PanelData& data, const ModelParams& p, std::size_t k);

/// theta_heap for subject i (0 for variants without heaping).
double heap_intensity(const PanelData& data, const ModelParams& p,
                      const ModelSpec& spec, std::size_t i);

/// Reporting parameters of subject i for the BDP variants.
HeapParams subject_heap_params(const PanelData& data, const ModelParams& p,
                               const ModelSpec& spec, std::size_t i);

/// Nearest multiple of m, ties rounded up.
State nearest_multiple(State x, int m);

/// Draws a regime from v(x) and reports x or its nearest grid multiple.
State wh08_report(State x, const std::vector<double>& gamma,
                  const std::vector<int>& grids, Rng& rng);

/// log P(y | x) under nearest-multiple rounding.
double wh08_log_prob(State y, State x, const std::vector<double>& gamma,
                     const std::vector<int>& grids);

/// log g(y | x) under the BDP, with the frozen-chain limit when both
/// intensities are below 1e-8.
double bdp_log_prob(State y, State x, const HeapParams& hp,
                    const SolverConfig& cfg = {});

/// log P(Y | X) for observation k under the variant's report model.
double report_log_prob(const PanelData& data, const ModelParams& p,
                       const ModelSpec& spec, std::size_t k);

double log_prior(const ModelParams& p, const Hyperparams& hyper,
                 const ModelSpec& spec);

/// Sum of the report, Poisson, random-effect and prior terms.
double log_joint(const ModelParams& p, const PanelData& data,
                 const Hyperparams& hyper, const ModelSpec& spec);

}  // namespace heaplab
