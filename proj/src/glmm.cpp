#include "heaplab/glmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "heaplab/errors.hpp"

namespace heaplab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMaxExponent = 700.0;

struct VariantEntry {
  Variant variant;
  std::string_view name;
};

constexpr VariantEntry kVariants[] = {
    {Variant::NoHeaping, "no-heaping"},
    {Variant::WH08, "wh08"},
    {Variant::DispersionOnly, "dispersion-only"},
    {Variant::Heaping, "heaping"},
    {Variant::SubjectHeaping, "subject-heaping"},
    {Variant::SubjectHeapingCov, "subject-heaping-cov"},
};

double checked_exp(double v, const char* what) {
  if (!(v <= kMaxExponent)) {
    throw NumericalFailure(std::string(what) + ": linear predictor overflow");
  }
  return std::exp(v);
}

bool is_spd(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols() || m.rows() == 0) return false;
  if (!m.isApprox(m.transpose(), 1e-12)) return false;
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  return llt.info() == Eigen::Success;
}

}  // namespace

std::string_view variant_name(Variant v) {
  for (const auto& e : kVariants) {
    if (e.variant == v) return e.name;
  }
  return "unknown";
}

Variant parse_variant(std::string_view name) {
  for (const auto& e : kVariants) {
    if (e.name == name) return e.variant;
  }
  throw DomainError("unknown variant '" + std::string(name) + "'");
}

std::vector<Variant> all_variants() {
  std::vector<Variant> out;
  for (const auto& e : kVariants) out.push_back(e.variant);
  return out;
}

VariantTraits traits(Variant v) {
  VariantTraits t;
  switch (v) {
    case Variant::NoHeaping:
      break;
    case Variant::WH08:
      t.latent = t.wh08 = t.regimes = true;
      break;
    case Variant::DispersionOnly:
      t.latent = t.bdp = true;
      break;
    case Variant::Heaping:
      t.latent = t.bdp = t.regimes = t.global_heap = true;
      break;
    case Variant::SubjectHeapingCov:
      t.heap_covariates = true;
      [[fallthrough]];
    case Variant::SubjectHeaping:
      t.latent = t.bdp = t.regimes = t.subject_heap = true;
      break;
  }
  return t;
}

std::vector<std::vector<std::size_t>> PanelData::obs_by_subject() const {
  std::vector<std::vector<std::size_t>> out(n_subjects());
  for (std::size_t k = 0; k < subject.size(); ++k) out[subject[k]].push_back(k);
  return out;
}

void PanelData::validate() const {
  const auto n = static_cast<Eigen::Index>(n_obs());
  if (n == 0) throw DomainError("panel: no observations");
  if (subject.size() != y.size() || time_index.size() != y.size()) {
    throw DomainError("panel: per-observation vectors differ in length");
  }
  if (w.rows() != n || z.rows() != n) {
    throw DomainError("panel: covariate rows differ from observation count");
  }
  if (w.cols() == 0 || z.cols() == 0) {
    throw DomainError("panel: W and Z need at least one column");
  }
  if (h.rows() != static_cast<Eigen::Index>(n_subjects())) {
    throw DomainError("panel: heaping covariates need one row per subject");
  }
  std::vector<std::size_t> count(n_subjects(), 0);
  for (std::size_t s : subject) {
    if (s >= n_subjects()) throw DomainError("panel: subject index out of range");
    ++count[s];
  }
  for (std::size_t i = 0; i < count.size(); ++i) {
    if (count[i] == 0) {
      throw DomainError("panel: subject '" + subject_ids[i] + "' has no observations");
    }
  }
  if (!w.allFinite() || !z.allFinite() || !h.allFinite()) {
    throw DomainError("panel: non-finite covariate");
  }
}

PanelData make_intercept_panel(const std::vector<std::size_t>& subject,
                               const std::vector<State>& y) {
  PanelData d;
  std::size_t subjects = 0;
  for (std::size_t s : subject) subjects = std::max(subjects, s + 1);
  for (std::size_t i = 0; i < subjects; ++i) d.subject_ids.push_back(std::to_string(i + 1));
  d.subject = subject;
  d.y = y;
  d.time_index.resize(y.size());
  std::vector<long> next(subjects, 1);
  for (std::size_t k = 0; k < y.size(); ++k) d.time_index[k] = next[subject[k]]++;
  const auto n = static_cast<Eigen::Index>(y.size());
  d.w = Eigen::MatrixXd::Ones(n, 1);
  d.z = Eigen::MatrixXd::Ones(n, 1);
  d.h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(subjects), 0);
  d.w_names = {"intercept"};
  d.z_names = {"intercept"};
  return d;
}

void Hyperparams::validate() const {
  const double positives[] = {alpha_var, theta_shape, theta_rate, omega_var,
                              gamma_var, beta_df,     beta_scale, xi_shape,
                              xi_rate};
  for (double v : positives) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError("hyperparameters must be positive and finite");
    }
  }
}

void ModelParams::validate(const ModelSpec& spec, const PanelData& data) const {
  const VariantTraits t = traits(spec.variant);
  const auto c = static_cast<Eigen::Index>(data.c());
  if (alpha.size() != static_cast<Eigen::Index>(data.d())) {
    throw DomainError("params: alpha dimension differs from W");
  }
  if (beta.rows() != static_cast<Eigen::Index>(data.n_subjects()) || beta.cols() != c) {
    throw DomainError("params: beta must be subjects x c");
  }
  if (sigma_beta.rows() != c || !is_spd(sigma_beta)) {
    throw DomainError("params: Sigma_beta must be c x c and SPD");
  }
  if (x.size() != data.n_obs()) throw DomainError("params: one latent count per observation");
  if (t.bdp && !(theta_disp > 0.0)) throw DomainError("params: theta_disp must be > 0");
  if (t.subject_heap) {
    if (!(sigma2_xi > 0.0)) throw DomainError("params: sigma2_xi must be > 0");
    if (xi.size() != static_cast<Eigen::Index>(data.n_subjects())) {
      throw DomainError("params: one xi per subject");
    }
  }
  if (t.global_heap || t.subject_heap) {
    if (omega.size() != static_cast<Eigen::Index>(heap_design_dim(data, spec.variant))) {
      throw DomainError("params: omega dimension differs from the heaping design");
    }
  }
  if (t.regimes) {
    if (gamma.size() != spec.grids.size() + 1 || !gamma_is_ordered(gamma)) {
      throw DomainError("params: gamma must be ordered with one entry per grid plus one");
    }
  }
}

std::size_t heap_design_dim(const PanelData& data, Variant v) {
  const VariantTraits t = traits(v);
  if (t.heap_covariates) return 1 + static_cast<std::size_t>(data.h.cols());
  if (t.global_heap || t.subject_heap) return 1;
  return 0;
}

Eigen::VectorXd heap_design(const PanelData& data, std::size_t i, Variant v) {
  const auto dim = static_cast<Eigen::Index>(heap_design_dim(data, v));
  Eigen::VectorXd row(dim);
  if (dim == 0) return row;
  row(0) = 1.0;
  if (traits(v).heap_covariates) {
    row.tail(dim - 1) = data.h.row(static_cast<Eigen::Index>(i)).transpose();
  }
  return row;
}

ModelParams initial_params(const PanelData& data, const ModelSpec& spec) {
  const VariantTraits t = traits(spec.variant);
  const auto d = static_cast<Eigen::Index>(data.d());
  const auto c = static_cast<Eigen::Index>(data.c());
  const auto subjects = static_cast<Eigen::Index>(data.n_subjects());
  ModelParams p;
  p.alpha = Eigen::VectorXd::Zero(d);
  double mean_y = 0.0;
  for (State y : data.y) mean_y += static_cast<double>(y);
  mean_y /= static_cast<double>(data.n_obs());
  for (Eigen::Index j = 0; j < d; ++j) {
    if ((data.w.col(j).array() == 1.0).all()) {
      p.alpha(j) = std::log(mean_y + 0.5);
      break;
    }
  }
  p.beta = Eigen::MatrixXd::Zero(subjects, c);
  p.sigma_beta = Eigen::MatrixXd::Identity(c, c);
  p.theta_disp = 1.0;
  p.omega = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(heap_design_dim(data, spec.variant)));
  if (t.subject_heap) p.xi = Eigen::VectorXd::Zero(subjects);
  p.sigma2_xi = 1.0;
  if (t.regimes) {
    // Regime midpoints -gamma_j / gamma_0 start at the grid spacings.
    p.gamma.push_back(0.25);
    for (int m : spec.grids) p.gamma.push_back(-0.25 * m);
  }
  p.x = data.y;
  return p;
}

double latent_intensity(const Eigen::Ref<const Eigen::RowVectorXd>& w,
                        const Eigen::Ref<const Eigen::RowVectorXd>& z,
                        const Eigen::VectorXd& alpha,
                        const Eigen::Ref<const Eigen::RowVectorXd>& beta) {
  if (w.size() != alpha.size() || z.size() != beta.size()) {
    throw DomainError("latent_intensity: dimension mismatch");
  }
  return checked_exp(w.dot(alpha.transpose()) + z.dot(beta), "latent_intensity");
}

double subject_heap_intensity(const Eigen::VectorXd& h,
                              const Eigen::VectorXd& omega, double xi) {
  if (h.size() != omega.size()) {
    throw DomainError("subject_heap_intensity: dimension mismatch");
  }
  return checked_exp(h.dot(omega) + xi, "subject_heap_intensity");
}

double obs_intensity(const PanelData& data, const ModelParams& p, std::size_t k) {
  const auto row = static_cast<Eigen::Index>(k);
  return latent_intensity(data.w.row(row), data.z.row(row), p.alpha,
                          p.beta.row(static_cast<Eigen::Index>(data.subject[k])));
}

double heap_intensity(const PanelData& data, const ModelParams& p,
                      const ModelSpec& spec, std::size_t i) {
  const VariantTraits t = traits(spec.variant);
  if (t.global_heap) return checked_exp(p.omega(0), "heap_intensity");
  if (t.subject_heap) {
    return subject_heap_intensity(heap_design(data, i, spec.variant), p.omega,
                                  p.xi(static_cast<Eigen::Index>(i)));
  }
  return 0.0;
}

HeapParams subject_heap_params(const PanelData& data, const ModelParams& p,
                               const ModelSpec& spec, std::size_t i) {
  const VariantTraits t = traits(spec.variant);
  HeapParams hp;
  hp.theta_disp = p.theta_disp;
  if (t.global_heap || t.subject_heap) {
    hp.theta_heap = heap_intensity(data, p, spec, i);
    hp.grids = spec.grids;
    hp.gamma = p.gamma;
  }
  return hp;
}

State nearest_multiple(State x, int m) {
  const auto step = static_cast<State>(m);
  return (2 * x + step) / (2 * step) * step;
}

State wh08_report(State x, const std::vector<double>& gamma,
                  const std::vector<int>& grids, Rng& rng) {
  const RegimeWeights w = regime_weights(gamma, x);
  const std::size_t j = sample_index(w.v, rng);
  return j == 0 ? x : nearest_multiple(x, grids[j - 1]);
}

double wh08_log_prob(State y, State x, const std::vector<double>& gamma,
                     const std::vector<int>& grids) {
  const RegimeWeights w = regime_weights(gamma, x);
  double prob = y == x ? w.v[0] : 0.0;
  for (std::size_t j = 0; j < grids.size(); ++j) {
    if (nearest_multiple(x, grids[j]) == y) prob += w.v[j + 1];
  }
  return prob > 0.0 ? std::log(prob) : kNegInf;
}

double bdp_log_prob(State y, State x, const HeapParams& hp, const SolverConfig& cfg) {
  if (hp.theta_disp < 1e-8 && hp.theta_heap < 1e-8) return y == x ? 0.0 : kNegInf;
  // The row is computed at the cap chosen for x alone; only reports beyond
  // it need a row widened to reach y.
  std::vector<double> g = reporting_pmf(hp, x, cfg);
  if (y >= g.size()) g = reporting_pmf(hp, x, cfg, y);
  const double gy = y < g.size() ? g[y] : 0.0;
  return gy > 0.0 ? std::log(gy) : kNegInf;
}

double report_log_prob(const PanelData& data, const ModelParams& p,
                       const ModelSpec& spec, std::size_t k) {
  const VariantTraits t = traits(spec.variant);
  const State y = data.y[k];
  const State x = p.x[k];
  if (t.wh08) return wh08_log_prob(y, x, p.gamma, spec.grids);
  if (t.bdp) {
    return bdp_log_prob(y, x, subject_heap_params(data, p, spec, data.subject[k]),
                        spec.solver);
  }
  return y == x ? 0.0 : kNegInf;
}

double log_prior(const ModelParams& p, const Hyperparams& hyper,
                 const ModelSpec& spec) {
  const VariantTraits t = traits(spec.variant);
  double lp = 0.0;
  for (Eigen::Index j = 0; j < p.alpha.size(); ++j) {
    lp += log_normal(p.alpha(j), 0.0, hyper.alpha_var);
  }
  if (p.sigma_beta.rows() == 1) {
    lp += log_inv_gamma(p.sigma_beta(0, 0), hyper.beta_df, hyper.beta_scale);
  } else {
    const auto c = p.sigma_beta.rows();
    lp += log_inv_wishart(p.sigma_beta, hyper.beta_df,
                          hyper.beta_scale * Eigen::MatrixXd::Identity(c, c));
  }
  if (t.bdp) lp += log_inv_gamma(p.theta_disp, hyper.theta_shape, hyper.theta_rate);
  if (t.global_heap) {
    lp += log_inv_gamma(std::exp(p.omega(0)), hyper.theta_shape, hyper.theta_rate);
  }
  if (t.subject_heap) {
    for (Eigen::Index j = 0; j < p.omega.size(); ++j) {
      lp += log_normal(p.omega(j), 0.0, hyper.omega_var);
    }
    lp += log_inv_gamma(p.sigma2_xi, hyper.xi_shape, hyper.xi_rate);
  }
  if (t.regimes) {
    if (!gamma_is_ordered(p.gamma)) return kNegInf;
    for (double g : p.gamma) lp += log_normal(g, 0.0, hyper.gamma_var);
  }
  return lp;
}

double log_joint(const ModelParams& p, const PanelData& data,
                 const Hyperparams& hyper, const ModelSpec& spec) {
  const VariantTraits t = traits(spec.variant);
  if (p.x.size() != data.n_obs() || p.alpha.size() != static_cast<Eigen::Index>(data.d()) ||
      p.beta.rows() != static_cast<Eigen::Index>(data.n_subjects()) ||
      p.beta.cols() != static_cast<Eigen::Index>(data.c())) {
    throw DomainError("log_joint: parameter dimensions differ from the data");
  }
  double lj = log_prior(p, hyper, spec);
  if (!std::isfinite(lj)) return kNegInf;
  for (std::size_t i = 0; i < data.n_subjects(); ++i) {
    const Eigen::VectorXd b = p.beta.row(static_cast<Eigen::Index>(i)).transpose();
    lj += b.size() == 1 ? log_normal(b(0), 0.0, p.sigma_beta(0, 0))
                        : log_mvn_zero(b, p.sigma_beta);
    if (t.subject_heap) lj += log_normal(p.xi(static_cast<Eigen::Index>(i)), 0.0, p.sigma2_xi);
  }
  for (std::size_t k = 0; k < data.n_obs(); ++k) {
    lj += log_poisson(p.x[k], obs_intensity(data, p, k));
    lj += report_log_prob(data, p, spec, k);
    if (!std::isfinite(lj)) return kNegInf;
  }
  return lj;
}

}  // namespace heaplab
