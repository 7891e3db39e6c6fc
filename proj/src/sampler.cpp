#include "heaplab/sampler.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <thread>
#include <unordered_set>

namespace heaplab {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kMaxExponent = 700.0;

struct BlockEntry {
  Block block;
  std::string_view name;
};

constexpr BlockEntry kBlocks[] = {
    {Block::Latent, "latent"},         {Block::Alpha, "alpha"},
    {Block::Beta, "beta"},             {Block::SigmaBeta, "sigma_beta"},
    {Block::ThetaDisp, "theta_disp"},  {Block::Gamma, "gamma"},
    {Block::Omega, "omega"},           {Block::Xi, "xi"},
    {Block::SigmaXi, "sigma2_xi"},
};

bool accept(double log_ratio, Rng& rng) {
  if (std::isnan(log_ratio)) return false;
  if (log_ratio >= 0.0) return true;
  return std::log(sample_uniform(rng)) < log_ratio;
}

// Gaussian random-walk proposal with Robbins-Monro scaling and, for vector
// blocks, a covariance estimated from the burn-in trace.
class Proposal {
 public:
  Proposal() = default;
  Proposal(Eigen::Index dim, double step)
      : dim_(dim), log_scale_(std::log(step)),
        factor_(Eigen::MatrixXd::Identity(dim, dim)),
        target_(dim == 1 ? 0.44 : 0.234) {}

  Eigen::VectorXd draw(Rng& rng) const {
    Eigen::VectorXd z(dim_);
    for (Eigen::Index j = 0; j < dim_; ++j) z(j) = sample_standard_normal(rng);
    return std::exp(log_scale_) * (factor_ * z);
  }

  double draw_scalar(Rng& rng) const {
    return std::exp(log_scale_) * factor_(0, 0) * sample_standard_normal(rng);
  }

  void record(bool accepted, bool burn_in) {
    if (burn_in) {
      window_acc_ += accepted;
      ++window_tries_;
    } else {
      kept_acc_ += accepted;
      ++kept_tries_;
    }
  }

  void observe(const Eigen::VectorXd& v) {
    if (dim_ > 1) trace_.push_back(v);
  }

  void end_window() {
    if (window_tries_ > 0) {
      ++batches_;
      const double rate = static_cast<double>(window_acc_) / window_tries_;
      log_scale_ += (rate - target_) / std::sqrt(static_cast<double>(batches_));
      log_scale_ = std::clamp(log_scale_, -30.0, 5.0);
    }
    window_acc_ = window_tries_ = 0;
    refresh_covariance();
  }

  double rate() const {
    return kept_tries_ == 0 ? std::numeric_limits<double>::quiet_NaN()
                            : static_cast<double>(kept_acc_) / kept_tries_;
  }
  std::size_t kept_acc() const { return kept_acc_; }
  std::size_t kept_tries() const { return kept_tries_; }
  double scale() const { return std::exp(log_scale_); }

 private:
  void refresh_covariance() {
    const std::size_t need = std::max<std::size_t>(100, 10 * static_cast<std::size_t>(dim_));
    if (dim_ < 2 || trace_.size() < 2 * need) return;
    // Recent half of the trace, so early transients wash out.
    const std::size_t first = trace_.size() / 2;
    const double n = static_cast<double>(trace_.size() - first);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim_);
    for (std::size_t t = first; t < trace_.size(); ++t) mean += trace_[t];
    mean /= n;
    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim_, dim_);
    for (std::size_t t = first; t < trace_.size(); ++t) {
      const Eigen::VectorXd d = trace_[t] - mean;
      cov += d * d.transpose();
    }
    cov /= n - 1.0;
    cov.diagonal().array() += 1e-6 * cov.trace() / static_cast<double>(dim_) + 1e-12;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) return;
    factor_ = llt.matrixL();
    if (!covariance_set_) {
      covariance_set_ = true;
      log_scale_ = std::log(2.38 / std::sqrt(static_cast<double>(dim_)));
      batches_ = 0;
    }
  }

  Eigen::Index dim_ = 1;
  double log_scale_ = 0.0;
  Eigen::MatrixXd factor_;
  double target_ = 0.44;
  std::size_t window_acc_ = 0, window_tries_ = 0;
  std::size_t kept_acc_ = 0, kept_tries_ = 0;
  std::size_t batches_ = 0;
  bool covariance_set_ = false;
  std::vector<Eigen::VectorXd> trace_;
};

double safe_exp(double v) { return v > kMaxExponent ? HUGE_VAL : std::exp(v); }

class Sampler {
 public:
  Sampler(const PanelData& data, const Hyperparams& hyper, const ModelSpec& spec,
          const SamplerConfig& cfg, ModelParams init)
      : data_(data), hyper_(hyper), spec_(spec), cfg_(cfg), traits_(traits(spec.variant)),
        rng_(cfg.seed), cache_(spec.solver), p_(std::move(init)),
        by_subject_(data.obs_by_subject()) {
    const auto subjects = data.n_subjects();
    for (std::size_t i = 0; i < subjects; ++i) {
      design_.push_back(heap_design(data, i, spec.variant));
    }
    alpha_ = Proposal(p_.alpha.size(), cfg.step_alpha);
    beta_.assign(subjects, Proposal(static_cast<Eigen::Index>(data.c()), cfg.step_beta));
    theta_ = Proposal(1, cfg.step_theta_disp);
    if (traits_.regimes) {
      gamma_ = Proposal(static_cast<Eigen::Index>(p_.gamma.size()), cfg.step_gamma);
    }
    if (p_.omega.size() > 0) omega_ = Proposal(p_.omega.size(), cfg.step_omega);
    w_intercept_ = intercept_column(data.w);
    z_intercept_ = intercept_column(data.z);
    shift_ = Proposal(1, cfg.step_alpha);
    if (traits_.subject_heap) xi_.assign(subjects, Proposal(1, cfg.step_xi));

    hp_.resize(subjects);
    for (std::size_t i = 0; i < subjects; ++i) hp_[i] = build_hp(p_, i);
    eta_.resize(data.n_obs());
    report_.resize(data.n_obs());
    for (std::size_t k = 0; k < data.n_obs(); ++k) {
      eta_[k] = obs_intensity(data, p_, k);
      report_[k] = report_lp(k, p_.x[k], hp_[data.subject[k]]);
      if (!std::isfinite(report_[k])) {
        throw DomainError("initial state has zero report probability at observation " +
                          std::to_string(k));
      }
    }
  }

  Chain run() {
    const auto start = std::chrono::steady_clock::now();
    Chain chain;
    chain.variant = spec_.variant;
    chain.seed = cfg_.seed;
    for (std::size_t it = 0; it < cfg_.iterations; ++it) {
      burn_in_ = it < cfg_.burn_in;
      for (Block b : cfg_.order) {
        try {
          update(b);
        } catch (const HeapError& e) {
          throw SamplerAbort(std::string("block ") + std::string(block_name(b)) +
                                 " failed at iteration " + std::to_string(it) + ": " +
                                 e.what(),
                             std::string(block_name(b)), it, p_);
        }
      }
      if (burn_in_ && cfg_.adapt) {
        if (traits_.regimes && it >= cfg_.burn_in / 4) {
          gamma_.observe(Eigen::Map<const Eigen::VectorXd>(
              p_.gamma.data(), static_cast<Eigen::Index>(p_.gamma.size())));
        }
        if (it >= cfg_.burn_in / 4) {
          alpha_.observe(p_.alpha);
          if (p_.omega.size() > 1) omega_.observe(p_.omega);
        }
        if ((it + 1) % cfg_.adapt_window == 0) end_window();
      }
      if (!burn_in_ && (it + 1 - cfg_.burn_in) % cfg_.thin == 0) {
        chain.samples.push_back(p_);
        chain.iteration.push_back(it);
      }
    }
    fill_metadata(chain);
    chain.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return chain;
  }

 private:
  bool uses(Block b) const {
    switch (b) {
      case Block::Latent:
        return traits_.latent;
      case Block::Alpha:
      case Block::Beta:
      case Block::SigmaBeta:
        return true;
      case Block::ThetaDisp:
        return traits_.bdp;
      case Block::Gamma:
        return traits_.regimes;
      case Block::Omega:
        return traits_.global_heap || traits_.subject_heap;
      case Block::Xi:
      case Block::SigmaXi:
        return traits_.subject_heap;
    }
    return false;
  }

  void update(Block b) {
    if (!uses(b)) return;
    switch (b) {
      case Block::Latent:
        update_latent();
        break;
      case Block::Alpha:
        update_alpha();
        break;
      case Block::Beta:
        update_beta();
        break;
      case Block::SigmaBeta:
        p_.sigma_beta = draw_sigma_beta(p_.beta, hyper_, rng_);
        break;
      case Block::ThetaDisp:
        update_theta_disp();
        break;
      case Block::Gamma:
        update_gamma();
        break;
      case Block::Omega:
        update_omega();
        break;
      case Block::Xi:
        update_xi();
        break;
      case Block::SigmaXi: {
        const auto [shape, rate] = sigma_xi_posterior(p_.xi, hyper_);
        p_.sigma2_xi = sample_inv_gamma(shape, rate, rng_);
        break;
      }
    }
  }

  HeapParams build_hp(const ModelParams& p, std::size_t i) const {
    if (traits_.wh08) {
      HeapParams hp;
      hp.gamma = p.gamma;
      hp.grids = spec_.grids;
      return hp;
    }
    HeapParams hp;
    hp.theta_disp = p.theta_disp;
    if (traits_.global_heap) {
      hp.theta_heap = safe_exp(p.omega(0));
    } else if (traits_.subject_heap) {
      hp.theta_heap = safe_exp(design_[i].dot(p.omega) + p.xi(static_cast<Eigen::Index>(i)));
    }
    if (traits_.global_heap || traits_.subject_heap) {
      hp.grids = spec_.grids;
      hp.gamma = p.gamma;
    }
    return hp;
  }

  double report_lp(std::size_t k, State x, const HeapParams& hp) {
    const State y = data_.y[k];
    if (traits_.wh08) return wh08_log_prob(y, x, hp.gamma, hp.grids);
    if (traits_.bdp) {
      if (!std::isfinite(hp.theta_heap) || !std::isfinite(hp.theta_disp)) return kNegInf;
      return cache_.log_prob(y, x, hp);
    }
    return y == x ? 0.0 : kNegInf;
  }

  // Sum of report log-probabilities under per-subject params `hps` for the
  // observations in `obs`. Every term is <= 0, so the sum is abandoned
  // (returning -inf) as soon as it falls to `floor` or below.
  double report_sum(const std::vector<std::size_t>& obs, const std::vector<HeapParams>& hps,
                    std::vector<double>& out, double floor) {
    double total = 0.0;
    for (std::size_t k : obs) {
      out[k] = report_lp(k, p_.x[k], hps[data_.subject[k]]);
      total += out[k];
      if (!(total > floor)) return kNegInf;
    }
    return total;
  }

  const std::vector<std::size_t>& all_obs() {
    if (all_obs_.empty()) {
      all_obs_.resize(data_.n_obs());
      for (std::size_t k = 0; k < all_obs_.size(); ++k) all_obs_[k] = k;
    }
    return all_obs_;
  }

  double current_report_sum(const std::vector<std::size_t>& obs) const {
    double total = 0.0;
    for (std::size_t k : obs) total += report_[k];
    return total;
  }

  void update_latent() {
    const double theta = traits_.wh08 ? cfg_.wh08_proposal_theta : p_.theta_disp;
    for (std::size_t k = 0; k < data_.n_obs(); ++k) {
      const HeapParams& hp = hp_[data_.subject[k]];
      const double eta = eta_[k];
      auto target = [&](State x) {
        const double r = report_lp(k, x, hp);
        return std::isfinite(r) ? r + log_poisson(x, eta) : kNegInf;
      };
      bool accepted = false;
      const State next = latent_mh_step(p_.x[k], target, theta, cfg_.latent_inflation,
                                        cfg_.latent_window, rng_, &accepted);
      latent_.record(accepted, burn_in_);
      if (next != p_.x[k]) {
        p_.x[k] = next;
        report_[k] = report_lp(k, next, hp);
      }
    }
  }

  // Poisson log-likelihood of the observations in `obs` with linear
  // predictors from alpha and beta; fills `eta`.
  double poisson_sum(const std::vector<std::size_t>& obs, const Eigen::VectorXd& alpha,
                     const Eigen::MatrixXd& beta, std::vector<double>& eta) const {
    double total = 0.0;
    for (std::size_t k : obs) {
      const auto row = static_cast<Eigen::Index>(k);
      const double lin = data_.w.row(row).dot(alpha.transpose()) +
                         data_.z.row(row).dot(beta.row(static_cast<Eigen::Index>(data_.subject[k])));
      if (!(lin <= kMaxExponent)) return kNegInf;
      eta[k] = std::exp(lin);
      total += log_poisson(p_.x[k], eta[k]);
    }
    return total;
  }

  double alpha_prior(const Eigen::VectorXd& a) const {
    double lp = 0.0;
    for (Eigen::Index j = 0; j < a.size(); ++j) lp += log_normal(a(j), 0.0, hyper_.alpha_var);
    return lp;
  }

  void update_alpha() {
    const Eigen::VectorXd proposal = p_.alpha + alpha_.draw(rng_);
    std::vector<double> eta = eta_;
    const double cur = current_poisson(all_obs());
    const double next = poisson_sum(all_obs(), proposal, p_.beta, eta);
    const bool ok = std::isfinite(next) &&
                    accept(next - cur + alpha_prior(proposal) - alpha_prior(p_.alpha), rng_);
    alpha_.record(ok, burn_in_);
    if (ok) {
      p_.alpha = proposal;
      eta_ = std::move(eta);
    }
    update_shift();
  }

  static Eigen::Index intercept_column(const Eigen::MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      if ((m.col(j).array() == 1.0).all()) return j;
    }
    return -1;
  }

  // Moves the fixed intercept and every random intercept in opposite
  // directions, leaving the linear predictors unchanged.
  void update_shift() {
    if (w_intercept_ < 0 || z_intercept_ < 0) return;
    const double delta = shift_.draw_scalar(rng_);
    Eigen::VectorXd alpha = p_.alpha;
    alpha(w_intercept_) += delta;
    Eigen::MatrixXd beta = p_.beta;
    beta.col(z_intercept_).array() -= delta;
    double prior_ratio = alpha_prior(alpha) - alpha_prior(p_.alpha);
    for (Eigen::Index i = 0; i < beta.rows(); ++i) {
      prior_ratio += beta_prior(beta.row(i).transpose()) - beta_prior(p_.beta.row(i).transpose());
    }
    std::vector<double> eta = eta_;
    const double cur = current_poisson(all_obs());
    const double next = poisson_sum(all_obs(), alpha, beta, eta);
    const bool ok = std::isfinite(next) && accept(next - cur + prior_ratio, rng_);
    shift_.record(ok, burn_in_);
    if (ok) {
      p_.alpha = std::move(alpha);
      p_.beta = std::move(beta);
      eta_ = std::move(eta);
    }
  }

  double current_poisson(const std::vector<std::size_t>& obs) const {
    double total = 0.0;
    for (std::size_t k : obs) total += log_poisson(p_.x[k], eta_[k]);
    return total;
  }

  double beta_prior(const Eigen::VectorXd& b) const {
    if (b.size() == 1) return log_normal(b(0), 0.0, p_.sigma_beta(0, 0));
    return log_mvn_zero(b, p_.sigma_beta);
  }

  void update_beta() {
    std::vector<double> eta = eta_;
    for (std::size_t i = 0; i < data_.n_subjects(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const Eigen::VectorXd current = p_.beta.row(row).transpose();
      const Eigen::VectorXd proposal = current + beta_[i].draw(rng_);
      const double cur = current_poisson(by_subject_[i]);
      Eigen::MatrixXd& beta = p_.beta;
      beta.row(row) = proposal.transpose();
      const double next = poisson_sum(by_subject_[i], p_.alpha, beta, eta);
      const bool ok = std::isfinite(next) &&
                      accept(next - cur + beta_prior(proposal) - beta_prior(current), rng_);
      beta_[i].record(ok, burn_in_);
      if (ok) {
        for (std::size_t k : by_subject_[i]) eta_[k] = eta[k];
      } else {
        beta.row(row) = current.transpose();
      }
    }
  }

  // Accepts or rejects a change of reporting parameters for every subject.
  // The uniform is drawn first so that a proposal can be rejected before
  // all of its report terms are evaluated.
  bool try_report_move(const std::vector<HeapParams>& proposal, double log_prior_ratio,
                       const std::vector<std::size_t>& obs) {
    const double log_u = std::log(sample_uniform(rng_));
    const double floor = log_u + current_report_sum(obs) - log_prior_ratio;
    if (std::isnan(floor)) return false;
    std::vector<double>& next = scratch_report_;
    next = report_;
    const bool ok = std::isfinite(report_sum(obs, proposal, next, floor));
    if (ok) report_.swap(next);
    return ok;
  }

  void retain_current() {
    if (traits_.bdp) cache_.retain(hp_);
  }

  void update_theta_disp() {
    const double current = p_.theta_disp;
    const double proposal = current * std::exp(theta_.draw_scalar(rng_));
    std::vector<HeapParams> hps = hp_;
    for (auto& hp : hps) hp.theta_disp = proposal;
    const double prior_ratio =
        log_inv_gamma(proposal, hyper_.theta_shape, hyper_.theta_rate) -
        log_inv_gamma(current, hyper_.theta_shape, hyper_.theta_rate) +
        std::log(proposal) - std::log(current);
    const bool ok = std::isfinite(proposal) && proposal > 0.0 &&
                    try_report_move(hps, prior_ratio, all_obs());
    theta_.record(ok, burn_in_);
    if (ok) {
      p_.theta_disp = proposal;
      hp_ = std::move(hps);
    }
    retain_current();
  }

  void update_gamma() {
    const Eigen::VectorXd step = gamma_.draw(rng_);
    std::vector<double> proposal = p_.gamma;
    for (std::size_t j = 0; j < proposal.size(); ++j) proposal[j] += step(static_cast<Eigen::Index>(j));
    bool ok = false;
    if (gamma_is_ordered(proposal)) {
      std::vector<HeapParams> hps = hp_;
      for (auto& hp : hps) hp.gamma = proposal;
      double prior_ratio = 0.0;
      for (std::size_t j = 0; j < proposal.size(); ++j) {
        prior_ratio += log_normal(proposal[j], 0.0, hyper_.gamma_var) -
                       log_normal(p_.gamma[j], 0.0, hyper_.gamma_var);
      }
      ok = try_report_move(hps, prior_ratio, all_obs());
      if (ok) {
        p_.gamma = std::move(proposal);
        hp_ = std::move(hps);
      }
    }
    gamma_.record(ok, burn_in_);
    retain_current();
  }

  double omega_prior(const Eigen::VectorXd& omega) const {
    if (traits_.global_heap) {
      // Inverse-gamma on theta_heap = e^omega, with the log Jacobian.
      return log_inv_gamma(std::exp(omega(0)), hyper_.theta_shape, hyper_.theta_rate) +
             omega(0);
    }
    double lp = 0.0;
    for (Eigen::Index j = 0; j < omega.size(); ++j) lp += log_normal(omega(j), 0.0, hyper_.omega_var);
    return lp;
  }

  void update_omega() {
    const Eigen::VectorXd proposal = p_.omega + omega_.draw(rng_);
    ModelParams candidate;
    candidate.omega = proposal;
    candidate.xi = p_.xi;
    candidate.theta_disp = p_.theta_disp;
    candidate.gamma = p_.gamma;
    std::vector<HeapParams> hps(data_.n_subjects());
    for (std::size_t i = 0; i < hps.size(); ++i) hps[i] = build_hp(candidate, i);
    const bool ok = try_report_move(hps, omega_prior(proposal) - omega_prior(p_.omega), all_obs());
    omega_.record(ok, burn_in_);
    if (ok) {
      p_.omega = proposal;
      hp_ = std::move(hps);
    }
    retain_current();
  }

  void update_xi() {
    for (std::size_t i = 0; i < data_.n_subjects(); ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      const double current = p_.xi(row);
      const double proposal = current + xi_[i].draw_scalar(rng_);
      std::vector<HeapParams> hps = hp_;
      hps[i].theta_heap = safe_exp(design_[i].dot(p_.omega) + proposal);
      const double prior_ratio = log_normal(proposal, 0.0, p_.sigma2_xi) -
                                 log_normal(current, 0.0, p_.sigma2_xi);
      const bool ok = try_report_move(hps, prior_ratio, by_subject_[i]);
      xi_[i].record(ok, burn_in_);
      if (ok) {
        p_.xi(row) = proposal;
        hp_[i] = hps[i];
      }
    }
    retain_current();
  }

  void end_window() {
    alpha_.end_window();
    shift_.end_window();
    for (auto& b : beta_) b.end_window();
    theta_.end_window();
    gamma_.end_window();
    omega_.end_window();
    for (auto& x : xi_) x.end_window();
  }

  static double pooled_rate(const std::vector<Proposal>& props) {
    std::size_t acc = 0, tries = 0;
    for (const auto& p : props) {
      acc += p.kept_acc();
      tries += p.kept_tries();
    }
    return tries == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : static_cast<double>(acc) / tries;
  }

  static double median_scale(const std::vector<Proposal>& props) {
    std::vector<double> s;
    for (const auto& p : props) s.push_back(p.scale());
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::nth_element(s.begin(), s.begin() + s.size() / 2, s.end());
    return s[s.size() / 2];
  }

  void fill_metadata(Chain& chain) const {
    if (traits_.latent) chain.acceptance["latent"] = latent_.rate();
    chain.acceptance["alpha"] = alpha_.rate();
    chain.step_size["alpha"] = alpha_.scale();
    if (shift_.kept_tries() > 0) {
      chain.acceptance["intercept_shift"] = shift_.rate();
      chain.step_size["intercept_shift"] = shift_.scale();
    }
    chain.acceptance["beta"] = pooled_rate(beta_);
    chain.step_size["beta"] = median_scale(beta_);
    if (traits_.bdp) {
      chain.acceptance["theta_disp"] = theta_.rate();
      chain.step_size["theta_disp"] = theta_.scale();
    }
    if (traits_.regimes) {
      chain.acceptance["gamma"] = gamma_.rate();
      chain.step_size["gamma"] = gamma_.scale();
    }
    if (traits_.global_heap || traits_.subject_heap) {
      chain.acceptance["omega"] = omega_.rate();
      chain.step_size["omega"] = omega_.scale();
    }
    if (traits_.subject_heap) {
      chain.acceptance["xi"] = pooled_rate(xi_);
      chain.step_size["xi"] = median_scale(xi_);
    }
  }

  const PanelData& data_;
  const Hyperparams& hyper_;
  const ModelSpec& spec_;
  const SamplerConfig& cfg_;
  VariantTraits traits_;
  Rng rng_;
  ReportCache cache_;
  ModelParams p_;
  std::vector<std::vector<std::size_t>> by_subject_;
  std::vector<Eigen::VectorXd> design_;
  std::vector<HeapParams> hp_;
  std::vector<double> eta_;
  std::vector<double> report_;
  std::vector<double> scratch_report_;
  std::vector<std::size_t> all_obs_;
  bool burn_in_ = true;

  Proposal latent_{1, 1.0};
  Proposal alpha_;
  Proposal shift_;
  Eigen::Index w_intercept_ = -1;
  Eigen::Index z_intercept_ = -1;
  std::vector<Proposal> beta_;
  Proposal theta_;
  Proposal gamma_;
  Proposal omega_;
  std::vector<Proposal> xi_;
};

}  // namespace

std::string_view block_name(Block b) {
  for (const auto& e : kBlocks) {
    if (e.block == b) return e.name;
  }
  return "unknown";
}

Block parse_block(std::string_view name) {
  for (const auto& e : kBlocks) {
    if (e.name == name) return e.block;
  }
  throw DomainError("unknown sampler block '" + std::string(name) + "'");
}

std::vector<Block> default_block_order() {
  return {Block::Latent,    Block::Alpha, Block::Beta,  Block::SigmaBeta, Block::ThetaDisp,
          Block::Gamma,     Block::Omega, Block::Xi,    Block::SigmaXi};
}

void SamplerConfig::validate() const {
  if (!(iterations > burn_in)) throw DomainError("sampler: iterations must exceed burn-in");
  if (thin == 0) throw DomainError("sampler: thin must be >= 1");
  if (adapt_window == 0) throw DomainError("sampler: adaptation window must be >= 1");
  if (chains == 0) throw DomainError("sampler: chains must be >= 1");
  for (double s : {step_alpha, step_beta, step_theta_disp, step_gamma, step_omega, step_xi,
                   latent_inflation, latent_window, wh08_proposal_theta}) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw DomainError("sampler: step sizes and proposal settings must be > 0");
    }
  }
  std::vector<Block> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw DomainError("sampler: block order lists a block twice");
  }
}

// ---- ReportCache ----

std::size_t ReportCache::KeyHash::operator()(const Key& k) const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffu;
      h *= 1099511628211ull;
    }
  };
  mix(k.theta_disp);
  mix(k.theta_heap);
  for (double g : k.gamma) mix(g);
  return static_cast<std::size_t>(h);
}

ReportCache::Key ReportCache::key_of(const HeapParams& hp) {
  return Key{hp.theta_disp, hp.theta_heap, hp.gamma};
}

double ReportCache::log_prob(State y, State x, const HeapParams& hp) {
  if (hp.theta_disp < 1e-8 && hp.theta_heap < 1e-8) return y == x ? 0.0 : kNegInf;
  Rows& rows = rows_[key_of(hp)];
  const std::vector<double>* row = &base_row(rows, x, hp);
  if (y >= row->size()) {
    auto ext = rows.extended.find({x, y});
    if (ext == rows.extended.end()) {
      ++misses_;
      ext = rows.extended.emplace(std::make_pair(x, y), reporting_pmf(hp, x, cfg_, y)).first;
    }
    row = &ext->second;
  }
  const double gy = y < row->size() ? (*row)[y] : 0.0;
  return gy > 0.0 ? std::log(gy) : kNegInf;
}

const std::vector<double>& ReportCache::base_row(Rows& rows, State x, const HeapParams& hp) {
  auto it = rows.base.find(x);
  if (it == rows.base.end()) {
    ++misses_;
    it = rows.base.emplace(x, reporting_pmf(hp, x, cfg_)).first;
  }
  return it->second;
}

const std::vector<double>& ReportCache::row(State x, const HeapParams& hp) {
  return base_row(rows_[key_of(hp)], x, hp);
}

void ReportCache::retain(const std::vector<HeapParams>& keep) {
  std::unordered_set<Key, KeyHash> wanted;
  for (const auto& hp : keep) wanted.insert(key_of(hp));
  for (auto it = rows_.begin(); it != rows_.end();) {
    if (wanted.count(it->first) == 0) {
      it = rows_.erase(it);
    } else {
      ++it;
    }
  }
}

std::size_t ReportCache::rows() const {
  std::size_t n = 0;
  for (const auto& [key, r] : rows_) n += r.base.size() + r.extended.size();
  return n;
}

// ---- latent counts ----

LatentProposal latent_proposal(State x, double theta, double inflation, double window) {
  LatentProposal q;
  if (!(theta > 0.0)) {
    q.walk = true;
    return q;
  }
  const double xd = static_cast<double>(x);
  const double mean = xd + theta;
  const double sd = std::sqrt(inflation * ((2.0 * xd + 1.0) * theta + theta * theta));
  const double lo = std::max(0.0, std::floor(mean - window * sd));
  const double hi = std::ceil(mean + window * sd);
  if (hi <= lo) {
    q.walk = true;
    return q;
  }
  q.dist = normal_approx_pmf(x, theta, static_cast<State>(lo), static_cast<State>(hi), inflation);
  bool moves = false;
  for (std::size_t j = 0; j < q.dist.p.size(); ++j) {
    if (q.dist.offset + j != x && q.dist.p[j] > 0.0) moves = true;
  }
  if (!moves) q.walk = true;
  return q;
}

double latent_proposal_log_prob(const LatentProposal& q, State from, State to) {
  if (q.walk) {
    return (to == from + 1 || (from > 0 && to + 1 == from)) ? std::log(0.5) : kNegInf;
  }
  const double p = q.dist.at(to);
  return p > 0.0 ? std::log(p) : kNegInf;
}

State latent_mh_step(State x, const std::function<double(State)>& log_target, double theta,
                     double inflation, double window, Rng& rng, bool* accepted) {
  const LatentProposal q = latent_proposal(x, theta, inflation, window);
  State next;
  if (q.walk) {
    const bool up = sample_uniform(rng) < 0.5;
    if (!up && x == 0) {
      if (accepted) *accepted = false;
      return x;
    }
    next = up ? x + 1 : x - 1;
  } else {
    next = q.dist.offset + sample_index(q.dist.p, rng);
  }
  if (next == x) {
    if (accepted) *accepted = true;
    return x;
  }
  const double target_next = log_target(next);
  bool ok = false;
  if (std::isfinite(target_next)) {
    const LatentProposal back = latent_proposal(next, theta, inflation, window);
    const double ratio = target_next - log_target(x) +
                         latent_proposal_log_prob(back, next, x) -
                         latent_proposal_log_prob(q, x, next);
    ok = accept(ratio, rng);
  }
  if (accepted) *accepted = ok;
  return ok ? next : x;
}

std::vector<double> latent_kernel_row(State x, const std::function<double(State)>& log_target,
                                      double theta, double inflation, double window,
                                      State max_state) {
  std::vector<double> row(max_state + 1, 0.0);
  const LatentProposal q = latent_proposal(x, theta, inflation, window);
  const double here = log_target(x);
  auto visit = [&](State to, double prob) {
    if (to == x) {
      row[x] += prob;
      return;
    }
    const double there = log_target(to);
    if (!std::isfinite(there)) {
      row[x] += prob;
      return;
    }
    if (to > max_state) throw DomainError("latent_kernel_row: target mass beyond max_state");
    const LatentProposal back = latent_proposal(to, theta, inflation, window);
    const double ratio = there - here + latent_proposal_log_prob(back, to, x) -
                         latent_proposal_log_prob(q, x, to);
    const double a = ratio >= 0.0 ? 1.0 : std::exp(ratio);
    row[to] += prob * a;
    row[x] += prob * (1.0 - a);
  };
  if (q.walk) {
    visit(x + 1, 0.5);
    if (x > 0) {
      visit(x - 1, 0.5);
    } else {
      row[x] += 0.5;
    }
  } else {
    for (std::size_t j = 0; j < q.dist.p.size(); ++j) visit(q.dist.offset + j, q.dist.p[j]);
  }
  return row;
}

// ---- conjugate variances ----

Eigen::MatrixXd draw_sigma_beta(const Eigen::MatrixXd& beta, const Hyperparams& hyper,
                                Rng& rng) {
  const auto n = static_cast<double>(beta.rows());
  const auto c = beta.cols();
  if (c == 1) {
    const double shape = hyper.beta_df + 0.5 * n;
    const double rate = hyper.beta_scale + 0.5 * beta.col(0).squaredNorm();
    return Eigen::MatrixXd::Constant(1, 1, sample_inv_gamma(shape, rate, rng));
  }
  const Eigen::MatrixXd scale =
      hyper.beta_scale * Eigen::MatrixXd::Identity(c, c) + beta.transpose() * beta;
  return sample_inv_wishart(hyper.beta_df + n, scale, rng);
}

std::pair<double, double> sigma_xi_posterior(const Eigen::VectorXd& xi,
                                             const Hyperparams& hyper) {
  return {hyper.xi_shape + 0.5 * static_cast<double>(xi.size()),
          hyper.xi_rate + 0.5 * xi.squaredNorm()};
}

// ---- drivers ----

Chain run_mcmc(const PanelData& data, const Hyperparams& hyper, const ModelSpec& spec,
               const SamplerConfig& cfg, const ModelParams* init) {
  data.validate();
  hyper.validate();
  cfg.validate();
  ModelParams start = init ? *init : initial_params(data, spec);
  start.validate(spec, data);
  if (!traits(spec.variant).latent && start.x != data.y) {
    throw DomainError("run_mcmc: variant without latent counts needs X = Y");
  }
  Sampler sampler(data, hyper, spec, cfg, std::move(start));
  return sampler.run();
}

std::vector<Chain> run_chains(const PanelData& data, const Hyperparams& hyper,
                              const ModelSpec& spec, const SamplerConfig& cfg,
                              std::size_t threads) {
  cfg.validate();
  if (threads == 0) {
    if (const char* env = std::getenv("HEAPLAB_THREADS")) threads = std::strtoul(env, nullptr, 10);
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  }
  threads = std::min(threads, cfg.chains);
  std::vector<Chain> chains(cfg.chains);
  std::vector<std::exception_ptr> errors(cfg.chains);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < cfg.chains; k = next++) {
      SamplerConfig local = cfg;
      local.seed = derive_seed(cfg.seed, k);
      try {
        chains[k] = run_mcmc(data, hyper, spec, local);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return chains;
}

}  // namespace heaplab
