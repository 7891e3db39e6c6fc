#include "heaplab/fitstats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "heaplab/errors.hpp"

namespace heaplab {

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double var_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

void require_chain(const Chain& chain, const ModelSpec& spec) {
  if (chain.samples.empty()) throw DomainError("fit statistics need a nonempty chain");
  if (chain.variant != spec.variant) {
    throw DomainError("chain variant '" + std::string(variant_name(chain.variant)) +
                      "' differs from the requested '" +
                      std::string(variant_name(spec.variant)) + "'");
  }
}

std::vector<HeapParams> all_heap_params(const PanelData& data, const ModelParams& p,
                                        const ModelSpec& spec) {
  std::vector<HeapParams> out(data.n_subjects());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = subject_heap_params(data, p, spec, i);
  return out;
}

}  // namespace

const ParamSummary& FitReport::find(const std::string& name) const {
  for (const auto& p : params) {
    if (p.name == name) return p;
  }
  for (const auto& p : midpoints) {
    if (p.name == name) return p;
  }
  throw DomainError("no summary named '" + name + "'");
}

double quantile(std::vector<double> values, double level) {
  if (values.empty()) throw DomainError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = level * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

ParamSummary summarize_values(const std::string& name, const std::vector<double>& values) {
  ParamSummary s;
  s.name = name;
  s.mean = mean_of(values);
  s.var = var_of(values);
  s.q025 = quantile(values, 0.025);
  s.q975 = quantile(values, 0.975);
  return s;
}

double deviance(const ModelParams& p, const PanelData& data, const ModelSpec& spec,
                ReportCache* cache) {
  const VariantTraits t = traits(spec.variant);
  double ll = 0.0;
  if (!t.latent) {
    for (std::size_t k = 0; k < data.n_obs(); ++k) {
      ll += log_poisson(data.y[k], obs_intensity(data, p, k));
    }
    return -2.0 * ll;
  }
  if (t.bdp && cache) {
    const auto hps = all_heap_params(data, p, spec);
    for (std::size_t k = 0; k < data.n_obs(); ++k) {
      ll += cache->log_prob(data.y[k], p.x[k], hps[data.subject[k]]);
    }
    return -2.0 * ll;
  }
  for (std::size_t k = 0; k < data.n_obs(); ++k) ll += report_log_prob(data, p, spec, k);
  return -2.0 * ll;
}

ModelParams plug_in_params(const Chain& chain, const PanelData& data, const ModelSpec& spec) {
  require_chain(chain, spec);
  const VariantTraits t = traits(spec.variant);
  const double n = static_cast<double>(chain.samples.size());
  ModelParams out = chain.samples.front();
  out.alpha.setZero();
  out.beta.setZero();
  out.sigma_beta.setZero();
  out.theta_disp = 0.0;
  out.sigma2_xi = 0.0;
  std::fill(out.gamma.begin(), out.gamma.end(), 0.0);
  Eigen::VectorXd omega_mean = Eigen::VectorXd::Zero(out.omega.size());
  std::vector<double> heap_mean(data.n_subjects(), 0.0);
  for (const auto& s : chain.samples) {
    out.alpha += s.alpha / n;
    out.beta += s.beta / n;
    out.sigma_beta += s.sigma_beta / n;
    out.theta_disp += s.theta_disp / n;
    out.sigma2_xi += s.sigma2_xi / n;
    for (std::size_t j = 0; j < out.gamma.size(); ++j) out.gamma[j] += s.gamma[j] / n;
    omega_mean += s.omega / n;
    if (t.global_heap || t.subject_heap) {
      for (std::size_t i = 0; i < data.n_subjects(); ++i) {
        heap_mean[i] += heap_intensity(data, s, spec, i) / n;
      }
    }
  }
  if (t.global_heap) {
    out.omega(0) = std::log(heap_mean[0]);
  } else if (t.subject_heap) {
    // Keep omega at its mean and absorb each subject's mean intensity in xi.
    out.omega = omega_mean;
    for (std::size_t i = 0; i < data.n_subjects(); ++i) {
      out.xi(static_cast<Eigen::Index>(i)) =
          std::log(heap_mean[i]) - heap_design(data, i, spec.variant).dot(omega_mean);
    }
  }
  for (std::size_t k = 0; k < data.n_obs(); ++k) {
    std::map<State, std::size_t> counts;
    for (const auto& s : chain.samples) ++counts[s.x[k]];
    State mode = 0;
    std::size_t best = 0;
    for (const auto& [value, c] : counts) {
      if (c > best) {
        best = c;
        mode = value;
      }
    }
    out.x[k] = mode;
  }
  return out;
}

DicResult dic(const Chain& chain, const PanelData& data, const ModelSpec& spec) {
  require_chain(chain, spec);
  ReportCache cache(spec.solver);
  DicResult r;
  for (const auto& s : chain.samples) {
    r.d_bar += deviance(s, data, spec, &cache);
    if (traits(spec.variant).bdp) cache.retain(all_heap_params(data, s, spec));
  }
  r.d_bar /= static_cast<double>(chain.samples.size());
  r.d_hat = deviance(plug_in_params(chain, data, spec), data, spec, &cache);
  r.p_d = r.d_bar - r.d_hat;
  r.dic = r.d_bar + r.p_d;
  return r;
}

std::vector<double> predictive_means(const Chain& chain, const PanelData& data,
                                     const ModelSpec& spec, std::size_t draws,
                                     std::uint64_t seed) {
  require_chain(chain, spec);
  if (draws == 0) throw DomainError("predictive_means: draws must be >= 1");
  const VariantTraits t = traits(spec.variant);
  Rng rng(seed);
  ReportCache cache(spec.solver);
  std::vector<double> total(data.n_obs(), 0.0);
  for (const auto& s : chain.samples) {
    const auto hps = t.bdp ? all_heap_params(data, s, spec) : std::vector<HeapParams>{};
    for (std::size_t k = 0; k < data.n_obs(); ++k) {
      for (std::size_t d = 0; d < draws; ++d) {
        State y;
        if (!t.latent) {
          std::poisson_distribution<State> poisson(obs_intensity(data, s, k));
          y = poisson(rng);
        } else if (t.wh08) {
          y = wh08_report(s.x[k], s.gamma, spec.grids, rng);
        } else {
          const HeapParams& hp = hps[data.subject[k]];
          y = hp.theta_disp < 1e-8 && hp.theta_heap < 1e-8
                  ? s.x[k]
                  : sample_index(cache.row(s.x[k], hp), rng);
        }
        total[k] += static_cast<double>(y);
      }
    }
    if (t.bdp) cache.retain(hps);
  }
  const double n = static_cast<double>(chain.samples.size() * draws);
  for (double& v : total) v /= n;
  return total;
}

double sspe(const std::vector<State>& y, const std::vector<double>& y_hat) {
  if (y.size() != y_hat.size()) throw DomainError("sspe: length mismatch");
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const double d = static_cast<double>(y[k]) - y_hat[k];
    s += d * d;
  }
  return s;
}

double sspe(const Chain& chain, const PanelData& data, const ModelSpec& spec,
            std::size_t draws, std::uint64_t seed) {
  return sspe(data.y, predictive_means(chain, data, spec, draws, seed));
}

FitReport summarize(const Chain& chain, const PanelData& data) {
  if (chain.samples.empty()) throw DomainError("summarize: empty chain");
  const VariantTraits t = traits(chain.variant);
  FitReport report;
  report.variant = chain.variant;
  report.samples = chain.samples.size();
  report.acceptance = chain.acceptance;
  auto collect = [&](const std::string& name, auto&& get) {
    std::vector<double> v;
    v.reserve(chain.samples.size());
    for (const auto& s : chain.samples) v.push_back(get(s));
    report.params.push_back(summarize_values(name, v));
  };
  const auto& first = chain.samples.front();
  for (Eigen::Index j = 0; j < first.alpha.size(); ++j) {
    const std::string label =
        static_cast<std::size_t>(j) < data.w_names.size() ? data.w_names[j] : std::to_string(j);
    collect("alpha[" + label + "]", [j](const ModelParams& s) { return s.alpha(j); });
  }
  if (first.sigma_beta.rows() == 1) {
    collect("sigma2_beta", [](const ModelParams& s) { return s.sigma_beta(0, 0); });
  } else {
    for (Eigen::Index a = 0; a < first.sigma_beta.rows(); ++a) {
      for (Eigen::Index b = 0; b <= a; ++b) {
        collect("sigma_beta[" + std::to_string(a) + "," + std::to_string(b) + "]",
                [a, b](const ModelParams& s) { return s.sigma_beta(a, b); });
      }
    }
  }
  if (t.bdp) collect("theta_disp", [](const ModelParams& s) { return s.theta_disp; });
  if (t.global_heap) {
    collect("theta_heap", [](const ModelParams& s) { return std::exp(s.omega(0)); });
  }
  if (t.subject_heap) {
    for (Eigen::Index j = 0; j < first.omega.size(); ++j) {
      const std::string label =
          j == 0 ? "intercept"
                 : (static_cast<std::size_t>(j - 1) < data.h_names.size() ? data.h_names[j - 1]
                                                                          : std::to_string(j));
      collect("omega[" + label + "]", [j](const ModelParams& s) { return s.omega(j); });
    }
    collect("sigma2_xi", [](const ModelParams& s) { return s.sigma2_xi; });
  }
  if (t.regimes) {
    for (std::size_t j = 0; j < first.gamma.size(); ++j) {
      collect("gamma[" + std::to_string(j) + "]",
              [j](const ModelParams& s) { return s.gamma[j]; });
    }
    for (std::size_t j = 1; j < first.gamma.size(); ++j) {
      std::vector<double> v;
      for (const auto& s : chain.samples) v.push_back(-s.gamma[j] / s.gamma[0]);
      report.midpoints.push_back(summarize_values("midpoint[" + std::to_string(j) + "]", v));
    }
  }
  return report;
}

FitReport fit_report(const Chain& chain, const PanelData& data, const ModelSpec& spec,
                     std::size_t draws, std::uint64_t seed) {
  require_chain(chain, spec);
  FitReport report = summarize(chain, data);
  report.dic = dic(chain, data, spec);
  report.sspe = sspe(chain, data, spec, draws, seed);
  return report;
}

Chain pool_chains(const std::vector<Chain>& chains) {
  if (chains.empty()) throw DomainError("pool_chains: no chains");
  Chain out;
  out.variant = chains.front().variant;
  out.seed = chains.front().seed;
  for (const auto& c : chains) {
    if (c.variant != out.variant) throw DomainError("pool_chains: variants differ");
    out.samples.insert(out.samples.end(), c.samples.begin(), c.samples.end());
    out.iteration.insert(out.iteration.end(), c.iteration.begin(), c.iteration.end());
    for (const auto& [k, v] : c.acceptance) out.acceptance[k] += v / chains.size();
    for (const auto& [k, v] : c.step_size) out.step_size[k] += v / chains.size();
    out.seconds += c.seconds;
  }
  return out;
}

ReplicateSummary summarize_replicates(const std::string& name, double truth,
                                      const std::vector<FitReport>& reports) {
  if (reports.empty()) throw DomainError("summarize_replicates: no reports");
  ReplicateSummary r;
  r.name = name;
  r.truth = truth;
  r.replicates = reports.size();
  std::vector<double> means, vars;
  double sq = 0.0;
  for (const auto& rep : reports) {
    const ParamSummary& p = rep.find(name);
    means.push_back(p.mean);
    vars.push_back(p.var);
    sq += (p.mean - truth) * (p.mean - truth);
    if (p.q025 <= truth && truth <= p.q975) ++r.covered;
  }
  r.mean_of_means = mean_of(means);
  r.sd_of_means = std::sqrt(var_of(means));
  r.mean_of_vars = mean_of(vars);
  r.sd_of_vars = std::sqrt(var_of(vars));
  r.mse = sq / static_cast<double>(reports.size());
  return r;
}

}  // namespace heaplab
