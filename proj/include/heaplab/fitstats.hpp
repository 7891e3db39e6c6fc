#pragma once

// Posterior summaries and goodness of fit.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "heaplab/sampler.hpp"

namespace heaplab {

struct ParamSummary {
  std::string name;
  double mean = 0.0;
  double var = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct DicResult {
  double dic = 0.0;
  double d_bar = 0.0;
  double d_hat = 0.0;
  double p_d = 0.0;
};

struct FitReport {
  Variant variant = Variant::Heaping;
  std::size_t samples = 0;
  DicResult dic;
  double sspe = 0.0;
  std::vector<ParamSummary> params;
  /// Regime midpoints -gamma_j / gamma_0, summarized per sample.
  std::vector<ParamSummary> midpoints;
  std::map<std::string, double> acceptance;

  /// Throws DomainError when no summary has this name.
  const ParamSummary& find(const std::string& name) const;
};

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double level);

/// Mean, variance and 2.5/97.5% quantiles of `values`.
ParamSummary summarize_values(const std::string& name, const std::vector<double>& values);

/// -2 log p(Y | focus parameters of the variant) at one parameter state.
double deviance(const ModelParams& p, const PanelData& data, const ModelSpec& spec,
                ReportCache* cache = nullptr);

/// Posterior means of the continuous focus parameters and per-observation
/// posterior modes of the latent counts.
ModelParams plug_in_params(const Chain& chain, const PanelData& data, const ModelSpec& spec);

/// Spiegelhalter DIC. Throws DomainError if the chain was fit under
/// another variant or is empty.
DicResult dic(const Chain& chain, const PanelData& data, const ModelSpec& spec);

/// Posterior predictive means of every report: `draws` draws per sample,
/// pushed through the variant's report mechanism.
std::vector<double> predictive_means(const Chain& chain, const PanelData& data,
                                     const ModelSpec& spec, std::size_t draws = 1,
                                     std::uint64_t seed = 1);

/// Sum of (y - y_hat)^2.
double sspe(const std::vector<State>& y, const std::vector<double>& y_hat);
double sspe(const Chain& chain, const PanelData& data, const ModelSpec& spec,
            std::size_t draws = 1, std::uint64_t seed = 1);

/// Per-parameter summaries (no fit statistics).
FitReport summarize(const Chain& chain, const PanelData& data);

/// Summaries plus DIC and SSPE.
FitReport fit_report(const Chain& chain, const PanelData& data, const ModelSpec& spec,
                     std::size_t draws = 1, std::uint64_t seed = 1);

/// Merges chains into one sample set (same variant required).
Chain pool_chains(const std::vector<Chain>& chains);

/// Averages across simulation replicates of one parameter.
struct ReplicateSummary {
  std::string name;
  double truth = 0.0;
  double mean_of_means = 0.0;
  double sd_of_means = 0.0;
  double mean_of_vars = 0.0;
  double sd_of_vars = 0.0;
  double mse = 0.0;
  /// Replicates whose 95% interval contains the truth.
  std::size_t covered = 0;
  std::size_t replicates = 0;
};

ReplicateSummary summarize_replicates(const std::string& name, double truth,
                                      const std::vector<FitReport>& reports);

}  // namespace heaplab
