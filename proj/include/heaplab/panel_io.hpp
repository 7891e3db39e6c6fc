#pragma once

// CSV panels, JSON configuration and chain persistence.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include <json.hpp>

#include "heaplab/datagen.hpp"
#include "heaplab/fitstats.hpp"
#include "heaplab/sampler.hpp"

namespace heaplab {

using Json = nlohmann::json;

/// Reads a panel. Required columns: subject_id, time_index, y. Optional
/// w_*, z_* and h_* columns become fixed-effect, random-effect and heaping
/// covariates; W and Z get a leading intercept. Columns that are not 0/1
/// indicators are standardized to mean 0 and sd 1. h_* columns must be
/// constant within a subject. Errors name the line and column.
PanelData parse_panel_csv(std::istream& in, const std::string& source = "<input>");
PanelData read_panel_csv(const std::filesystem::path& path);

/// Writes the columns read by parse_panel_csv (intercepts omitted).
void write_panel_csv(const PanelData& data, std::ostream& out);
void write_panel_csv(const PanelData& data, const std::filesystem::path& path);

/// Everything a fit needs besides the data.
struct RunConfig {
  ModelSpec spec;
  Hyperparams hyper;
  SamplerConfig sampler;
};

/// Overrides fields present in `j` ({"model": .., "hyper": .., "sampler": ..}).
void apply_config(const Json& j, RunConfig& run);
Json config_to_json(const RunConfig& run);

Json params_to_json(const ModelParams& p);
ModelParams params_from_json(const Json& j);

Json report_to_json(const FitReport& r);
Json chain_meta_to_json(const Chain& chain, const RunConfig& run);

/// One JSON record per kept sample.
void write_chain_ndjson(const Chain& chain, const std::filesystem::path& path);
/// Samples and iterations only; metadata comes from the sidecar.
Chain read_chain_ndjson(const std::filesystem::path& path, Variant variant);
/// Wide CSV: one row per kept sample, one column per scalar.
void write_chain_csv(const Chain& chain, const std::filesystem::path& path);

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 14695981039346656037ull);
std::string hex64(std::uint64_t v);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace heaplab
