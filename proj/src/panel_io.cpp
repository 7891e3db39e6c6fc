#include "heaplab/panel_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "heaplab/errors.hpp"

namespace heaplab {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  s = s.substr(a, b - a);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return std::string(s);
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (char ch : line) {
    if (ch == '"') {
      quoted = !quoted;
      field.push_back(ch);
    } else if (ch == ',' && !quoted) {
      out.push_back(trim(field));
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  out.push_back(trim(field));
  return out;
}

std::string where(const std::string& source, std::size_t line, const std::string& column) {
  return source + ": line " + std::to_string(line) + ", column '" + column + "'";
}

long long parse_integer(const std::string& text, const std::string& context) {
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size()) {
    throw IngestionError(context + ": expected an integer, got '" + text + "'");
  }
  return v;
}

double parse_real(const std::string& text, const std::string& context) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
    throw IngestionError(context + ": expected a number, got '" + text + "'");
  }
  return v;
}

bool is_indicator(const Eigen::VectorXd& v) {
  return ((v.array() == 0.0) || (v.array() == 1.0)).all();
}

void standardize(Eigen::Ref<Eigen::VectorXd> v, const std::string& name) {
  if (is_indicator(v)) return;
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
  if (!(sd > 0.0)) throw IngestionError("column '" + name + "' is constant");
  v = (v.array() - mean) / sd;
}

std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

template <typename T>
void take(const Json& j, const char* key, T& field, std::vector<std::string>& seen) {
  if (j.contains(key)) {
    field = j.at(key).get<T>();
    seen.emplace_back(key);
  }
}

void reject_unknown(const Json& j, const std::vector<std::string>& seen, const std::string& section) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
      throw DomainError("config: unknown key '" + key + "' in '" + section + "'");
    }
  }
}

}  // namespace

PanelData parse_panel_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) throw IngestionError(source + ": missing header row");
  ++line_no;
  const std::vector<std::string> header = split_fields(line);
  std::map<std::string, std::size_t> index;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!index.emplace(header[c], c).second) {
      throw IngestionError(source + ": duplicate column '" + header[c] + "'");
    }
  }
  for (const char* required : {"subject_id", "time_index", "y"}) {
    if (!index.count(required)) {
      throw IngestionError(source + ": missing required column '" + std::string(required) + "'");
    }
  }
  std::vector<std::size_t> w_cols, z_cols, h_cols;
  PanelData d;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name.rfind("w_", 0) == 0) {
      w_cols.push_back(c);
    } else if (name.rfind("z_", 0) == 0) {
      z_cols.push_back(c);
    } else if (name.rfind("h_", 0) == 0) {
      h_cols.push_back(c);
    }
  }

  std::map<std::string, std::size_t> subject_index;
  std::vector<std::vector<double>> w_rows, z_rows;
  std::vector<std::vector<double>> h_values;
  std::vector<bool> h_set;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_fields(line);
    if (f.size() != header.size()) {
      throw IngestionError(source + ": line " + std::to_string(line_no) + ": expected " +
                           std::to_string(header.size()) + " fields, got " +
                           std::to_string(f.size()));
    }
    const std::string& id = f[index["subject_id"]];
    if (id.empty()) throw IngestionError(where(source, line_no, "subject_id") + ": empty id");
    auto [it, fresh] = subject_index.emplace(id, d.subject_ids.size());
    if (fresh) {
      d.subject_ids.push_back(id);
      h_values.emplace_back(h_cols.size(), 0.0);
      h_set.push_back(false);
    }
    const std::size_t s = it->second;
    d.subject.push_back(s);
    d.time_index.push_back(
        static_cast<long>(parse_integer(f[index["time_index"]], where(source, line_no, "time_index"))));
    const long long y = parse_integer(f[index["y"]], where(source, line_no, "y"));
    if (y < 0) {
      throw IngestionError(where(source, line_no, "y") + ": negative count " + std::to_string(y));
    }
    d.y.push_back(static_cast<State>(y));
    std::vector<double> w, z;
    for (std::size_t c : w_cols) w.push_back(parse_real(f[c], where(source, line_no, header[c])));
    for (std::size_t c : z_cols) z.push_back(parse_real(f[c], where(source, line_no, header[c])));
    w_rows.push_back(std::move(w));
    z_rows.push_back(std::move(z));
    for (std::size_t j = 0; j < h_cols.size(); ++j) {
      const double v = parse_real(f[h_cols[j]], where(source, line_no, header[h_cols[j]]));
      if (h_set[s] && h_values[s][j] != v) {
        throw IngestionError(where(source, line_no, header[h_cols[j]]) +
                             ": heaping covariate changes within subject '" + id + "'");
      }
      h_values[s][j] = v;
    }
    h_set[s] = true;
  }
  if (d.y.empty()) throw IngestionError(source + ": no data rows");

  const auto n = static_cast<Eigen::Index>(d.y.size());
  d.w = Eigen::MatrixXd::Ones(n, 1 + static_cast<Eigen::Index>(w_cols.size()));
  d.z = Eigen::MatrixXd::Ones(n, 1 + static_cast<Eigen::Index>(z_cols.size()));
  for (Eigen::Index r = 0; r < n; ++r) {
    for (std::size_t j = 0; j < w_cols.size(); ++j) d.w(r, 1 + static_cast<Eigen::Index>(j)) = w_rows[r][j];
    for (std::size_t j = 0; j < z_cols.size(); ++j) d.z(r, 1 + static_cast<Eigen::Index>(j)) = z_rows[r][j];
  }
  d.h = Eigen::MatrixXd(static_cast<Eigen::Index>(d.subject_ids.size()),
                        static_cast<Eigen::Index>(h_cols.size()));
  for (std::size_t s = 0; s < d.subject_ids.size(); ++s) {
    for (std::size_t j = 0; j < h_cols.size(); ++j) {
      d.h(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) = h_values[s][j];
    }
  }
  d.w_names = {"intercept"};
  d.z_names = {"intercept"};
  for (std::size_t j = 0; j < w_cols.size(); ++j) {
    d.w_names.push_back(header[w_cols[j]].substr(2));
    standardize(d.w.col(1 + static_cast<Eigen::Index>(j)), header[w_cols[j]]);
  }
  for (std::size_t j = 0; j < z_cols.size(); ++j) {
    d.z_names.push_back(header[z_cols[j]].substr(2));
    standardize(d.z.col(1 + static_cast<Eigen::Index>(j)), header[z_cols[j]]);
  }
  for (std::size_t j = 0; j < h_cols.size(); ++j) {
    d.h_names.push_back(header[h_cols[j]].substr(2));
    standardize(d.h.col(static_cast<Eigen::Index>(j)), header[h_cols[j]]);
  }
  d.validate();
  return d;
}

PanelData read_panel_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  return parse_panel_csv(in, path.string());
}

void write_panel_csv(const PanelData& data, std::ostream& out) {
  out << "subject_id,time_index,y";
  for (std::size_t j = 1; j < data.w_names.size(); ++j) out << ",w_" << data.w_names[j];
  for (std::size_t j = 1; j < data.z_names.size(); ++j) out << ",z_" << data.z_names[j];
  for (const auto& name : data.h_names) out << ",h_" << name;
  out << '\n';
  for (std::size_t k = 0; k < data.n_obs(); ++k) {
    const auto r = static_cast<Eigen::Index>(k);
    const auto s = static_cast<Eigen::Index>(data.subject[k]);
    out << data.subject_ids[data.subject[k]] << ',' << data.time_index[k] << ',' << data.y[k];
    for (Eigen::Index j = 1; j < data.w.cols(); ++j) out << ',' << format_real(data.w(r, j));
    for (Eigen::Index j = 1; j < data.z.cols(); ++j) out << ',' << format_real(data.z(r, j));
    for (Eigen::Index j = 0; j < data.h.cols(); ++j) out << ',' << format_real(data.h(s, j));
    out << '\n';
  }
}

void write_panel_csv(const PanelData& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  write_panel_csv(data, out);
}

void apply_config(const Json& j, RunConfig& run) {
  std::vector<std::string> top;
  if (j.contains("model")) {
    top.emplace_back("model");
    const Json& m = j.at("model");
    std::vector<std::string> seen;
    if (m.contains("variant")) {
      run.spec.variant = parse_variant(m.at("variant").get<std::string>());
      seen.emplace_back("variant");
    }
    take(m, "grids", run.spec.grids, seen);
    if (m.contains("solver")) {
      seen.emplace_back("solver");
      const Json& s = m.at("solver");
      std::vector<std::string> solver_seen;
      take(s, "tail_tolerance", run.spec.solver.tail_tolerance, solver_seen);
      take(s, "max_cap_doublings", run.spec.solver.max_cap_doublings, solver_seen);
      take(s, "inversion_terms", run.spec.solver.inversion_terms, solver_seen);
      take(s, "inversion_precision", run.spec.solver.inversion_precision, solver_seen);
      take(s, "target_abs_error", run.spec.solver.target_abs_error, solver_seen);
      reject_unknown(s, solver_seen, "model.solver");
    }
    reject_unknown(m, seen, "model");
  }
  if (j.contains("hyper")) {
    top.emplace_back("hyper");
    const Json& h = j.at("hyper");
    std::vector<std::string> seen;
    Hyperparams& hp = run.hyper;
    take(h, "alpha_var", hp.alpha_var, seen);
    take(h, "theta_shape", hp.theta_shape, seen);
    take(h, "theta_rate", hp.theta_rate, seen);
    take(h, "omega_var", hp.omega_var, seen);
    take(h, "gamma_var", hp.gamma_var, seen);
    take(h, "beta_df", hp.beta_df, seen);
    take(h, "beta_scale", hp.beta_scale, seen);
    take(h, "xi_shape", hp.xi_shape, seen);
    take(h, "xi_rate", hp.xi_rate, seen);
    reject_unknown(h, seen, "hyper");
  }
  if (j.contains("sampler")) {
    top.emplace_back("sampler");
    const Json& s = j.at("sampler");
    std::vector<std::string> seen;
    SamplerConfig& c = run.sampler;
    take(s, "iterations", c.iterations, seen);
    take(s, "burn_in", c.burn_in, seen);
    take(s, "thin", c.thin, seen);
    take(s, "adapt_window", c.adapt_window, seen);
    take(s, "adapt", c.adapt, seen);
    take(s, "seed", c.seed, seen);
    take(s, "chains", c.chains, seen);
    take(s, "step_alpha", c.step_alpha, seen);
    take(s, "step_beta", c.step_beta, seen);
    take(s, "step_theta_disp", c.step_theta_disp, seen);
    take(s, "step_gamma", c.step_gamma, seen);
    take(s, "step_omega", c.step_omega, seen);
    take(s, "step_xi", c.step_xi, seen);
    take(s, "latent_inflation", c.latent_inflation, seen);
    take(s, "latent_window", c.latent_window, seen);
    take(s, "wh08_proposal_theta", c.wh08_proposal_theta, seen);
    if (s.contains("order")) {
      seen.emplace_back("order");
      c.order.clear();
      for (const auto& name : s.at("order")) c.order.push_back(parse_block(name.get<std::string>()));
    }
    reject_unknown(s, seen, "sampler");
  }
  reject_unknown(j, top, "top level");
}

Json config_to_json(const RunConfig& run) {
  const SolverConfig& sv = run.spec.solver;
  const Hyperparams& h = run.hyper;
  const SamplerConfig& s = run.sampler;
  Json order = Json::array();
  for (Block b : s.order) order.push_back(std::string(block_name(b)));
  return Json{
      {"model",
       {{"variant", std::string(variant_name(run.spec.variant))},
        {"grids", run.spec.grids},
        {"solver",
         {{"tail_tolerance", sv.tail_tolerance},
          {"max_cap_doublings", sv.max_cap_doublings},
          {"inversion_terms", sv.inversion_terms},
          {"inversion_precision", sv.inversion_precision},
          {"target_abs_error", sv.target_abs_error}}}}},
      {"hyper",
       {{"alpha_var", h.alpha_var},
        {"theta_shape", h.theta_shape},
        {"theta_rate", h.theta_rate},
        {"omega_var", h.omega_var},
        {"gamma_var", h.gamma_var},
        {"beta_df", h.beta_df},
        {"beta_scale", h.beta_scale},
        {"xi_shape", h.xi_shape},
        {"xi_rate", h.xi_rate}}},
      {"sampler",
       {{"iterations", s.iterations},
        {"burn_in", s.burn_in},
        {"thin", s.thin},
        {"adapt_window", s.adapt_window},
        {"adapt", s.adapt},
        {"seed", s.seed},
        {"chains", s.chains},
        {"step_alpha", s.step_alpha},
        {"step_beta", s.step_beta},
        {"step_theta_disp", s.step_theta_disp},
        {"step_gamma", s.step_gamma},
        {"step_omega", s.step_omega},
        {"step_xi", s.step_xi},
        {"latent_inflation", s.latent_inflation},
        {"latent_window", s.latent_window},
        {"wh08_proposal_theta", s.wh08_proposal_theta},
        {"order", order}}}};
}

Json params_to_json(const ModelParams& p) {
  return Json{{"alpha", vector_to_json(p.alpha)},
              {"beta", matrix_to_json(p.beta)},
              {"sigma_beta", matrix_to_json(p.sigma_beta)},
              {"theta_disp", p.theta_disp},
              {"omega", vector_to_json(p.omega)},
              {"xi", vector_to_json(p.xi)},
              {"sigma2_xi", p.sigma2_xi},
              {"gamma", p.gamma},
              {"x", p.x}};
}

ModelParams params_from_json(const Json& j) {
  ModelParams p;
  p.alpha = vector_from_json(j.at("alpha"));
  p.beta = matrix_from_json(j.at("beta"));
  p.sigma_beta = matrix_from_json(j.at("sigma_beta"));
  p.theta_disp = j.at("theta_disp").get<double>();
  p.omega = vector_from_json(j.at("omega"));
  p.xi = vector_from_json(j.at("xi"));
  p.sigma2_xi = j.at("sigma2_xi").get<double>();
  p.gamma = j.at("gamma").get<std::vector<double>>();
  p.x = j.at("x").get<std::vector<State>>();
  return p;
}

Json report_to_json(const FitReport& r) {
  auto summaries = [](const std::vector<ParamSummary>& v) {
    Json out = Json::array();
    for (const auto& s : v) {
      out.push_back({{"name", s.name},
                     {"mean", s.mean},
                     {"var", s.var},
                     {"q025", s.q025},
                     {"q975", s.q975}});
    }
    return out;
  };
  return Json{{"variant", std::string(variant_name(r.variant))},
              {"samples", r.samples},
              {"dic",
               {{"dic", r.dic.dic}, {"d_bar", r.dic.d_bar}, {"d_hat", r.dic.d_hat}, {"p_d", r.dic.p_d}}},
              {"sspe", r.sspe},
              {"params", summaries(r.params)},
              {"midpoints", summaries(r.midpoints)},
              {"acceptance", r.acceptance}};
}

Json chain_meta_to_json(const Chain& chain, const RunConfig& run) {
  return Json{{"variant", std::string(variant_name(chain.variant))},
              {"seed", chain.seed},
              {"samples", chain.samples.size()},
              {"seconds", chain.seconds},
              {"acceptance", chain.acceptance},
              {"step_size", chain.step_size},
              {"config", config_to_json(run)}};
}

void write_chain_ndjson(const Chain& chain, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  for (std::size_t s = 0; s < chain.samples.size(); ++s) {
    Json rec = params_to_json(chain.samples[s]);
    rec["iteration"] = chain.iteration[s];
    out << rec.dump() << '\n';
  }
}

Chain read_chain_ndjson(const std::filesystem::path& path, Variant variant) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  Chain chain;
  chain.variant = variant;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      const Json rec = Json::parse(line);
      chain.samples.push_back(params_from_json(rec));
      chain.iteration.push_back(rec.at("iteration").get<std::size_t>());
    } catch (const Json::exception& e) {
      throw IngestionError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return chain;
}

void write_chain_csv(const Chain& chain, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  if (chain.samples.empty()) return;
  const ModelParams& f = chain.samples.front();
  out << "iteration";
  for (Eigen::Index j = 0; j < f.alpha.size(); ++j) out << ",alpha[" << j << ']';
  for (Eigen::Index a = 0; a < f.sigma_beta.rows(); ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) out << ",sigma_beta[" << a << ',' << b << ']';
  }
  out << ",theta_disp";
  for (Eigen::Index j = 0; j < f.omega.size(); ++j) out << ",omega[" << j << ']';
  out << ",sigma2_xi";
  for (std::size_t j = 0; j < f.gamma.size(); ++j) out << ",gamma[" << j << ']';
  for (Eigen::Index i = 0; i < f.beta.rows(); ++i) {
    for (Eigen::Index c = 0; c < f.beta.cols(); ++c) out << ",beta[" << i << ',' << c << ']';
  }
  for (Eigen::Index i = 0; i < f.xi.size(); ++i) out << ",xi[" << i << ']';
  for (std::size_t k = 0; k < f.x.size(); ++k) out << ",x[" << k << ']';
  out << '\n';
  for (std::size_t s = 0; s < chain.samples.size(); ++s) {
    const ModelParams& p = chain.samples[s];
    out << chain.iteration[s];
    for (Eigen::Index j = 0; j < p.alpha.size(); ++j) out << ',' << format_real(p.alpha(j));
    for (Eigen::Index a = 0; a < p.sigma_beta.rows(); ++a) {
      for (Eigen::Index b = 0; b <= a; ++b) out << ',' << format_real(p.sigma_beta(a, b));
    }
    out << ',' << format_real(p.theta_disp);
    for (Eigen::Index j = 0; j < p.omega.size(); ++j) out << ',' << format_real(p.omega(j));
    out << ',' << format_real(p.sigma2_xi);
    for (double g : p.gamma) out << ',' << format_real(g);
    for (Eigen::Index i = 0; i < p.beta.rows(); ++i) {
      for (Eigen::Index c = 0; c < p.beta.cols(); ++c) out << ',' << format_real(p.beta(i, c));
    }
    for (Eigen::Index i = 0; i < p.xi.size(); ++i) out << ',' << format_real(p.xi(i));
    for (State x : p.x) out << ',' << x;
    out << '\n';
  }
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << contents;
}

}  // namespace heaplab
