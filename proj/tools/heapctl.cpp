// heapctl: simulate panels, fit heaping models, inspect chains, print pmfs.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "heaplab/datagen.hpp"
#include "heaplab/distributions.hpp"
#include "heaplab/errors.hpp"
#include "heaplab/fitstats.hpp"
#include "heaplab/heap_report.hpp"
#include "heaplab/panel_io.hpp"
#include "heaplab/sampler.hpp"

namespace fs = std::filesystem;
using namespace heaplab;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitAbort = 3;

struct SimulateArgs {
  SimConfig sim;
  std::string out = "sim";
};

struct FitArgs {
  std::string data;
  std::string config;
  std::optional<std::string> variant;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> burn_in;
  std::optional<std::size_t> thin;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> chains;
  std::string out = "fit";
  bool resume = false;
};

struct DiagnoseArgs {
  std::string run;
  std::string trace;
};

struct PmfArgs {
  double theta_disp = 0.5;
  double theta_heap = 1.0;
  std::vector<double> gamma{0.5, -5.0, -10.0, -20.0};
  std::vector<int> grids{5, 10, 50};
  State x = 10;
  State max_y = 0;
  std::string method = "laplace";
};

std::size_t thread_cap(std::size_t jobs) {
  std::size_t threads = 0;
  if (const char* env = std::getenv("HEAPLAB_THREADS")) threads = std::strtoul(env, nullptr, 10);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  return std::max<std::size_t>(1, std::min(threads, jobs));
}

std::string chain_stem(const fs::path& dir, std::size_t k) {
  return (dir / ("chain_" + std::to_string(k))).string();
}

int cmd_simulate(const SimulateArgs& a) {
  const SimulatedPanel sim = simulate_panel(a.sim);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_panel_csv(sim.data, dir / "panel.csv");
  Json truth = params_to_json(sim.truth);
  truth["theta_heap"] = a.sim.theta_heap;
  truth["sigma2_beta"] = a.sim.sigma2_beta;
  truth["config"] = {{"n_subjects", a.sim.n_subjects},
                     {"repeats", a.sim.repeats},
                     {"alpha", a.sim.alpha},
                     {"sigma2_beta", a.sim.sigma2_beta},
                     {"theta_disp", a.sim.theta_disp},
                     {"theta_heap", a.sim.theta_heap},
                     {"gamma", a.sim.gamma},
                     {"grids", a.sim.grids},
                     {"wh08", a.sim.wh08},
                     {"seed", a.sim.seed}};
  write_file(dir / "truth.json", truth.dump(2) + "\n");
  std::cout << "wrote " << sim.data.n_obs() << " observations to " << (dir / "panel.csv").string()
            << "\n";
  return 0;
}

void write_abort_dump(const fs::path& path, const SamplerAbort& e, std::size_t chain) {
  Json dump{{"chain", chain},
            {"block", e.block},
            {"iteration", e.iteration},
            {"message", e.what()},
            {"state", params_to_json(e.state)}};
  write_file(path, dump.dump(2) + "\n");
}

int cmd_fit(const FitArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  const PanelData data = read_panel_csv(a.data);
  RunConfig run;
  if (!a.config.empty()) apply_config(Json::parse(read_file(a.config)), run);
  if (a.variant) run.spec.variant = parse_variant(*a.variant);
  if (a.iterations) run.sampler.iterations = *a.iterations;
  if (a.burn_in) run.sampler.burn_in = *a.burn_in;
  if (a.thin) run.sampler.thin = *a.thin;
  if (a.seed) run.sampler.seed = *a.seed;
  if (a.chains) run.sampler.chains = *a.chains;
  run.hyper.validate();
  run.sampler.validate();

  const Json config = config_to_json(run);
  const std::string data_hash = hex64(fnv1a(read_file(a.data)));
  const std::string config_hash = hex64(fnv1a(config.dump() + data_hash));

  const fs::path dir(a.out);
  const fs::path manifest_path = dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    if (!a.resume) {
      std::cerr << "error: " << dir.string()
                << " already holds a run; pass --resume or choose another --out\n";
      return kExitUsage;
    }
    const Json old = Json::parse(read_file(manifest_path));
    if (old.value("config_hash", "") != config_hash) {
      std::cerr << "error: config hash mismatch on resume (manifest "
                << old.value("config_hash", "?") << ", current " << config_hash << ")\n";
      return kExitUsage;
    }
  }
  fs::create_directories(dir);
  Json manifest{{"variant", std::string(variant_name(run.spec.variant))},
                {"seed", run.sampler.seed},
                {"chains", run.sampler.chains},
                {"data", fs::absolute(a.data).string()},
                {"data_hash", data_hash},
                {"config_hash", config_hash},
                {"config", config},
                {"status", "running"}};
  write_file(manifest_path, manifest.dump(2) + "\n");

  const std::size_t n_chains = run.sampler.chains;
  std::vector<Chain> chains(n_chains);
  std::vector<bool> done(n_chains, false);
  for (std::size_t k = 0; k < n_chains && a.resume; ++k) {
    const std::string stem = chain_stem(dir, k);
    if (!fs::exists(stem + ".meta.json") || !fs::exists(stem + ".ndjson")) continue;
    const Json meta = Json::parse(read_file(stem + ".meta.json"));
    chains[k] = read_chain_ndjson(stem + ".ndjson", run.spec.variant);
    chains[k].seed = meta.at("seed").get<std::uint64_t>();
    chains[k].seconds = meta.at("seconds").get<double>();
    chains[k].acceptance = meta.at("acceptance").get<std::map<std::string, double>>();
    chains[k].step_size = meta.at("step_size").get<std::map<std::string, double>>();
    done[k] = true;
    std::cout << "chain " << k << ": reused " << chains[k].samples.size() << " samples\n";
  }

  std::vector<std::size_t> pending;
  for (std::size_t k = 0; k < n_chains; ++k) {
    if (!done[k]) pending.push_back(k);
  }
  std::vector<std::exception_ptr> errors(n_chains);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pending.size(); i = next++) {
      const std::size_t k = pending[i];
      SamplerConfig local = run.sampler;
      local.seed = derive_seed(run.sampler.seed, k);
      try {
        chains[k] = run_mcmc(data, run.hyper, run.spec, local);
        const std::string stem = chain_stem(dir, k);
        write_chain_ndjson(chains[k], stem + ".ndjson");
        write_chain_csv(chains[k], stem + ".csv");
        write_file(stem + ".meta.json", chain_meta_to_json(chains[k], run).dump(2) + "\n");
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t threads = thread_cap(pending.size());
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t k = 0; k < n_chains; ++k) {
    if (!errors[k]) continue;
    try {
      std::rethrow_exception(errors[k]);
    } catch (const SamplerAbort& e) {
      const fs::path dump = dir / ("abort_chain_" + std::to_string(k) + ".json");
      write_abort_dump(dump, e, k);
      std::cerr << "error: chain " << k << " aborted in block '" << e.block << "' at iteration "
                << e.iteration << ": " << e.what() << "\n"
                << "state dumped to " << dump.string() << "\n";
      return kExitAbort;
    }
  }

  const Chain pooled = pool_chains(chains);
  const FitReport report = fit_report(pooled, data, run.spec, 1, run.sampler.seed);
  Json report_json = report_to_json(report);
  write_file(dir / "report.json", report_json.dump(2) + "\n");

  const double wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  Json chain_list = Json::array();
  for (std::size_t k = 0; k < n_chains; ++k) {
    chain_list.push_back({{"file", "chain_" + std::to_string(k) + ".ndjson"},
                          {"seed", chains[k].seed},
                          {"samples", chains[k].samples.size()},
                          {"seconds", chains[k].seconds}});
  }
  manifest["chain_files"] = chain_list;
  manifest["wall_seconds"] = wall;
  manifest["status"] = "complete";
  write_file(manifest_path, manifest.dump(2) + "\n");

  std::cout << std::setprecision(6) << "variant " << variant_name(run.spec.variant) << ", "
            << pooled.samples.size() << " samples, DIC " << report.dic.dic << ", SSPE "
            << report.sspe << ", " << wall << " s\n";
  for (const auto& s : report.params) {
    std::cout << "  " << std::left << std::setw(20) << s.name << std::right << std::setw(12)
              << s.mean << "  [" << s.q025 << ", " << s.q975 << "]\n";
  }
  return 0;
}

int cmd_diagnose(const DiagnoseArgs& a) {
  const fs::path dir(a.run);
  const Json manifest = Json::parse(read_file(dir / "manifest.json"));
  const Variant variant = parse_variant(manifest.at("variant").get<std::string>());
  const std::size_t n_chains = manifest.at("chains").get<std::size_t>();
  std::vector<Chain> chains;
  for (std::size_t k = 0; k < n_chains; ++k) {
    const std::string stem = chain_stem(dir, k);
    const Json meta = Json::parse(read_file(stem + ".meta.json"));
    std::cout << "chain " << k << " (seed " << meta.at("seed") << ", " << meta.at("samples")
              << " samples, " << meta.at("seconds") << " s)\n";
    for (const auto& [block, rate] : meta.at("acceptance").items()) {
      std::cout << "  " << std::left << std::setw(12) << block << std::right
                << " acceptance " << std::setw(8) << std::setprecision(3)
                << (rate.is_null() ? std::nan("") : rate.get<double>()) << "   step "
                << meta.at("step_size").value(block, std::nan("")) << "\n";
    }
    chains.push_back(read_chain_ndjson(stem + ".ndjson", variant));
  }
  const fs::path trace = a.trace.empty() ? dir / "trace.csv" : fs::path(a.trace);
  std::ofstream out(trace);
  if (!out) throw IngestionError("cannot write '" + trace.string() + "'");
  out << std::setprecision(17);
  for (std::size_t k = 0; k < chains.size(); ++k) {
    for (std::size_t s = 0; s < chains[k].samples.size(); ++s) {
      const ModelParams& p = chains[k].samples[s];
      if (k == 0 && s == 0) {
        out << "chain,iteration";
        for (Eigen::Index j = 0; j < p.alpha.size(); ++j) out << ",alpha[" << j << ']';
        out << ",sigma_beta[0,0],theta_disp";
        for (Eigen::Index j = 0; j < p.omega.size(); ++j) out << ",omega[" << j << ']';
        out << ",sigma2_xi";
        for (std::size_t j = 0; j < p.gamma.size(); ++j) out << ",gamma[" << j << ']';
        out << '\n';
      }
      out << k << ',' << chains[k].iteration[s];
      for (Eigen::Index j = 0; j < p.alpha.size(); ++j) out << ',' << p.alpha(j);
      out << ',' << (p.sigma_beta.size() ? p.sigma_beta(0, 0) : 0.0) << ',' << p.theta_disp;
      for (Eigen::Index j = 0; j < p.omega.size(); ++j) out << ',' << p.omega(j);
      out << ',' << p.sigma2_xi;
      for (double g : p.gamma) out << ',' << g;
      out << '\n';
    }
  }
  std::cout << "trace written to " << trace.string() << "\n";
  return 0;
}

int cmd_pmf(const PmfArgs& a) {
  HeapParams hp;
  hp.theta_disp = a.theta_disp;
  hp.theta_heap = a.theta_heap;
  hp.gamma = a.gamma;
  hp.grids = a.grids;
  hp.validate();
  const SolverConfig cfg;
  std::vector<double> row;
  if (a.method == "laplace") {
    row = reporting_pmf(hp, a.x, cfg, a.max_y);
  } else if (a.method == "uniformization") {
    row = uniformization_row(heap_rates(hp, a.x), a.x, 1.0, cfg,
                             std::max(a.max_y, heap_initial_cap(hp, a.x)));
  } else {
    throw DomainError("unknown method '" + a.method + "'");
  }
  const State last = a.max_y ? a.max_y : row.size() - 1;
  std::cout << "y,probability\n" << std::setprecision(17);
  for (State y = 0; y <= last; ++y) {
    std::cout << y << ',' << (y < row.size() ? row[y] : 0.0) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent-count models for heaped longitudinal counts"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Simulate a heaped panel");
  simulate->add_option("--out", sim.out, "Output directory")->capture_default_str();
  simulate->add_option("--subjects", sim.sim.n_subjects)->capture_default_str();
  simulate->add_option("--repeats", sim.sim.repeats)->capture_default_str();
  simulate->add_option("--alpha", sim.sim.alpha)->capture_default_str();
  simulate->add_option("--sigma2-beta", sim.sim.sigma2_beta)->capture_default_str();
  simulate->add_option("--theta-disp", sim.sim.theta_disp)->capture_default_str();
  simulate->add_option("--theta-heap", sim.sim.theta_heap)->capture_default_str();
  simulate->add_option("--gamma", sim.sim.gamma)->delimiter(',');
  simulate->add_option("--grids", sim.sim.grids)->delimiter(',');
  simulate->add_flag("--wh08", sim.sim.wh08, "Report by nearest-multiple rounding");
  simulate->add_option("--seed", sim.sim.seed)->capture_default_str();

  FitArgs fit;
  auto* fitc = app.add_subcommand("fit", "Fit a model by MCMC");
  fitc->add_option("--data", fit.data, "Panel CSV")->required()->check(CLI::ExistingFile);
  fitc->add_option("--config", fit.config, "JSON config")->check(CLI::ExistingFile);
  fitc->add_option("--variant", fit.variant);
  fitc->add_option("--iterations", fit.iterations);
  fitc->add_option("--burn-in", fit.burn_in);
  fitc->add_option("--thin", fit.thin);
  fitc->add_option("--seed", fit.seed);
  fitc->add_option("--chains", fit.chains);
  fitc->add_option("--out", fit.out, "Output directory")->capture_default_str();
  fitc->add_flag("--resume", fit.resume, "Reuse finished chains of a matching run");

  DiagnoseArgs diag;
  auto* diagnose = app.add_subcommand("diagnose", "Acceptance rates and trace export");
  diagnose->add_option("--run", diag.run, "Fit output directory")->required();
  diagnose->add_option("--trace", diag.trace, "Trace CSV path (default <run>/trace.csv)");

  PmfArgs pmf;
  auto* pmfc = app.add_subcommand("pmf", "Print the reporting pmf g(y | x)");
  pmfc->add_option("--theta-disp", pmf.theta_disp)->capture_default_str();
  pmfc->add_option("--theta-heap", pmf.theta_heap)->capture_default_str();
  pmfc->add_option("--gamma", pmf.gamma)->delimiter(',');
  pmfc->add_option("--grids", pmf.grids)->delimiter(',');
  pmfc->add_option("--x", pmf.x)->capture_default_str();
  pmfc->add_option("--max-y", pmf.max_y, "Last y printed (0: whole row)");
  pmfc->add_option("--method", pmf.method)
      ->check(CLI::IsMember({"laplace", "uniformization"}))
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*fitc) return cmd_fit(fit);
    if (*diagnose) return cmd_diagnose(diag);
    if (*pmfc) return cmd_pmf(pmf);
  } catch (const SamplerAbort& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitAbort;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
