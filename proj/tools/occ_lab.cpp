// occ-lab: train, compare, analyze and sweep front end.
//
// Exit status: 0 success, 1 usage or configuration error, 2 runtime abort.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "occlab/config_io.hpp"
#include "occlab/errors.hpp"
#include "occlab/run_io.hpp"
#include "occlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace occlab;

namespace {

constexpr int kUsage = 1;
constexpr int kAbort = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out = "runs";
};

TrainConfig load(const Common& c) {
  TrainConfig cfg = c.config_path.empty() ? default_config() : load_config(c.config_path);
  apply_overrides(cfg, c.sets);
  return cfg;
}

RunManifest manifest_for(const TrainConfig& cfg, const std::string& started) {
  RunManifest m;
  m.run_id = run_id_for(cfg);
  m.config = cfg;
  m.started_at = started;
  m.finished_at = utc_timestamp();
  m.seeds = {cfg.seed};
  return m;
}

int report_aborts(const std::vector<RunResult>& runs, const std::vector<std::string>& ids) {
  int status = 0;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    if (runs[i].abort_reason) {
      std::cerr << "run " << ids[i] << " aborted: " << *runs[i].abort_reason << "\n";
      status = kAbort;
    }
  }
  return status;
}

int cmd_train(const Common& common, std::optional<std::uint64_t> seed) {
  TrainConfig cfg = load(common);
  if (seed) cfg.seed = *seed;
  const std::string started = utc_timestamp();
  const RunResult result = run_experiment(cfg);
  const RunManifest m = manifest_for(cfg, started);
  const fs::path dir = fs::path(common.out) / m.run_id;
  write_run(dir, m, result);
  std::cout << dir.string() << "\n";
  std::printf("final_window_mean %s\n", format_number(final_window_mean(result.records)).c_str());
  return report_aborts({result}, {m.run_id});
}

int cmd_compare(const Common& common, const std::string& regimes, const std::string& seeds,
                int jobs) {
  const TrainConfig base = load(common);
  const auto regime_list = parse_regime_list(regimes, base.regime.occ);
  const auto seed_list = parse_seed_list(seeds);
  const std::string started = utc_timestamp();
  const ComparisonReport rep = compare_regimes(base, regime_list, seed_list, jobs);

  const fs::path out(common.out);
  std::vector<std::string> ids;
  std::size_t k = 0;
  for (const RegimeConfig& r : regime_list) {
    for (std::uint64_t s : seed_list) {
      TrainConfig cfg = base;
      cfg.regime = r;
      cfg.seed = s;
      const RunManifest m = manifest_for(cfg, started);
      write_run(out / "runs" / m.run_id, m, rep.runs[k++]);
      ids.push_back(m.run_id);
    }
  }
  write_text(out / "summary.csv", summary_csv(rep));
  write_text(out / "regimes.csv", regime_summary_csv(rep));
  std::cout << regime_summary_csv(rep);
  return report_aborts(rep.runs, ids);
}

int cmd_analyze(const std::string& run_dir, std::vector<std::string> analyses, std::string out,
                double lambda_probe, int window) {
  const fs::path dir(run_dir);
  const RunManifest m = parse_manifest(read_text(dir / "manifest.json"));
  const auto records = parse_steps_csv(read_text(dir / "steps.csv"));
  const fs::path dest = out.empty() ? dir / "analysis" : fs::path(out);
  if (analyses.empty()) analyses = {"decomposition", "parabola", "fidelity", "transition"};
  for (const std::string& a : analyses) {
    if (a == "decomposition") {
      write_text(dest / "decomposition.csv", decomposition_csv(records));
    } else if (a == "parabola") {
      write_text(dest / "parabola.csv", parabola_csv(records, m.config.eta));
    } else if (a == "fidelity") {
      write_text(dest / "fidelity_pairs.csv", fidelity_pairs_csv(records));
      write_text(dest / "fidelity.csv", fidelity_summary_csv(records));
    } else if (a == "transition") {
      const std::string csv = transition_csv(records, m.config.eta, lambda_probe, window);
      write_text(dest / "transition.csv", csv);
      std::cout << csv;
    } else {
      throw ConfigError("unknown analysis '" + a +
                        "' (decomposition, parabola, fidelity, transition)");
    }
  }
  return 0;
}

// One run per (value, seed); results go to out/<key>=<value>/<run id>/.
int cmd_sweep(const Common& common, const std::string& key, const std::vector<std::string>& values,
              const std::string& seeds, int jobs) {
  const TrainConfig base = load(common);
  const auto seed_list = parse_seed_list(seeds);
  if (jobs < 1) throw ConfigError("--jobs must be >= 1");
  std::vector<TrainConfig> cells;
  std::vector<std::string> value_of;
  for (const std::string& v : values) {
    TrainConfig cfg = base;
    apply_override(cfg, key + "=" + v);
    for (std::uint64_t s : seed_list) {
      cfg.seed = s;
      cells.push_back(cfg);
      value_of.push_back(v);
    }
  }
  const std::string started = utc_timestamp();
  std::vector<RunResult> runs(cells.size());
  std::exception_ptr error;
  const auto n = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    try {
      runs[static_cast<std::size_t>(i)] = run_experiment(cells[static_cast<std::size_t>(i)]);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  const fs::path out(common.out);
  std::string table = "value,seed,final_mean,aborted\n";
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const RunManifest m = manifest_for(cells[i], started);
    write_run(out / (key + "=" + value_of[i]) / m.run_id, m, runs[i]);
    ids.push_back(key + "=" + value_of[i] + "/" + m.run_id);
    table += value_of[i] + "," + std::to_string(cells[i].seed) + "," +
             format_number(final_window_mean(runs[i].records)) + "," +
             (runs[i].abort_reason ? "1" : "0") + "\n";
  }
  write_text(out / "sweep.csv", table);
  std::cout << table;
  return report_aborts(runs, ids);
}

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "Config file (flat dotted keys)");
  cmd->add_option("--set", c.sets, "Override, key=value (repeatable)");
  cmd->add_option("--out", c.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"occ-lab: MTP coefficient calibration lab"};
  app.require_subcommand(1);

  Common train_c, compare_c, sweep_c;
  std::optional<std::uint64_t> seed;
  auto* train = app.add_subcommand("train", "Run one experiment");
  add_common(train, train_c);
  train->add_option("--seed", seed, "Seed override");

  std::string regimes, seeds = "0";
  int jobs = 1;
  auto* compare = app.add_subcommand("compare", "Run regimes x seeds and summarize");
  add_common(compare, compare_c);
  compare->add_option("--regimes", regimes, "detach,ce:0.5,policy:9,occ-noclip,occ-clip")->required();
  compare->add_option("--seeds", seeds, "Seeds, e.g. 0,1,2 or 0-4");
  compare->add_option("--jobs", jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  std::string run_dir, analyze_out;
  std::vector<std::string> analyses;
  double lambda_probe = 9.0;
  int window = 10;
  auto* analyze = app.add_subcommand("analyze", "Emit plot-data CSVs for a run directory");
  analyze->add_option("--run", run_dir, "Run directory")->required();
  analyze->add_option("--analyses", analyses, "decomposition parabola fidelity transition")
      ->delimiter(',');
  analyze->add_option("--out", analyze_out, "Output directory (default run/analysis)");
  analyze->add_option("--lambda-probe", lambda_probe, "Coefficient for the transition analysis");
  analyze->add_option("--window", window, "Sustained-window length")->check(CLI::PositiveNumber);

  std::string key, sweep_seeds = "0";
  std::vector<std::string> values;
  int sweep_jobs = 1;
  auto* sweep = app.add_subcommand("sweep", "Run one config key over a list of values");
  add_common(sweep, sweep_c);
  sweep->add_option("--param", key, "Config key to vary")->required();
  sweep->add_option("--values", values, "Comma-separated values")->delimiter(',')->required();
  sweep->add_option("--seeds", sweep_seeds, "Seeds, e.g. 0,1,2 or 0-4");
  sweep->add_option("--jobs", sweep_jobs, "Concurrent runs")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*train) return cmd_train(train_c, seed);
    if (*compare) return cmd_compare(compare_c, regimes, seeds, jobs);
    if (*analyze) return cmd_analyze(run_dir, analyses, analyze_out, lambda_probe, window);
    if (*sweep) return cmd_sweep(sweep_c, key, values, sweep_seeds, sweep_jobs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const TrainingAborted& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return kAbort;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return kAbort;
  }
  return kUsage;
}
