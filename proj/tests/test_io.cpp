#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "occlab/config_io.hpp"
#include "occlab/errors.hpp"
#include "occlab/gain.hpp"
#include "occlab/run_io.hpp"
#include "test_util.hpp"

using namespace occlab;
using namespace occlab::testing;
namespace fs = std::filesystem;

namespace {

std::vector<std::vector<std::string>> read_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::string message_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("occlab_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(OCC_LAB_BIN) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kSmall =
    "--set model.vocab_size=4 --set task.vocab_size=4 --set train.batch=16 --set train.steps=4";

std::vector<StepRecord> instrumented_records() {
  TrainConfig c = default_config();
  c.model.vocab_size = 4;
  c.task = make_sum_mod(4);
  c.batch = 16;
  c.steps = 5;
  c.eta = 1.0;
  c.regime.regime = Regime::PolicyLoss;
  c.regime.fixed_lambda = 2.0;
  c.instrument_exact = true;
  return run_experiment(c).records;
}

}  // namespace

TEST(Config, RoundTripsEveryKey) {
  TrainConfig c = default_config(Backend::TinyMLP);
  c.eta = 0.1 + 0.2;  // not exactly representable in short decimal
  c.task = make_copy_reverse(16, 3);
  c.algo = AlgoConfig::defaults_for(Algo::DapoLite);
  c.regime.regime = Regime::OCC;
  c.regime.occ.clip_mode = ClipMode::Clip;
  c.regime.occ.proxy_backend = ProxyBackend::FirstOrder;
  c.seed = 123456789012345ull;
  c.instrument_exact = true;
  const std::string text = serialize_config(c);
  EXPECT_EQ(parse_config(text), c);
  for (const std::string& key : config_keys()) {
    EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
  }
}

TEST(Config, MissingKeysKeepBackendDefaults) {
  EXPECT_EQ(parse_config("model.backend = mlp\n"), default_config(Backend::TinyMLP));
  EXPECT_EQ(parse_config("# nothing\n\n"), default_config(Backend::TabularSoftmax));
}

TEST(Config, ErrorsNameTheLine) {
  const std::string unknown = message_of([] { parse_config("train.eta = 1\ntrain.etta = 2\n", "a.cfg"); });
  EXPECT_NE(unknown.find("a.cfg:2"), std::string::npos) << unknown;
  EXPECT_NE(unknown.find("train.etta"), std::string::npos);
  const std::string dup = message_of([] { parse_config("train.eta = 1\n\ntrain.eta = 2\n", "b.cfg"); });
  EXPECT_NE(dup.find("b.cfg:3"), std::string::npos) << dup;
  EXPECT_NE(dup.find("line 1"), std::string::npos) << dup;
  const std::string bad = message_of([] { parse_config("train.steps = many\n", "c.cfg"); });
  EXPECT_NE(bad.find("c.cfg:1"), std::string::npos) << bad;
  EXPECT_THROW(parse_config("regime.kind = sometimes\n"), ConfigError);
  EXPECT_THROW(parse_config("train.eta\n"), ConfigError);
  EXPECT_THROW(parse_config("train.batch = 30\n"), ConfigError);
  EXPECT_THROW(load_config("/nonexistent/occlab.cfg"), ConfigError);
}

TEST(Config, Overrides) {
  TrainConfig c = default_config();
  apply_override(c, "train.eta=0.5");
  apply_override(c, "occ.clip_mode = clip");
  EXPECT_EQ(c.eta, 0.5);
  EXPECT_EQ(c.regime.occ.clip_mode, ClipMode::Clip);
  EXPECT_THROW(apply_override(c, "train.eta"), ConfigError);
  EXPECT_THROW(apply_override(c, "no.such=1"), ConfigError);
  EXPECT_THROW(apply_override(c, "train.group=3"), ConfigError);
  // Coupled keys change together and validation runs once at the end.
  const std::vector<std::string> both = {"model.vocab_size=4", "task.vocab_size=4"};
  apply_overrides(c, both);
  EXPECT_EQ(c.model.vocab_size, 4);
  const std::vector<std::string> half = {"model.vocab_size=5"};
  EXPECT_THROW(apply_overrides(c, half), ConfigError);
  EXPECT_EQ(c.model.vocab_size, 4);
}

TEST(Config, RegimeSpecs) {
  EXPECT_EQ(parse_regime_spec("detach").regime, Regime::Detach);
  const RegimeConfig ce = parse_regime_spec("ce:0.5");
  EXPECT_EQ(ce.regime, Regime::CrossEntropy);
  EXPECT_EQ(ce.fixed_lambda, 0.5);
  EXPECT_EQ(parse_regime_spec("policy:9").fixed_lambda, 9.0);
  OccConfig occ;
  occ.lambda_plus = 0.25;
  const RegimeConfig clip = parse_regime_spec("occ-clip", occ);
  EXPECT_EQ(clip.occ.clip_mode, ClipMode::Clip);
  EXPECT_EQ(clip.occ.lambda_plus, 0.25);
  EXPECT_EQ(parse_regime_spec("occ-noclip").occ.clip_mode, ClipMode::NoClip);
  EXPECT_THROW(parse_regime_spec("ce"), ConfigError);
  EXPECT_THROW(parse_regime_spec("ce:x"), ConfigError);
  EXPECT_THROW(parse_regime_spec("bogus"), ConfigError);
  EXPECT_EQ(parse_regime_list("detach,occ-clip").size(), 2u);
  for (const char* s : {"detach", "ce:0.5", "policy:9", "occ-noclip", "occ-clip"}) {
    EXPECT_EQ(regime_label(parse_regime_spec(s)), s);
  }
}

TEST(Config, SeedLists) {
  EXPECT_EQ(parse_seed_list("0,1,2"), (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(parse_seed_list("3-5,9"), (std::vector<std::uint64_t>{3, 4, 5, 9}));
  EXPECT_THROW(parse_seed_list("5-3"), ConfigError);
  EXPECT_THROW(parse_seed_list("a"), ConfigError);
  EXPECT_THROW(parse_seed_list(""), ConfigError);
}

TEST(Config, NumbersRoundTrip) {
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 12345.678, -2.5, 0.0}) {
    EXPECT_EQ(std::stod(format_number(v)), v);
  }
  EXPECT_EQ(format_number(10.0), "10");
}

TEST(Artifacts, StepsCsvRoundTrip) {
  const auto recs = instrumented_records();
  const std::string text = steps_csv(recs);
  EXPECT_EQ(parse_steps_csv(text), recs);
  const auto rows = read_csv(text);
  ASSERT_EQ(rows.size(), recs.size() + 1);
  EXPECT_EQ(rows[0], steps_columns());
  EXPECT_THROW(parse_steps_csv("step,reward\n1,2\n"), InputError);
  std::string broken = text;
  broken.replace(broken.rfind('\n', broken.size() - 2) + 1, 1, "x");
  EXPECT_THROW(parse_steps_csv(broken), InputError);
}

TEST(Artifacts, EmptyOptionalsAreEmptyCells) {
  StepRecord r;
  r.step = 3;
  r.mean_reward = 0.5;
  const auto rows = read_csv(steps_csv({r}));
  ASSERT_EQ(rows[1].size(), steps_columns().size());
  EXPECT_EQ(rows[1][3], "");  // c_hat
  EXPECT_EQ(parse_steps_csv(steps_csv({r})).at(0), r);
}

TEST(Artifacts, ManifestRoundTrip) {
  RunManifest m;
  m.config = default_config(Backend::TinyMLP);
  m.config.regime.regime = Regime::CrossEntropy;
  m.config.regime.fixed_lambda = 0.5;
  m.config.seed = 3;
  m.run_id = run_id_for(m.config);
  EXPECT_EQ(m.run_id, "ce-0.5_s3");
  m.started_at = "2026-01-01T00:00:00Z";
  m.finished_at = utc_timestamp();
  m.seeds = {3};
  m.files = {"steps.csv"};
  m.abort_reason = "non-finite parameters at step 2";
  const RunManifest back = parse_manifest(manifest_json(m));
  EXPECT_EQ(back.run_id, m.run_id);
  EXPECT_EQ(back.config, m.config);
  EXPECT_EQ(back.artifact_version, kArtifactVersion);
  EXPECT_EQ(back.seeds, m.seeds);
  EXPECT_EQ(back.files, m.files);
  EXPECT_EQ(back.abort_reason, m.abort_reason);
  EXPECT_THROW(parse_manifest("[1, 2]"), InputError);
  EXPECT_THROW(parse_manifest("not json"), InputError);
}

TEST(Analyses, DecompositionSums) {
  const auto recs = instrumented_records();
  const auto rows = read_csv(decomposition_csv(recs));
  ASSERT_EQ(rows[0], (std::vector<std::string>{"step", "first_order", "second_order", "delta_mtp"}));
  int checked = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i][3].empty()) continue;
    EXPECT_NEAR(std::stod(rows[i][1]) + std::stod(rows[i][2]), std::stod(rows[i][3]), 1e-12);
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

// The emitted vertex agrees with the closed forms evaluated independently.
TEST(Analyses, ParabolaVertex) {
  const auto recs = instrumented_records();
  const auto rows = read_csv(parabola_csv(recs, 1.0));
  ASSERT_EQ(rows[0], (std::vector<std::string>{"step", "a", "b", "lambda_star", "delta_at_star"}));
  int checked = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const StepRecord& r = recs[i - 1];
    if (rows[i][3].empty()) continue;
    const double ls = lambda_star(*r.c_exact, *r.v2_exact, 1.0, *r.L_estimate);
    const double best = gain_at_optimum(*r.c_exact, *r.v2_exact, 1.0, *r.L_estimate);
    EXPECT_NEAR(std::stod(rows[i][3]), ls, 1e-9 * std::max(1.0, std::abs(ls)));
    EXPECT_NEAR(std::stod(rows[i][4]), best, 1e-9 * std::max(1.0, std::abs(best)));
    ++checked;
  }
  EXPECT_GT(checked, 0);
}

TEST(Analyses, FidelityNeedsExactColumns) {
  StepRecord r;
  r.c_hat = 1.0;
  r.v2_hat = 1.0;
  const std::string msg = message_of([&] { fidelity_summary_csv({r, r, r}); });
  EXPECT_NE(msg.find("c_exact"), std::string::npos) << msg;
  EXPECT_THROW(decomposition_csv({r}), InputError);
}

TEST(Analyses, FidelityOfInstrumentedRun) {
  const auto recs = instrumented_records();
  const auto rows = read_csv(fidelity_summary_csv(recs));
  ASSERT_EQ(rows[0], (std::vector<std::string>{"pearson_c", "pearson_v2", "n"}));
  EXPECT_EQ(rows[1][2], std::to_string(recs.size()));
  EXPECT_EQ(read_csv(fidelity_pairs_csv(recs)).size(), recs.size() + 1);
}

TEST(Analyses, TransitionCsv) {
  std::vector<StepRecord> recs;
  for (int t = 0; t < 50; ++t) {
    StepRecord r;
    r.step = t;
    r.c_exact = 1.0 - 0.02 * t;
    r.v2_exact = 1.0;
    r.L_estimate = 1.0;
    recs.push_back(r);
  }
  const auto rows = read_csv(transition_csv(recs, 0.1, 9.0, 10));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1], (std::vector<std::string>{"9", "10", "26"}));
}

TEST(Cli, TrainIsDeterministic) {
  const fs::path a = scratch("train_a"), b = scratch("train_b");
  ASSERT_EQ(run_cli("train " + kSmall + " --out " + a.string()), 0);
  ASSERT_EQ(run_cli("train " + kSmall + " --out " + b.string()), 0);
  const std::string id = "detach_s0";
  EXPECT_EQ(read_text(a / id / "steps.csv"), read_text(b / id / "steps.csv"));
  const RunManifest m = parse_manifest(read_text(a / id / "manifest.json"));
  EXPECT_EQ(m.config.steps, 4);
  EXPECT_EQ(parse_steps_csv(read_text(a / id / "steps.csv")).size(), 4u);
}

TEST(Cli, CompareSummariesAgree) {
  const fs::path out = scratch("compare");
  ASSERT_EQ(run_cli("compare " + kSmall + " --regimes detach,occ-clip --seeds 0-2 --jobs 2 --out " +
                    out.string()),
            0);
  const auto cells = read_csv(read_text(out / "summary.csv"));
  const auto regimes = read_csv(read_text(out / "regimes.csv"));
  ASSERT_EQ(cells.size(), 7u);
  ASSERT_EQ(regimes.size(), 3u);
  // Every summary cell against its run's own steps.csv.
  std::map<std::string, double> sums;
  for (std::size_t i = 1; i < cells.size(); ++i) {
    const fs::path steps = out / "runs" / (cells[i][0] + "_s" + cells[i][1]) / "steps.csv";
    const double own = final_window_mean(parse_steps_csv(read_text(steps)));
    EXPECT_NEAR(std::stod(cells[i][2]), own, 1e-9) << steps;
    sums[cells[i][0]] += own / 3.0;
  }
  for (std::size_t i = 1; i < regimes.size(); ++i) {
    EXPECT_NEAR(std::stod(regimes[i][2]), sums.at(regimes[i][0]), 1e-9);
  }
}

TEST(Cli, SingleCellCompare) {
  const fs::path out = scratch("compare_one");
  ASSERT_EQ(run_cli("compare " + kSmall + " --regimes detach --seeds 0 --out " + out.string()), 0);
  EXPECT_EQ(read_csv(read_text(out / "summary.csv")).size(), 2u);
}

TEST(Cli, SeedOverrideChangesResults) {
  const fs::path out = scratch("seeds");
  ASSERT_EQ(run_cli("train " + kSmall + " --out " + out.string()), 0);
  ASSERT_EQ(run_cli("train " + kSmall + " --seed 7 --out " + out.string()), 0);
  EXPECT_NE(read_text(out / "detach_s0" / "steps.csv"), read_text(out / "detach_s7" / "steps.csv"));
}

TEST(Cli, AnalyzeWritesPlotData) {
  const fs::path out = scratch("analyze");
  ASSERT_EQ(run_cli("train " + kSmall +
                    " --set train.instrument_exact=true --set train.eta=1 --set regime.kind=policy"
                    " --set regime.lambda=2 --out " + out.string()),
            0);
  const fs::path run = out / "policy-2_s0";
  ASSERT_EQ(run_cli("analyze --run " + run.string()), 0);
  for (const char* f : {"decomposition.csv", "parabola.csv", "fidelity.csv", "transition.csv"}) {
    EXPECT_TRUE(fs::exists(run / "analysis" / f)) << f;
  }
}

TEST(Cli, ExitCodes) {
  const fs::path out = scratch("codes");
  ASSERT_EQ(run_cli("train " + kSmall + " --out " + out.string()), 0);
  // Uninstrumented run: the analysis has no exact columns to read.
  EXPECT_EQ(run_cli("analyze --run " + (out / "detach_s0").string() + " --analyses fidelity"), 1);
  EXPECT_EQ(run_cli("train --set train.eta=-1 --out " + out.string()), 1);
  EXPECT_EQ(run_cli("train " + kSmall + " --set train.eta=1e5 --set regime.kind=ce"
                    " --set regime.lambda=1e307 --out " + out.string()),
            2);
}

TEST(Cli, SweepWritesOneRunPerCell) {
  const fs::path out = scratch("sweep");
  ASSERT_EQ(run_cli("sweep " + kSmall + " --param train.eta --values 1,2 --seeds 0-1 --out " +
                    out.string()),
            0);
  const auto rows = read_csv(read_text(out / "sweep.csv"));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[1][0], "1");
  EXPECT_EQ(rows[4][0], "2");
  EXPECT_EQ(rows[4][1], "1");
  EXPECT_EQ(parse_manifest(read_text(out / "train.eta=2" / "detach_s1" / "manifest.json")).config.eta, 2.0);
}
