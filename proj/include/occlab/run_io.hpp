#pragma once

// Run persistence and plot-data emission.
//
// Layout of one run directory:
//   manifest.json   run id, config snapshot, version, timestamps, seeds, files
//   steps.csv       one row per StepRecord, columns as in steps_columns()
//   events.jsonl    one JSON object per Event
//   analysis/*.csv  written by the analyze command
// Numbers use the shortest round-trip decimal form; unpopulated optionals are
// empty cells.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "occlab/trainer.hpp"

namespace occlab {

inline constexpr std::string_view kArtifactVersion = "0.1.0";

/// step, mean_reward, lambda_used, c_hat, v2_hat, c_exact, v2_exact,
/// first_order, second_order, delta_mtp, grad_norm_rl, grad_norm_mtp,
/// forward_pass_count, L_estimate
const std::vector<std::string>& steps_columns();

std::string steps_csv(const std::vector<StepRecord>& records);

/// Inverse of steps_csv. InputError on a wrong header or malformed cell.
std::vector<StepRecord> parse_steps_csv(std::string_view text);

std::string events_jsonl(const std::vector<Event>& events);

struct RunManifest {
  std::string run_id;
  TrainConfig config;
  std::string artifact_version{kArtifactVersion};
  std::string started_at;  // ISO-8601 UTC
  std::string finished_at;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> files;
  std::optional<std::string> abort_reason;
};

std::string manifest_json(const RunManifest& manifest);

/// InputError when the text is not a manifest; ConfigError when its config
/// snapshot does not parse.
RunManifest parse_manifest(std::string_view text);

/// Directory-safe id from the regime label and seed, e.g. ce-0.5_s3.
std::string run_id_for(const TrainConfig& config);

std::string utc_timestamp();

/// Writes manifest.json, steps.csv and events.jsonl into `dir` (created if
/// needed) and records the file inventory in the written manifest.
void write_run(const std::filesystem::path& dir, RunManifest manifest, const RunResult& result);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);

/// regime, seed, final_mean, aborted; one row per comparison cell.
std::string summary_csv(const ComparisonReport& report);

/// regime, seeds, mean, stderr; one row per regime.
std::string regime_summary_csv(const ComparisonReport& report);

// Analyses. Each throws InputError naming the first required column that no
// record populates.

/// step, first_order, second_order, delta_mtp
std::string decomposition_csv(const std::vector<StepRecord>& records);

/// step, a, b, lambda_star, delta_at_star for delta(lambda) = b lambda - a lambda^2,
/// a = L eta^2 v2 / 2 and b = eta (1 - L eta) c. Vertex cells are empty when
/// a == 0 or L eta >= 1.
std::string parabola_csv(const std::vector<StepRecord>& records, double eta);

/// step, c_hat, c_exact, v2_hat, v2_exact for every record with all four.
std::string fidelity_pairs_csv(const std::vector<StepRecord>& records);

/// pearson_c, pearson_v2, n. Empty correlation cells when a series is constant.
std::string fidelity_summary_csv(const std::vector<StepRecord>& records);

/// lambda_probe, window, transition_step (empty when none).
std::string transition_csv(const std::vector<StepRecord>& records, double eta,
                           double lambda_probe, int window = 10);

}  // namespace occlab
