#pragma once

// Training loop: rollouts, the regime's auxiliary gradient, the coefficient,
// and the plain gradient-ascent update
//   theta <- theta + eta (g_RL + lambda g_aux)
// applied once per micro-batch and PPO epoch.
//
//   Detach        g_aux = CE gradient restricted to mtp_head, lambda = fixed_lambda
//   CrossEntropy  g_aux = CE gradient, lambda = fixed_lambda
//   PolicyLoss    g_aux = MTP policy gradient, lambda = fixed_lambda
//   OCC           g_aux = MTP policy gradient, lambda_t from the proxies
//
// OCC computes lambda per micro-batch during the first epoch and reuses it in
// later epochs, so its only extra cost is two virtual-step evaluations of the
// batch. Proxies and exact gradient quantities always use the unclipped
// GRPO-form estimators; the update uses the algorithm's surrogate.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "occlab/occ.hpp"
#include "occlab/surrogate.hpp"
#include "occlab/tasks.hpp"

namespace occlab {

enum class Regime { Detach, CrossEntropy, PolicyLoss, OCC };

std::string_view to_string(Regime r);

struct RegimeConfig {
  Regime regime = Regime::Detach;
  double fixed_lambda = 0.1;
  OccConfig occ;

  void validate() const;
  bool operator==(const RegimeConfig&) const = default;
};

struct TrainConfig {
  double eta = 10.0;
  int steps = 200;
  int batch = 64;
  int group = 8;
  AlgoConfig algo;
  ModelConfig model;
  Task task;
  RegimeConfig regime;
  std::uint64_t seed = 0;
  bool instrument_exact = false;
  double temperature = 1.0;
  int l_probes = 1;          // curvature probes for the L estimate
  int l_iterations = 10;     // power iterations per probe
  double l_fd_step = 1e-4;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Desk-scale defaults for a backend.
TrainConfig default_config(Backend backend = Backend::TabularSoftmax);

struct StepRecord {
  int step = 0;
  double mean_reward = 0.0;
  double lambda_used = 0.0;
  std::optional<double> c_hat;
  std::optional<double> v2_hat;
  std::optional<double> c_exact;
  std::optional<double> v2_exact;
  std::optional<double> first_order;
  std::optional<double> second_order;
  std::optional<double> delta_mtp;
  double grad_norm_rl = 0.0;
  double grad_norm_mtp = 0.0;
  std::uint64_t forward_pass_count = 0;
  std::optional<double> L_estimate;

  bool operator==(const StepRecord&) const = default;
};

struct Event {
  int step = 0;
  std::string kind;
  std::string detail;

  bool operator==(const Event&) const = default;
};

struct TrainState {
  ParamVector params;
  Rng rng;
  int step = 0;
  std::optional<double> prev_lambda;  // OCC smoothing memory
};

TrainState initial_state(const TrainConfig& config);

/// One applied update theta += eta (g_rl + lambda g_aux).
struct MicroUpdate {
  ParamVector g_rl;
  ParamVector g_aux;
  double lambda = 0.0;
};

/// Optional per-step capture for audits.
struct StepTrace {
  std::vector<MicroUpdate> updates;
  std::optional<ParamVector> exact_g_rl;   // plain, full batch, at theta_t
  std::optional<ParamVector> exact_g_aux;
};

struct StepResult {
  TrainState state;
  StepRecord record;
  std::vector<Event> events;
  StepTrace trace;
};

/// Raised on a non-finite gradient or update. Carries the partial record of
/// the failing step.
class TrainingAborted : public std::runtime_error {
 public:
  TrainingAborted(const std::string& what, StepRecord partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const StepRecord& partial() const { return partial_; }

 private:
  StepRecord partial_;
};

StepResult train_step(const TrainState& state, const TrainConfig& config,
                      bool capture_trace = false);

struct RunResult {
  std::vector<StepRecord> records;
  std::vector<Event> events;
  std::optional<std::string> abort_reason;  // set when the run stopped early
  ParamVector final_params;
};

/// Runs config.steps steps from initial_state(config). An abort stops the run
/// and is reported in the result together with every record produced so far,
/// including the failing step's partial record.
RunResult run_experiment(const TrainConfig& config);

/// Mean reward over the last `window` records (all of them when fewer).
double final_window_mean(const std::vector<StepRecord>& records, int window = 20);

struct ComparisonRow {
  std::string regime;  // label as produced by regime_label
  std::uint64_t seed = 0;
  double final_mean = 0.0;
  bool aborted = false;
};

struct RegimeSummary {
  std::string regime;
  double mean = 0.0;
  std::optional<double> stderr_;  // needs two or more seeds
};

struct ComparisonReport {
  std::vector<ComparisonRow> rows;         // regime-major, seeds in given order
  std::vector<RegimeSummary> summaries;    // one per regime, in given order
  std::vector<RunResult> runs;             // parallel to rows
};

/// Short label: detach, ce:0.1, policy:9, occ-noclip, occ-clip.
std::string regime_label(const RegimeConfig& regime);

/// Every (regime, seed) cell from `base`; cells run concurrently up to `jobs`.
ComparisonReport compare_regimes(const TrainConfig& base, const std::vector<RegimeConfig>& regimes,
                                 const std::vector<std::uint64_t>& seeds, int jobs = 1,
                                 int window = 20);

/// First step t of a sustained window of `window` steps with delta_mtp(lambda_probe)
/// < 0, preceded by an earlier sustained window with delta_mtp > 0. delta_mtp
/// is recomputed from each record's c_exact, v2_exact and L_estimate; values
/// within 1e-12 of zero, or records with L eta >= 1, count as neither sign.
std::optional<int> detect_phase_transition(const std::vector<StepRecord>& records, double eta,
                                           double lambda_probe, int window = 10);

}  // namespace occlab
