#include "occlab/trainer.hpp"

#include <cmath>
#include <exception>
#include <sstream>

#include "occlab/errors.hpp"
#include "occlab/gain.hpp"
#include "occlab/rollout.hpp"
#include "occlab/vec_ops.hpp"

namespace occlab {

std::string_view to_string(Regime r) {
  switch (r) {
    case Regime::Detach: return "detach";
    case Regime::CrossEntropy: return "ce";
    case Regime::PolicyLoss: return "policy";
    case Regime::OCC: return "occ";
  }
  return "?";
}

void RegimeConfig::validate() const {
  if (!std::isfinite(fixed_lambda)) throw ConfigError("regime.lambda must be finite");
  occ.validate();
}

void TrainConfig::validate() const {
  if (!(eta > 0.0) || !std::isfinite(eta)) throw ConfigError("train.eta must be positive");
  if (steps < 0) throw ConfigError("train.steps must be >= 0");
  if (group < 2) throw ConfigError("train.group must be >= 2");
  if (batch < group || batch % group != 0) {
    throw ConfigError("train.batch must be a positive multiple of train.group");
  }
  if (!(temperature >= 0.0)) throw ConfigError("train.temperature must be >= 0");
  if (l_probes < 1 || l_iterations < 1 || !(l_fd_step > 0.0)) {
    throw ConfigError("L estimate settings must be positive");
  }
  algo.validate();
  if (batch % algo.micro_batches != 0) {
    throw ConfigError("train.batch must be divisible by algo.micro_batches");
  }
  model.validate();
  task.validate();
  regime.validate();
  if (task.vocab_size != model.vocab_size) {
    throw ConfigError("task.vocab_size and model.vocab_size differ");
  }
  if (task.prompt_len + task.response_len > model.context_window) {
    throw ConfigError("prompt + response exceed model.context_window");
  }
}

TrainConfig default_config(Backend backend) {
  TrainConfig c;
  c.model.backend = backend;
  c.eta = backend == Backend::TabularSoftmax ? 10.0 : 1.0;
  return c;
}

TrainState initial_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.params = init_params(config.model, config.seed);
  // Distinct stream from the initializer's.
  std::seed_seq ss{config.seed, std::uint64_t{0x7261696e}};
  s.rng = Rng(ss);
  return s;
}

namespace {

Objective aux_objective(Regime r) {
  return r == Regime::Detach || r == Regime::CrossEntropy ? Objective::MtpCrossEntropy
                                                          : Objective::MtpPolicy;
}

void finalize_aux(Regime r, ParamVector& g_aux) {
  if (r == Regime::Detach) g_aux = g_aux.masked_to(SegmentName::MtpHead);
}

void require_finite(const ParamVector& v, const char* what, const StepRecord& partial) {
  if (!v.all_finite()) {
    throw TrainingAborted(std::string("non-finite ") + what + " at step " +
                              std::to_string(partial.step),
                          partial);
  }
}

std::vector<std::vector<std::size_t>> micro_batches(std::size_t n, int m) {
  std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(m));
  const std::size_t per = n / static_cast<std::size_t>(m);
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t i = k * per; i < (k + 1) * per; ++i) out[k].push_back(i);
  }
  return out;
}

struct ExactQuantities {
  ParamVector g_rl;
  ParamVector g_aux;
  std::vector<std::vector<double>> baseline;
};

ExactQuantities exact_gradients(const ParamVector& params, const TrainConfig& config,
                                const RolloutBatch& batch, ForwardCounter& counter) {
  const auto idx = batch.all_indices();
  const BatchForward fwd =
      kernels::forward_batch(params, config.model, batch, idx, Exec::Parallel, &counter);
  const TokenWeights w[] = {
      objective_weights(batch, fwd, Objective::Rl, config.algo, Estimator::Plain),
      objective_weights(batch, fwd, aux_objective(config.regime.regime), config.algo, Estimator::Plain)};
  auto g = kernels::backward_batch(params, config.model, batch, fwd, w, Exec::Parallel);
  ExactQuantities out{std::move(g[0]), std::move(g[1]), {}};
  finalize_aux(config.regime.regime, out.g_aux);
  for (const SequenceForward& sf : fwd.seqs) out.baseline.push_back(sf.main_logp);
  return out;
}

}  // namespace

StepResult train_step(const TrainState& state, const TrainConfig& config, bool capture_trace) {
  config.validate();
  const Regime regime = config.regime.regime;
  const OccConfig& occ = config.regime.occ;
  StepResult res;
  res.state = state;
  TrainState& st = res.state;
  StepRecord& rec = res.record;
  rec.step = state.step;
  ForwardCounter counter;

  const RolloutBatch batch =
      collect_rollouts(st.params, config.model, config.task, static_cast<std::size_t>(config.batch),
                       static_cast<std::size_t>(config.group), config.temperature, st.rng,
                       Exec::Parallel, &counter);
  double reward_sum = 0.0;
  for (double r : batch.rewards) reward_sum += r;
  rec.mean_reward = reward_sum / static_cast<double>(batch.size());

  // Exact instrumentation at theta_t, before any update.
  std::optional<ExactQuantities> exact;
  if (config.instrument_exact) {
    exact = exact_gradients(st.params, config, batch, counter);
    require_finite(exact->g_rl, "exact RL gradient", rec);
    require_finite(exact->g_aux, "exact auxiliary gradient", rec);
    rec.c_exact = main_model_dot(exact->g_rl, exact->g_aux);
    rec.v2_exact = main_model_dot(exact->g_aux, exact->g_aux);
    rec.L_estimate = estimate_L(st.params, config.model, batch, config.l_probes,
                                config.l_fd_step, config.l_iterations, &counter);
    if (regime != Regime::OCC) {
      // Full-batch proxies, for comparison with the OCC runs.
      const auto idx = batch.all_indices();
      const DeltaVector d_rl = virtual_step_delta(st.params, config.model, batch, idx,
                                                  exact->baseline, exact->g_rl, config.eta,
                                                  &counter);
      const DeltaVector d_aux = virtual_step_delta(st.params, config.model, batch, idx,
                                                   exact->baseline, exact->g_aux, config.eta,
                                                   &counter);
      rec.c_hat = alignment_proxy(d_rl, d_aux);
      rec.v2_hat = variance_proxy(d_aux);
    }
    if (capture_trace) {
      res.trace.exact_g_rl = exact->g_rl;
      res.trace.exact_g_aux = exact->g_aux;
    }
  }

  const auto mbs = micro_batches(batch.size(), config.algo.micro_batches);
  std::vector<double> mb_lambda(mbs.size(), config.regime.fixed_lambda);
  double c_hat_sum = 0.0, v2_hat_sum = 0.0;
  ParamVector first_rl = ParamVector::zeros_like(st.params);
  ParamVector first_aux = ParamVector::zeros_like(st.params);
  const bool needs_plain = regime == Regime::OCC && config.algo.algo != Algo::GRPO;

  for (int epoch = 0; epoch < config.algo.ppo_epochs; ++epoch) {
    for (std::size_t m = 0; m < mbs.size(); ++m) {
      const auto& idx = mbs[m];
      const BatchForward fwd =
          kernels::forward_batch(st.params, config.model, batch, idx, Exec::Parallel, &counter);
      std::vector<TokenWeights> w;
      w.push_back(objective_weights(batch, fwd, Objective::Rl, config.algo, Estimator::Surrogate));
      w.push_back(objective_weights(batch, fwd, aux_objective(regime), config.algo, Estimator::Surrogate));
      const bool occ_now = regime == Regime::OCC && epoch == 0;
      if (occ_now && needs_plain) {
        w.push_back(objective_weights(batch, fwd, Objective::Rl, config.algo, Estimator::Plain));
        w.push_back(objective_weights(batch, fwd, Objective::MtpPolicy, config.algo, Estimator::Plain));
      }
      auto g = kernels::backward_batch(st.params, config.model, batch, fwd, w, Exec::Parallel);
      finalize_aux(regime, g[1]);
      require_finite(g[0], "RL gradient", rec);
      require_finite(g[1], "auxiliary gradient", rec);

      if (occ_now) {
        std::vector<std::vector<double>> baseline;
        for (const SequenceForward& sf : fwd.seqs) baseline.push_back(sf.main_logp);
        const ParamVector& p_rl = needs_plain ? g[2] : g[0];
        const ParamVector& p_aux = needs_plain ? g[3] : g[1];
        const DeltaVector d_rl = virtual_step_delta(st.params, config.model, batch, idx,
                                                    baseline, p_rl, config.eta, &counter);
        const DeltaVector d_aux = virtual_step_delta(st.params, config.model, batch, idx,
                                                     baseline, p_aux, config.eta, &counter);
        const double c_hat = alignment_proxy(d_rl, d_aux);
        const double v2_hat = variance_proxy(d_aux);
        c_hat_sum += c_hat;
        v2_hat_sum += v2_hat;
        double lambda = occ_lambda(c_hat, v2_hat, occ);
        if (occ.ema > 0.0 && st.prev_lambda) {
          lambda = occ.ema * *st.prev_lambda + (1.0 - occ.ema) * lambda;
        }
        bool hit = false;
        lambda = cap_lambda(lambda, occ.lambda_cap, &hit);
        if (hit) {
          std::ostringstream os;
          os << "micro_batch=" << m << " lambda capped at " << lambda;
          res.events.push_back({rec.step, "lambda_cap", os.str()});
        }
        st.prev_lambda = lambda;
        mb_lambda[m] = lambda;
      }
      if (epoch == 0) {
        vec::axpy(1.0, g[0].values(), first_rl.values());
        vec::axpy(1.0, g[1].values(), first_aux.values());
      }

      const double lambda = mb_lambda[m];
      std::span<double> theta = st.params.values();
      std::span<const double> grl = g[0].values();
      std::span<const double> gaux = g[1].values();
      for (std::size_t j = 0; j < theta.size(); ++j) {
        theta[j] += config.eta * (grl[j] + lambda * gaux[j]);
      }
      if (capture_trace) res.trace.updates.push_back({std::move(g[0]), std::move(g[1]), lambda});
      require_finite(st.params, "parameters", rec);
    }
  }

  const double nm = static_cast<double>(mbs.size());
  double lambda_sum = 0.0;
  for (double l : mb_lambda) lambda_sum += l;
  rec.lambda_used = lambda_sum / nm;
  if (regime == Regime::OCC) {
    rec.c_hat = c_hat_sum / nm;
    rec.v2_hat = v2_hat_sum / nm;
  }
  rec.grad_norm_rl = vec::norm(first_rl.values()) / nm;
  rec.grad_norm_mtp = vec::norm(first_aux.values()) / nm;

  if (exact) {
    const double L = *rec.L_estimate;
    if (L > 0.0 && L * config.eta < 1.0) {
      const GainDecomposition d =
          delta_mtp({*rec.c_exact, *rec.v2_exact, config.eta, L, rec.lambda_used});
      rec.first_order = d.first_order;
      rec.second_order = d.second_order;
      rec.delta_mtp = d.delta_mtp;
    } else {
      std::ostringstream os;
      os << "L_estimate=" << L << " eta=" << config.eta << "; decomposition left blank";
      res.events.push_back({rec.step, "L_eta_ge_1", os.str()});
    }
  }

  rec.forward_pass_count = counter.sequences;
  st.step += 1;
  return res;
}

RunResult run_experiment(const TrainConfig& config) {
  RunResult out;
  TrainState state = initial_state(config);
  for (int t = 0; t < config.steps; ++t) {
    try {
      StepResult r = train_step(state, config);
      out.records.push_back(r.record);
      out.events.insert(out.events.end(), r.events.begin(), r.events.end());
      state = std::move(r.state);
    } catch (const TrainingAborted& e) {
      out.records.push_back(e.partial());
      out.events.push_back({t, "abort", e.what()});
      out.abort_reason = e.what();
      break;
    }
  }
  out.final_params = std::move(state.params);
  return out;
}

double final_window_mean(const std::vector<StepRecord>& records, int window) {
  if (records.empty()) return 0.0;
  const std::size_t w = std::min(records.size(), static_cast<std::size_t>(std::max(window, 1)));
  double s = 0.0;
  for (std::size_t i = records.size() - w; i < records.size(); ++i) s += records[i].mean_reward;
  return s / static_cast<double>(w);
}

std::string regime_label(const RegimeConfig& regime) {
  auto num = [](double x) {
    std::ostringstream os;
    os << x;
    return os.str();
  };
  switch (regime.regime) {
    case Regime::Detach: return "detach";
    case Regime::CrossEntropy: return "ce:" + num(regime.fixed_lambda);
    case Regime::PolicyLoss: return "policy:" + num(regime.fixed_lambda);
    case Regime::OCC:
      return regime.occ.clip_mode == ClipMode::Clip ? "occ-clip" : "occ-noclip";
  }
  return "?";
}

ComparisonReport compare_regimes(const TrainConfig& base, const std::vector<RegimeConfig>& regimes,
                                 const std::vector<std::uint64_t>& seeds, int jobs, int window) {
  if (regimes.empty() || seeds.empty()) throw InputError("compare_regimes: empty regime or seed list");
  if (jobs < 1) throw InputError("compare_regimes: jobs must be >= 1");
  std::vector<TrainConfig> cells;
  for (const RegimeConfig& r : regimes) {
    for (std::uint64_t s : seeds) {
      TrainConfig c = base;
      c.regime = r;
      c.seed = s;
      c.validate();
      cells.push_back(c);
    }
  }

  ComparisonReport rep;
  rep.runs.resize(cells.size());
  std::exception_ptr error;
  const auto n = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (std::ptrdiff_t k = 0; k < n; ++k) {
    try {
      rep.runs[static_cast<std::size_t>(k)] = run_experiment(cells[static_cast<std::size_t>(k)]);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  std::size_t k = 0;
  for (const RegimeConfig& r : regimes) {
    RegimeSummary sum;
    sum.regime = regime_label(r);
    std::vector<double> finals;
    for (std::uint64_t s : seeds) {
      const RunResult& run = rep.runs[k++];
      const double f = final_window_mean(run.records, window);
      rep.rows.push_back({sum.regime, s, f, run.abort_reason.has_value()});
      finals.push_back(f);
    }
    double mean = 0.0;
    for (double f : finals) mean += f;
    mean /= static_cast<double>(finals.size());
    sum.mean = mean;
    if (finals.size() >= 2) {
      double ss = 0.0;
      for (double f : finals) ss += (f - mean) * (f - mean);
      const double sd = std::sqrt(ss / static_cast<double>(finals.size() - 1));
      sum.stderr_ = sd / std::sqrt(static_cast<double>(finals.size()));
    }
    rep.summaries.push_back(sum);
  }
  return rep;
}

std::optional<int> detect_phase_transition(const std::vector<StepRecord>& records, double eta,
                                           double lambda_probe, int window) {
  if (window < 1) throw InputError("detect_phase_transition: window must be >= 1");
  // +1 positive, -1 negative, 0 neither.
  std::vector<int> sign;
  sign.reserve(records.size());
  for (const StepRecord& r : records) {
    if (!r.c_exact) throw InputError("detect_phase_transition: record lacks c_exact");
    if (!r.v2_exact) throw InputError("detect_phase_transition: record lacks v2_exact");
    if (!r.L_estimate) throw InputError("detect_phase_transition: record lacks L_estimate");
    const double L = *r.L_estimate;
    if (!(L > 0.0) || L * eta >= 1.0) {
      sign.push_back(0);
      continue;
    }
    const double d = delta_mtp({*r.c_exact, *r.v2_exact, eta, L, lambda_probe}).delta_mtp;
    sign.push_back(d > 1e-12 ? 1 : (d < -1e-12 ? -1 : 0));
  }

  const auto w = static_cast<std::size_t>(window);
  std::size_t run = 0;
  std::optional<std::size_t> positive_end;  // index just past the first positive window
  for (std::size_t i = 0; i < sign.size(); ++i) {
    run = sign[i] == 1 ? run + 1 : 0;
    if (run == w) {
      positive_end = i + 1;
      break;
    }
  }
  if (!positive_end) return std::nullopt;
  run = 0;
  for (std::size_t i = *positive_end; i < sign.size(); ++i) {
    run = sign[i] == -1 ? run + 1 : 0;
    if (run == w) return records[i + 1 - w].step;
  }
  return std::nullopt;
}

}  // namespace occlab
