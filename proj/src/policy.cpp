#include "occlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "occlab/errors.hpp"

namespace occlab {

std::string_view to_string(Backend b) {
  switch (b) {
    case Backend::TabularSoftmax: return "tabular";
    case Backend::TinyMLP: return "mlp";
  }
  return "?";
}

namespace {

std::size_t tabular_keys(const ModelConfig& c) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  return (v + 1) * v;
}

std::size_t tabular_row(const ModelConfig& c, FeatureKey key) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const std::size_t prev = key.prev < 0 ? v : static_cast<std::size_t>(key.prev);
  return prev * v + static_cast<std::size_t>(key.last);
}

// TinyMLP offsets, all relative to the start of the vector.
struct MlpOffsets {
  std::size_t w1 = 0, b1 = 0, wm = 0, bm = 0, wt = 0, bt = 0;
};

MlpOffsets mlp_offsets(const ModelConfig& c) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  MlpOffsets o;
  o.w1 = 0;
  o.b1 = h * 2 * v;
  o.wm = o.b1 + h;
  o.bm = o.wm + v * h;
  o.wt = o.bm + v;
  o.bt = o.wt + v * h;
  return o;
}

void mlp_hidden(const ParamVector& p, const ModelConfig& c, FeatureKey key,
                std::vector<double>& hidden) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  const MlpOffsets o = mlp_offsets(c);
  const std::size_t two_v = 2 * v;
  hidden.resize(h);
  for (std::size_t j = 0; j < h; ++j) {
    double pre = p[o.b1 + j] + p[o.w1 + j * two_v + v + static_cast<std::size_t>(key.last)];
    if (key.prev >= 0) pre += p[o.w1 + j * two_v + static_cast<std::size_t>(key.prev)];
    hidden[j] = std::tanh(pre);
  }
}

void mlp_head(const ParamVector& p, const ModelConfig& c, std::size_t w_off, std::size_t b_off,
              const std::vector<double>& hidden, std::vector<double>& logits) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  logits.resize(v);
  for (std::size_t y = 0; y < v; ++y) {
    double z = p[b_off + y];
    const std::size_t row = w_off + y * h;
    for (std::size_t j = 0; j < h; ++j) z += p[row + j] * hidden[j];
    logits[y] = z;
  }
}

void tabular_head(const ParamVector& p, const ModelConfig& c, std::size_t head_off,
                  std::size_t row, std::vector<double>& logits) {
  const auto v = static_cast<std::size_t>(c.vocab_size);
  logits.resize(v);
  const std::size_t base = row * v;
  for (std::size_t y = 0; y < v; ++y) logits[y] = p[base + y] + p[head_off + base + y];
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("model.vocab_size must be >= 2");
  if (context_window < 2) throw ConfigError("model.context_window must be >= 2");
  if (backend == Backend::TinyMLP && hidden_dim < 1) {
    throw ConfigError("model.hidden_dim must be >= 1");
  }
  if (mtp_depth != 1) throw ConfigError("model.mtp_depth is fixed at 1");
  if (param_count() > kMaxParams) {
    throw ConfigError("model has " + std::to_string(param_count()) +
                      " parameters; the limit is " + std::to_string(kMaxParams));
  }
}

ParamLayout ModelConfig::layout() const {
  const auto v = static_cast<std::size_t>(std::max(vocab_size, 0));
  if (backend == Backend::TabularSoftmax) {
    const std::size_t table = tabular_keys(*this) * v;
    return ParamLayout(table, table, table);
  }
  const auto h = static_cast<std::size_t>(std::max(hidden_dim, 0));
  const std::size_t head = v * h + v;
  return ParamLayout(h * 2 * v + h, head, head);
}

FeatureKey key_for_target(std::span<const Token> seq, std::size_t k) {
  if (k < 1 || k > seq.size()) {
    throw InputError("no context before index " + std::to_string(k));
  }
  FeatureKey key;
  key.last = seq[k - 1];
  key.prev = k >= 2 ? seq[k - 2] : -1;
  return key;
}

std::size_t mtp_offset_for(std::size_t prompt_len) { return prompt_len >= 2 ? 0 : 2 - prompt_len; }

ParamVector init_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  ParamVector params(config.layout());
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  for (double& v : params.values()) v = normal(rng);
  return params;
}

namespace detail {

void check_tokens(const ModelConfig& config, std::span<const Token> tokens) {
  for (Token t : tokens) {
    if (t < 0 || t >= config.vocab_size) {
      throw InputError("token " + std::to_string(t) + " outside vocabulary of size " +
                       std::to_string(config.vocab_size));
    }
  }
}

void log_softmax_inplace(std::span<double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double z : logits) s += std::exp(z - m);
  const double lse = m + std::log(s);
  for (double& z : logits) z -= lse;
}

void evaluate_main(const ParamVector& params, const ModelConfig& config, FeatureKey key,
                   PositionState& out) {
  out.key = key;
  if (config.backend == Backend::TabularSoftmax) {
    const std::size_t main_off = params.layout().segment(SegmentName::MainHead).begin;
    tabular_head(params, config, main_off, tabular_row(config, key), out.main_logp);
  } else {
    const MlpOffsets o = mlp_offsets(config);
    mlp_hidden(params, config, key, out.hidden);
    mlp_head(params, config, o.wm, o.bm, out.hidden, out.main_logp);
  }
  log_softmax_inplace(out.main_logp);
}

void evaluate(const ParamVector& params, const ModelConfig& config, FeatureKey key,
              PositionState& out) {
  evaluate_main(params, config, key, out);
  if (config.backend == Backend::TabularSoftmax) {
    const std::size_t mtp_off = params.layout().segment(SegmentName::MtpHead).begin;
    tabular_head(params, config, mtp_off, tabular_row(config, key), out.mtp_logp);
  } else {
    const MlpOffsets o = mlp_offsets(config);
    mlp_head(params, config, o.wt, o.bt, out.hidden, out.mtp_logp);
  }
  log_softmax_inplace(out.mtp_logp);
}

void backprop(const ParamVector& params, const ModelConfig& config, const PositionState& state,
              std::span<const double> dmain, std::span<const double> dmtp,
              std::span<double> grad) {
  const auto v = static_cast<std::size_t>(config.vocab_size);
  if (config.backend == Backend::TabularSoftmax) {
    const std::size_t base = tabular_row(config, state.key) * v;
    const std::size_t main_off = params.layout().segment(SegmentName::MainHead).begin;
    const std::size_t mtp_off = params.layout().segment(SegmentName::MtpHead).begin;
    for (std::size_t y = 0; y < dmain.size(); ++y) {
      grad[base + y] += dmain[y];
      grad[main_off + base + y] += dmain[y];
    }
    for (std::size_t y = 0; y < dmtp.size(); ++y) {
      grad[base + y] += dmtp[y];
      grad[mtp_off + base + y] += dmtp[y];
    }
    return;
  }

  const auto h = static_cast<std::size_t>(config.hidden_dim);
  const MlpOffsets o = mlp_offsets(config);
  std::vector<double> dh(h, 0.0);
  auto head_back = [&](std::span<const double> dz, std::size_t w_off, std::size_t b_off) {
    for (std::size_t y = 0; y < dz.size(); ++y) {
      const double g = dz[y];
      if (g == 0.0) continue;
      grad[b_off + y] += g;
      const std::size_t row = w_off + y * h;
      for (std::size_t j = 0; j < h; ++j) {
        grad[row + j] += g * state.hidden[j];
        dh[j] += g * params[row + j];
      }
    }
  };
  head_back(dmain, o.wm, o.bm);
  head_back(dmtp, o.wt, o.bt);

  const std::size_t two_v = 2 * v;
  for (std::size_t j = 0; j < h; ++j) {
    const double dpre = dh[j] * (1.0 - state.hidden[j] * state.hidden[j]);
    grad[o.b1 + j] += dpre;
    grad[o.w1 + j * two_v + v + static_cast<std::size_t>(state.key.last)] += dpre;
    if (state.key.prev >= 0) {
      grad[o.w1 + j * two_v + static_cast<std::size_t>(state.key.prev)] += dpre;
    }
  }
}

void add_logprob_grad(const ParamVector& params, const ModelConfig& config,
                      const PositionState& state, Token target, double w_main, double w_mtp,
                      std::span<double> grad, std::vector<double>& scratch) {
  const auto v = static_cast<std::size_t>(config.vocab_size);
  scratch.assign(2 * v, 0.0);
  std::span<double> dmain(scratch.data(), w_main != 0.0 ? v : 0);
  std::span<double> dmtp(scratch.data() + v, w_mtp != 0.0 ? v : 0);
  // d log softmax(z)_y / dz = e_y - pi
  for (std::size_t y = 0; y < dmain.size(); ++y) dmain[y] = -w_main * std::exp(state.main_logp[y]);
  if (!dmain.empty()) dmain[static_cast<std::size_t>(target)] += w_main;
  for (std::size_t y = 0; y < dmtp.size(); ++y) dmtp[y] = -w_mtp * std::exp(state.mtp_logp[y]);
  if (!dmtp.empty()) dmtp[static_cast<std::size_t>(target)] += w_mtp;
  if (dmain.empty() && dmtp.empty()) return;
  backprop(params, config, state, dmain, dmtp, grad);
}

}  // namespace detail

HeadDistributions forward_logprobs(const ParamVector& params, const ModelConfig& config,
                                   std::span<const Token> context) {
  if (context.empty()) throw InputError("forward_logprobs: empty context");
  detail::check_tokens(config, context);
  detail::PositionState state;
  detail::evaluate(params, config, key_for_target(context, context.size()), state);
  return {std::move(state.main_logp), std::move(state.mtp_logp)};
}

SampledResponse sample_sequence(const ParamVector& params, const ModelConfig& config,
                                std::span<const Token> prompt, std::size_t max_len,
                                double temperature, Rng& rng) {
  if (prompt.empty()) throw InputError("sample_sequence: empty prompt");
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw InputError("sample_sequence: temperature must be > 0 (or 0 for argmax)");
  }
  detail::check_tokens(config, prompt);
  if (prompt.size() + max_len > static_cast<std::size_t>(config.context_window)) {
    throw InputError("prompt + response exceeds the context window");
  }

  Tokens seq(prompt.begin(), prompt.end());
  seq.reserve(prompt.size() + max_len);
  SampledResponse out;
  out.tokens.reserve(max_len);
  out.logprobs.mtp_offset = std::min(mtp_offset_for(prompt.size()), max_len);
  out.logprobs.mask.assign(prompt.size(), false);

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  detail::PositionState state;
  std::vector<double> probs(static_cast<std::size_t>(config.vocab_size));
  for (std::size_t r = 0; r < max_len; ++r) {
    const std::size_t k = seq.size();
    detail::evaluate(params, config, key_for_target(seq, k), state);

    Token tok = 0;
    if (temperature == 0.0) {
      tok = static_cast<Token>(std::max_element(state.main_logp.begin(), state.main_logp.end()) -
                               state.main_logp.begin());
    } else {
      for (std::size_t y = 0; y < probs.size(); ++y) probs[y] = state.main_logp[y] / temperature;
      detail::log_softmax_inplace(probs);
      const double u = unif(rng);
      double cum = 0.0;
      tok = static_cast<Token>(probs.size() - 1);
      for (std::size_t y = 0; y < probs.size(); ++y) {
        cum += std::exp(probs[y]);
        if (u < cum) {
          tok = static_cast<Token>(y);
          break;
        }
      }
    }

    seq.push_back(tok);
    out.tokens.push_back(tok);
    out.logprobs.mask.push_back(true);
    out.logprobs.main.push_back(state.main_logp[static_cast<std::size_t>(tok)]);
    if (k >= 2) out.logprobs.mtp.push_back(state.mtp_logp[static_cast<std::size_t>(tok)]);
  }
  return out;
}

TokenLogProbs realized_logprobs(const ParamVector& params, const ModelConfig& config,
                                std::span<const Token> prompt, std::span<const Token> response) {
  if (prompt.empty()) throw InputError("realized_logprobs: empty prompt");
  Tokens seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end());
  detail::check_tokens(config, seq);

  TokenLogProbs out;
  out.mtp_offset = std::min(mtp_offset_for(prompt.size()), response.size());
  out.mask.assign(seq.size(), false);
  detail::PositionState state;
  for (std::size_t k = prompt.size(); k < seq.size(); ++k) {
    out.mask[k] = true;
    detail::evaluate(params, config, key_for_target(seq, k), state);
    const auto y = static_cast<std::size_t>(seq[k]);
    out.main.push_back(state.main_logp[y]);
    if (k >= 2) out.mtp.push_back(state.mtp_logp[y]);
  }
  return out;
}

ParamVector grad_logprob(const ParamVector& params, const ModelConfig& config,
                         std::span<const Token> prompt, std::span<const Token> response,
                         Head head, std::size_t position) {
  Tokens seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end());
  detail::check_tokens(config, seq);
  if (position < prompt.size() || position >= seq.size()) {
    throw InputError("position " + std::to_string(position) + " is not a response position");
  }
  if (head == Head::Mtp && position < 2) {
    throw InputError("no MTP target at position " + std::to_string(position));
  }
  detail::PositionState state;
  detail::evaluate(params, config, key_for_target(seq, position), state);
  ParamVector grad = ParamVector::zeros_like(params);
  std::vector<double> scratch;
  detail::add_logprob_grad(params, config, state, seq[position], head == Head::Main ? 1.0 : 0.0,
                           head == Head::Mtp ? 1.0 : 0.0, grad.values(), scratch);
  return grad;
}

}  // namespace occlab
