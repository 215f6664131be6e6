#include "occlab/config_io.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "occlab/errors.hpp"

namespace occlab {

std::string format_number(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(std::string_view v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("expected a number, got '" + std::string(v) + "'");
  }
  return out;
}

template <class Int>
Int to_int(std::string_view v) {
  Int out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("expected an integer, got '" + std::string(v) + "'");
  }
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

template <class E, std::size_t N>
E to_enum(std::string_view v, const E (&all)[N]) {
  std::string names;
  for (E e : all) {
    if (to_string(e) == v) return e;
    names += names.empty() ? "" : "|";
    names += to_string(e);
  }
  throw ConfigError("expected one of " + names + ", got '" + std::string(v) + "'");
}

constexpr Backend kBackends[] = {Backend::TabularSoftmax, Backend::TinyMLP};
constexpr TaskKind kTasks[] = {TaskKind::SumMod, TaskKind::CopyReverse};
constexpr Algo kAlgos[] = {Algo::GRPO, Algo::DapoLite, Algo::GspoLite};
constexpr Regime kRegimes[] = {Regime::Detach, Regime::CrossEntropy, Regime::PolicyLoss,
                               Regime::OCC};
constexpr ClipMode kClipModes[] = {ClipMode::NoClip, ClipMode::Clip};
constexpr ProxyBackend kProxies[] = {ProxyBackend::VirtualStep, ProxyBackend::FirstOrder};

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view)> set;
};

template <class T>
Field num(std::string key, T TrainConfig::*m) {
  return {key, [m](const TrainConfig& c) { return format_number(c.*m); },
          [m](TrainConfig& c, std::string_view v) { c.*m = to_double(v); }};
}

// Fields are reached through a mutable accessor so nested members work; reads
// go through a copy.
template <class Ref>
auto read(Ref ref, const TrainConfig& c) {
  TrainConfig t = c;
  return ref(t);
}

template <class Int, class Ref>
Field integer(std::string key, Ref ref) {
  return {key,
          [ref](const TrainConfig& c) { return std::to_string(read(ref, c)); },
          [ref](TrainConfig& c, std::string_view v) { ref(c) = to_int<Int>(v); }};
}

template <class Ref>
Field real(std::string key, Ref ref) {
  return {key, [ref](const TrainConfig& c) { return format_number(read(ref, c)); },
          [ref](TrainConfig& c, std::string_view v) { ref(c) = to_double(v); }};
}

template <class E, std::size_t N, class Ref>
Field enumerated(std::string key, const E (&all)[N], Ref ref) {
  return {key,
          [ref](const TrainConfig& c) { return std::string(to_string(read(ref, c))); },
          [&all, ref](TrainConfig& c, std::string_view v) { ref(c) = to_enum(v, all); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(enumerated("model.backend", kBackends,
                           [](TrainConfig& c) -> Backend& { return c.model.backend; }));
    v.push_back(integer<int>("model.vocab_size", [](TrainConfig& c) -> int& { return c.model.vocab_size; }));
    v.push_back(integer<int>("model.context_window",
                             [](TrainConfig& c) -> int& { return c.model.context_window; }));
    v.push_back(integer<int>("model.hidden_dim", [](TrainConfig& c) -> int& { return c.model.hidden_dim; }));
    v.push_back(integer<int>("model.mtp_depth", [](TrainConfig& c) -> int& { return c.model.mtp_depth; }));
    v.push_back(enumerated("task.name", kTasks, [](TrainConfig& c) -> TaskKind& { return c.task.name; }));
    v.push_back(integer<int>("task.vocab_size", [](TrainConfig& c) -> int& { return c.task.vocab_size; }));
    v.push_back(integer<int>("task.prompt_len", [](TrainConfig& c) -> int& { return c.task.prompt_len; }));
    v.push_back(integer<int>("task.response_len",
                             [](TrainConfig& c) -> int& { return c.task.response_len; }));
    v.push_back(num("train.eta", &TrainConfig::eta));
    v.push_back(integer<int>("train.steps", [](TrainConfig& c) -> int& { return c.steps; }));
    v.push_back(integer<int>("train.batch", [](TrainConfig& c) -> int& { return c.batch; }));
    v.push_back(integer<int>("train.group", [](TrainConfig& c) -> int& { return c.group; }));
    v.push_back(integer<std::uint64_t>("train.seed",
                                       [](TrainConfig& c) -> std::uint64_t& { return c.seed; }));
    v.push_back({"train.instrument_exact",
                 [](const TrainConfig& c) { return std::string(c.instrument_exact ? "true" : "false"); },
                 [](TrainConfig& c, std::string_view s) { c.instrument_exact = to_bool(s); }});
    v.push_back(num("train.temperature", &TrainConfig::temperature));
    v.push_back(integer<int>("train.l_probes", [](TrainConfig& c) -> int& { return c.l_probes; }));
    v.push_back(integer<int>("train.l_iterations", [](TrainConfig& c) -> int& { return c.l_iterations; }));
    v.push_back(num("train.l_fd_step", &TrainConfig::l_fd_step));
    v.push_back(enumerated("algo.name", kAlgos, [](TrainConfig& c) -> Algo& { return c.algo.algo; }));
    v.push_back(real("algo.clip_low", [](TrainConfig& c) -> double& { return c.algo.clip_low; }));
    v.push_back(real("algo.clip_high", [](TrainConfig& c) -> double& { return c.algo.clip_high; }));
    v.push_back(integer<int>("algo.ppo_epochs", [](TrainConfig& c) -> int& { return c.algo.ppo_epochs; }));
    v.push_back(integer<int>("algo.micro_batches",
                             [](TrainConfig& c) -> int& { return c.algo.micro_batches; }));
    v.push_back(enumerated("regime.kind", kRegimes,
                           [](TrainConfig& c) -> Regime& { return c.regime.regime; }));
    v.push_back(real("regime.lambda", [](TrainConfig& c) -> double& { return c.regime.fixed_lambda; }));
    v.push_back(real("occ.lambda_plus", [](TrainConfig& c) -> double& { return c.regime.occ.lambda_plus; }));
    v.push_back(real("occ.epsilon", [](TrainConfig& c) -> double& { return c.regime.occ.epsilon; }));
    v.push_back(enumerated("occ.clip_mode", kClipModes,
                           [](TrainConfig& c) -> ClipMode& { return c.regime.occ.clip_mode; }));
    v.push_back(enumerated("occ.proxy_backend", kProxies,
                           [](TrainConfig& c) -> ProxyBackend& { return c.regime.occ.proxy_backend; }));
    v.push_back(real("occ.lambda_cap", [](TrainConfig& c) -> double& { return c.regime.occ.lambda_cap; }));
    v.push_back(real("occ.ema", [](TrainConfig& c) -> double& { return c.regime.occ.ema; }));
    return v;
  }();
  return f;
}

const Field* find_field(std::string_view key) {
  for (const Field& f : fields()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

struct Entry {
  int line = 0;
  std::string key;
  std::string value;
};

std::pair<std::string, std::string> split_assignment(std::string_view s) {
  const auto eq = s.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected 'key = value'");
  std::string key(trim(s.substr(0, eq)));
  std::string value(trim(s.substr(eq + 1)));
  if (key.empty()) throw ConfigError("missing key before '='");
  if (value.empty()) throw ConfigError("missing value for " + key);
  return {key, value};
}

void apply(TrainConfig& c, const std::string& key, const std::string& value) {
  const Field* f = find_field(key);
  if (f == nullptr) throw ConfigError("unknown key '" + key + "'");
  try {
    f->set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string located(std::string_view source, int line, const char* what) {
  return std::string(source) + ":" + std::to_string(line) + ": " + what;
}

}  // namespace

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Field& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

TrainConfig parse_config(std::string_view text, std::string_view source) {
  std::vector<Entry> entries;
  std::map<std::string, int> seen;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? text.npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    try {
      auto [key, value] = split_assignment(line);
      if (find_field(key) == nullptr) throw ConfigError("unknown key '" + key + "'");
      if (auto it = seen.find(key); it != seen.end()) {
        throw ConfigError("duplicate key '" + key + "' (first set on line " +
                          std::to_string(it->second) + ")");
      }
      seen[key] = line_no;
      entries.push_back({line_no, key, value});
    } catch (const ConfigError& e) {
      throw ConfigError(located(source, line_no, e.what()));
    }
  }

  // The backend picks the defaults every other key starts from.
  Backend backend = Backend::TabularSoftmax;
  for (const Entry& e : entries) {
    if (e.key != "model.backend") continue;
    try {
      backend = to_enum(std::string_view(e.value), kBackends);
    } catch (const ConfigError& err) {
      throw ConfigError(located(source, e.line, (e.key + ": " + err.what()).c_str()));
    }
  }
  TrainConfig config = default_config(backend);
  for (const Entry& e : entries) {
    try {
      apply(config, e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(located(source, e.line, err.what()));
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(std::string(source) + ": " + err.what());
  }
  return config;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string serialize_config(const TrainConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

void apply_overrides(TrainConfig& config, std::span<const std::string> assignments) {
  TrainConfig next = config;
  for (const std::string& a : assignments) {
    try {
      auto [key, value] = split_assignment(a);
      apply(next, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("--set " + a + ": " + e.what());
    }
  }
  try {
    next.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("after --set overrides: ") + e.what());
  }
  config = next;
}

void apply_override(TrainConfig& config, std::string_view assignment) {
  const std::string one[] = {std::string(assignment)};
  apply_overrides(config, one);
}

RegimeConfig parse_regime_spec(std::string_view spec, const OccConfig& occ) {
  spec = trim(spec);
  RegimeConfig r;
  r.occ = occ;
  auto with_lambda = [&](Regime kind, std::string_view rest) {
    r.regime = kind;
    try {
      r.fixed_lambda = to_double(rest);
    } catch (const ConfigError&) {
      throw ConfigError("regime '" + std::string(spec) + "': bad coefficient");
    }
  };
  if (spec == "detach") {
    r.regime = Regime::Detach;
  } else if (spec.starts_with("ce:")) {
    with_lambda(Regime::CrossEntropy, spec.substr(3));
  } else if (spec.starts_with("policy:")) {
    with_lambda(Regime::PolicyLoss, spec.substr(7));
  } else if (spec == "occ") {
    r.regime = Regime::OCC;
  } else if (spec == "occ-noclip" || spec == "occ-clip") {
    r.regime = Regime::OCC;
    r.occ.clip_mode = spec == "occ-clip" ? ClipMode::Clip : ClipMode::NoClip;
  } else {
    throw ConfigError("unknown regime '" + std::string(spec) +
                      "' (detach, ce:<lambda>, policy:<lambda>, occ, occ-noclip, occ-clip)");
  }
  r.validate();
  return r;
}

std::vector<RegimeConfig> parse_regime_list(std::string_view list, const OccConfig& occ) {
  std::vector<RegimeConfig> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = list.find(',', pos);
    const auto item = list.substr(pos, comma == std::string_view::npos ? list.npos : comma - pos);
    if (!trim(item).empty()) out.push_back(parse_regime_spec(item, occ));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("empty regime list");
  return out;
}

std::vector<std::uint64_t> parse_seed_list(std::string_view list) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    const auto comma = list.find(',', pos);
    const auto item = trim(list.substr(pos, comma == std::string_view::npos ? list.npos : comma - pos));
    if (!item.empty()) {
      try {
        if (const auto dash = item.find('-'); dash != std::string_view::npos) {
          const auto lo = to_int<std::uint64_t>(trim(item.substr(0, dash)));
          const auto hi = to_int<std::uint64_t>(trim(item.substr(dash + 1)));
          if (hi < lo) throw ConfigError("descending range");
          for (std::uint64_t s = lo; s <= hi; ++s) out.push_back(s);
        } else {
          out.push_back(to_int<std::uint64_t>(item));
        }
      } catch (const ConfigError& e) {
        throw ConfigError("seed list '" + std::string(list) + "': " + e.what());
      }
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw ConfigError("empty seed list");
  return out;
}

}  // namespace occlab
