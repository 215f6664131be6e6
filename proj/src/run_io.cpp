#include "occlab/run_io.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "occlab/config_io.hpp"
#include "occlab/errors.hpp"
#include "occlab/gain.hpp"

namespace occlab {

using nlohmann::json;

namespace {

std::string cell(const std::optional<double>& v) { return v ? format_number(*v) : std::string(); }

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t pos = 0;
  while (true) {
    const auto at = line.find(sep, pos);
    out.push_back(line.substr(pos, at == std::string_view::npos ? line.npos : at - pos));
    if (at == std::string_view::npos) break;
    pos = at + 1;
  }
  return out;
}

std::vector<std::string_view> lines_of(std::string_view text) {
  std::vector<std::string_view> out;
  for (std::string_view l : split(text, '\n')) {
    if (!l.empty() && l.back() == '\r') l.remove_suffix(1);
    if (!l.empty()) out.push_back(l);
  }
  return out;
}

double parse_double(std::string_view s, int line, std::string_view column) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError("steps.csv line " + std::to_string(line) + ": bad " + std::string(column) +
                     " '" + std::string(s) + "'");
  }
  return v;
}

std::optional<double> parse_optional(std::string_view s, int line, std::string_view column) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, line, column);
}

template <class Int>
Int parse_int(std::string_view s, int line, std::string_view column) {
  Int v{};
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw InputError("steps.csv line " + std::to_string(line) + ": bad " + std::string(column) +
                     " '" + std::string(s) + "'");
  }
  return v;
}

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out + "\n";
}

void require_column(const std::vector<StepRecord>& records, std::optional<double> StepRecord::*field,
                    const char* name) {
  for (const StepRecord& r : records) {
    if (r.*field) return;
  }
  throw InputError(std::string("steps.csv has no values in column ") + name);
}

}  // namespace

const std::vector<std::string>& steps_columns() {
  static const std::vector<std::string> cols = {
      "step",         "mean_reward",   "lambda_used",  "c_hat",
      "v2_hat",       "c_exact",       "v2_exact",     "first_order",
      "second_order", "delta_mtp",     "grad_norm_rl", "grad_norm_mtp",
      "forward_pass_count", "L_estimate"};
  return cols;
}

std::string steps_csv(const std::vector<StepRecord>& records) {
  std::string out = join(steps_columns());
  for (const StepRecord& r : records) {
    out += join({std::to_string(r.step), format_number(r.mean_reward), format_number(r.lambda_used),
                 cell(r.c_hat), cell(r.v2_hat), cell(r.c_exact), cell(r.v2_exact),
                 cell(r.first_order), cell(r.second_order), cell(r.delta_mtp),
                 format_number(r.grad_norm_rl), format_number(r.grad_norm_mtp),
                 std::to_string(r.forward_pass_count), cell(r.L_estimate)});
  }
  return out;
}

std::vector<StepRecord> parse_steps_csv(std::string_view text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw InputError("steps.csv is empty");
  const auto header = split(lines[0], ',');
  const auto& cols = steps_columns();
  if (header.size() != cols.size() || !std::equal(header.begin(), header.end(), cols.begin())) {
    throw InputError("steps.csv header does not match the documented columns");
  }
  std::vector<StepRecord> out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const int ln = static_cast<int>(i) + 1;
    const auto c = split(lines[i], ',');
    if (c.size() != cols.size()) {
      throw InputError("steps.csv line " + std::to_string(ln) + ": expected " +
                       std::to_string(cols.size()) + " cells");
    }
    StepRecord r;
    r.step = parse_int<int>(c[0], ln, cols[0]);
    r.mean_reward = parse_double(c[1], ln, cols[1]);
    r.lambda_used = parse_double(c[2], ln, cols[2]);
    r.c_hat = parse_optional(c[3], ln, cols[3]);
    r.v2_hat = parse_optional(c[4], ln, cols[4]);
    r.c_exact = parse_optional(c[5], ln, cols[5]);
    r.v2_exact = parse_optional(c[6], ln, cols[6]);
    r.first_order = parse_optional(c[7], ln, cols[7]);
    r.second_order = parse_optional(c[8], ln, cols[8]);
    r.delta_mtp = parse_optional(c[9], ln, cols[9]);
    r.grad_norm_rl = parse_double(c[10], ln, cols[10]);
    r.grad_norm_mtp = parse_double(c[11], ln, cols[11]);
    r.forward_pass_count = parse_int<std::uint64_t>(c[12], ln, cols[12]);
    r.L_estimate = parse_optional(c[13], ln, cols[13]);
    out.push_back(r);
  }
  return out;
}

std::string events_jsonl(const std::vector<Event>& events) {
  std::string out;
  for (const Event& e : events) {
    out += json{{"step", e.step}, {"kind", e.kind}, {"detail", e.detail}}.dump() + "\n";
  }
  return out;
}

std::string manifest_json(const RunManifest& m) {
  // The config is stored as its key/value text so reloading goes through the
  // same parser as a config file.
  json config = json::object();
  const std::string text = serialize_config(m.config);
  for (std::string_view line : lines_of(text)) {
    const auto eq = line.find(" = ");
    config[std::string(line.substr(0, eq))] = std::string(line.substr(eq + 3));
  }
  json j = {{"run_id", m.run_id},
            {"artifact_version", m.artifact_version},
            {"started_at", m.started_at},
            {"finished_at", m.finished_at},
            {"seeds", m.seeds},
            {"files", m.files},
            {"config", config}};
  j["abort_reason"] = m.abort_reason ? json(*m.abort_reason) : json(nullptr);
  return j.dump(2) + "\n";
}

RunManifest parse_manifest(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("manifest is not valid JSON: ") + e.what());
  }
  RunManifest m;
  try {
    m.run_id = j.at("run_id").get<std::string>();
    m.artifact_version = j.at("artifact_version").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    m.finished_at = j.at("finished_at").get<std::string>();
    m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    m.files = j.at("files").get<std::vector<std::string>>();
    if (!j.at("abort_reason").is_null()) m.abort_reason = j["abort_reason"].get<std::string>();
    std::string cfg;
    for (const std::string& key : config_keys()) {
      if (j.at("config").contains(key)) cfg += key + " = " + j["config"][key].get<std::string>() + "\n";
    }
    m.config = parse_config(cfg, "manifest.json config");
  } catch (const json::exception& e) {
    throw InputError(std::string("manifest field missing or mistyped: ") + e.what());
  }
  return m;
}

std::string run_id_for(const TrainConfig& config) {
  std::string label = regime_label(config.regime);
  for (char& ch : label) {
    if (ch == ':') ch = '-';
  }
  return label + "_s" + std::to_string(config.seed);
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw InputError("write failed for " + path.string());
}

void write_run(const std::filesystem::path& dir, RunManifest manifest, const RunResult& result) {
  std::filesystem::create_directories(dir);
  write_text(dir / "steps.csv", steps_csv(result.records));
  write_text(dir / "events.jsonl", events_jsonl(result.events));
  manifest.files = {"manifest.json", "steps.csv", "events.jsonl"};
  manifest.abort_reason = result.abort_reason;
  write_text(dir / "manifest.json", manifest_json(manifest));
}

std::string summary_csv(const ComparisonReport& report) {
  std::string out = "regime,seed,final_mean,aborted\n";
  for (const ComparisonRow& r : report.rows) {
    out += join({r.regime, std::to_string(r.seed), format_number(r.final_mean),
                 r.aborted ? "1" : "0"});
  }
  return out;
}

std::string regime_summary_csv(const ComparisonReport& report) {
  std::string out = "regime,seeds,mean,stderr\n";
  for (const RegimeSummary& s : report.summaries) {
    std::size_t n = 0;
    for (const ComparisonRow& r : report.rows) n += r.regime == s.regime;
    out += join({s.regime, std::to_string(n), format_number(s.mean), cell(s.stderr_)});
  }
  return out;
}

std::string decomposition_csv(const std::vector<StepRecord>& records) {
  require_column(records, &StepRecord::first_order, "first_order");
  require_column(records, &StepRecord::second_order, "second_order");
  require_column(records, &StepRecord::delta_mtp, "delta_mtp");
  std::string out = "step,first_order,second_order,delta_mtp\n";
  for (const StepRecord& r : records) {
    out += join({std::to_string(r.step), cell(r.first_order), cell(r.second_order), cell(r.delta_mtp)});
  }
  return out;
}

std::string parabola_csv(const std::vector<StepRecord>& records, double eta) {
  require_column(records, &StepRecord::c_exact, "c_exact");
  require_column(records, &StepRecord::v2_exact, "v2_exact");
  require_column(records, &StepRecord::L_estimate, "L_estimate");
  std::string out = "step,a,b,lambda_star,delta_at_star\n";
  for (const StepRecord& r : records) {
    if (!r.c_exact || !r.v2_exact || !r.L_estimate) {
      out += join({std::to_string(r.step), "", "", "", ""});
      continue;
    }
    const double L = *r.L_estimate;
    const double a = L * eta * eta * *r.v2_exact / 2.0;
    const double b = eta * (1.0 - L * eta) * *r.c_exact;
    std::optional<double> star, at_star;
    if (a > 0.0 && L * eta < 1.0) {
      star = b / (2.0 * a);
      at_star = b * b / (4.0 * a);
    }
    out += join({std::to_string(r.step), format_number(a), format_number(b), cell(star), cell(at_star)});
  }
  return out;
}

std::string fidelity_pairs_csv(const std::vector<StepRecord>& records) {
  require_column(records, &StepRecord::c_hat, "c_hat");
  require_column(records, &StepRecord::c_exact, "c_exact");
  require_column(records, &StepRecord::v2_hat, "v2_hat");
  require_column(records, &StepRecord::v2_exact, "v2_exact");
  std::string out = "step,c_hat,c_exact,v2_hat,v2_exact\n";
  for (const StepRecord& r : records) {
    if (!r.c_hat || !r.c_exact || !r.v2_hat || !r.v2_exact) continue;
    out += join({std::to_string(r.step), cell(r.c_hat), cell(r.c_exact), cell(r.v2_hat),
                 cell(r.v2_exact)});
  }
  return out;
}

std::string fidelity_summary_csv(const std::vector<StepRecord>& records) {
  fidelity_pairs_csv(records);  // column checks
  std::vector<double> ch, ce, vh, ve;
  for (const StepRecord& r : records) {
    if (!r.c_hat || !r.c_exact || !r.v2_hat || !r.v2_exact) continue;
    ch.push_back(*r.c_hat);
    ce.push_back(*r.c_exact);
    vh.push_back(*r.v2_hat);
    ve.push_back(*r.v2_exact);
  }
  auto corr = [](const std::vector<double>& x, const std::vector<double>& y) -> std::optional<double> {
    try {
      return pearson(x, y);
    } catch (const UndefinedError&) {
      return std::nullopt;
    } catch (const InputError&) {
      return std::nullopt;
    }
  };
  return "pearson_c,pearson_v2,n\n" +
         join({cell(corr(ch, ce)), cell(corr(vh, ve)), std::to_string(ch.size())});
}

std::string transition_csv(const std::vector<StepRecord>& records, double eta,
                           double lambda_probe, int window) {
  require_column(records, &StepRecord::c_exact, "c_exact");
  require_column(records, &StepRecord::v2_exact, "v2_exact");
  require_column(records, &StepRecord::L_estimate, "L_estimate");
  const auto t = detect_phase_transition(records, eta, lambda_probe, window);
  return "lambda_probe,window,transition_step\n" +
         join({format_number(lambda_probe), std::to_string(window), t ? std::to_string(*t) : ""});
}

}  // namespace occlab
