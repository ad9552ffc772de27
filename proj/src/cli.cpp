#include "avgsim/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "avgsim/ergodic.hpp"
#include "avgsim/errors.hpp"
#include "avgsim/parallel.hpp"

#ifndef AVGSIM_VERSION
#define AVGSIM_VERSION "0.0.0"
#endif

namespace avgsim::cli {
namespace {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// document model

struct Value {
  enum class Kind { string, number, boolean, array } kind = Kind::number;
  std::string text;  // string contents, or the raw number token
  bool flag = false;
  std::vector<Value> items;
  int line = 0;
  int column = 0;
};

struct Entry {
  std::string key;
  Value value;
};

struct Document {
  std::vector<std::string> order;
  std::map<std::string, std::vector<Entry>> sections;  // "" holds top-level keys
};

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Document parse() {
    Document doc;
    doc.order.push_back("");
    doc.sections[""];
    std::string current;
    std::size_t pos = 0;
    while (pos <= text_.size()) {
      const std::size_t eol = std::min(text_.find('\n', pos), text_.size());
      line_text_ = text_.substr(pos, eol - pos);
      if (!line_text_.empty() && line_text_.back() == '\r') line_text_.remove_suffix(1);
      col_ = 0;
      ++line_;
      parse_line(doc, current);
      pos = eol + 1;
    }
    return doc;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("line " + std::to_string(line_) + ", column " + std::to_string(col_ + 1) + ": " + what, line_,
                     static_cast<int>(col_) + 1);
  }

  void skip_ws() {
    while (col_ < line_text_.size() && (line_text_[col_] == ' ' || line_text_[col_] == '\t')) ++col_;
  }
  bool at_end_or_comment() {
    skip_ws();
    return col_ >= line_text_.size() || line_text_[col_] == '#';
  }

  static bool bare_char(char ch) {
    return (ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z') || (ch >= '0' && ch <= '9') || ch == '_' || ch == '-';
  }

  std::string bare_word() {
    const std::size_t start = col_;
    while (col_ < line_text_.size() && bare_char(line_text_[col_])) ++col_;
    if (col_ == start) fail("expected a name");
    return std::string(line_text_.substr(start, col_ - start));
  }

  void parse_line(Document& doc, std::string& current) {
    if (at_end_or_comment()) return;
    if (line_text_[col_] == '[') {
      ++col_;
      skip_ws();
      std::string name = bare_word();
      skip_ws();
      if (col_ >= line_text_.size() || line_text_[col_] != ']') fail("expected ']' after section name");
      ++col_;
      if (!at_end_or_comment()) fail("unexpected text after section header");
      if (doc.sections.count(name)) fail("duplicate section [" + name + "]");
      doc.order.push_back(name);
      doc.sections[name];
      current = name;
      return;
    }
    const std::size_t key_col = col_;
    std::string key = bare_word();
    skip_ws();
    if (col_ >= line_text_.size() || line_text_[col_] != '=') fail("expected '=' after key '" + key + "'");
    ++col_;
    skip_ws();
    Value v = value();
    if (!at_end_or_comment()) fail("unexpected text after value");
    auto& entries = doc.sections[current];
    for (const auto& e : entries) {
      if (e.key == key) {
        col_ = key_col;
        fail("duplicate key '" + key + "'");
      }
    }
    entries.push_back({std::move(key), std::move(v)});
  }

  Value value() {
    skip_ws();
    if (col_ >= line_text_.size()) fail("missing value");
    Value v;
    v.line = line_;
    v.column = static_cast<int>(col_) + 1;
    const char ch = line_text_[col_];
    if (ch == '"') {
      v.kind = Value::Kind::string;
      ++col_;
      while (true) {
        if (col_ >= line_text_.size()) fail("unterminated string");
        const char c = line_text_[col_++];
        if (c == '"') break;
        if (c == '\\') {
          if (col_ >= line_text_.size()) fail("unterminated escape");
          const char e = line_text_[col_++];
          if (e == 'n') v.text += '\n';
          else if (e == 't') v.text += '\t';
          else if (e == '"' || e == '\\') v.text += e;
          else fail(std::string("unknown escape '\\") + e + "'");
        } else {
          v.text += c;
        }
      }
      return v;
    }
    if (ch == '[') {
      v.kind = Value::Kind::array;
      ++col_;
      skip_ws();
      if (col_ < line_text_.size() && line_text_[col_] == ']') {
        ++col_;
        return v;
      }
      while (true) {
        Value item = value();
        if (item.kind == Value::Kind::array) fail("nested arrays are not supported");
        v.items.push_back(std::move(item));
        skip_ws();
        if (col_ >= line_text_.size()) fail("unterminated array");
        if (line_text_[col_] == ',') {
          ++col_;
          skip_ws();
          if (col_ < line_text_.size() && line_text_[col_] == ']') {
            ++col_;
            return v;
          }
          continue;
        }
        if (line_text_[col_] == ']') {
          ++col_;
          return v;
        }
        fail("expected ',' or ']' in array");
      }
    }
    const std::size_t start = col_;
    while (col_ < line_text_.size() && line_text_[col_] != ',' && line_text_[col_] != ']' &&
           line_text_[col_] != '#' && line_text_[col_] != ' ' && line_text_[col_] != '\t') {
      ++col_;
    }
    const std::string token(line_text_.substr(start, col_ - start));
    if (token == "true" || token == "false") {
      v.kind = Value::Kind::boolean;
      v.flag = token == "true";
      return v;
    }
    double d = 0.0;
    const char* b = token.data();
    const char* e = b + token.size();
    if (!token.empty() && *b == '+') ++b;
    auto res = std::from_chars(b, e, d);
    if (token.empty() || res.ec != std::errc() || res.ptr != e) {
      col_ = start;
      fail("invalid value '" + token + "'");
    }
    v.kind = Value::Kind::number;
    v.text = token;
    return v;
  }

  std::string_view text_;
  std::string_view line_text_;
  std::size_t col_ = 0;
  int line_ = 0;
};

// ---------------------------------------------------------------------------
// value conversion

std::string where(const std::string& path, const Value& v) {
  return path + " (line " + std::to_string(v.line) + ")";
}

double as_double(const std::string& path, const Value& v) {
  if (v.kind != Value::Kind::number) throw InvalidArgument(where(path, v) + ": expected a number");
  double d = 0.0;
  const char* b = v.text.data();
  if (*b == '+') ++b;
  std::from_chars(b, v.text.data() + v.text.size(), d);
  if (!std::isfinite(d)) throw InvalidArgument(where(path, v) + ": must be finite");
  return d;
}

std::uint64_t as_u64(const std::string& path, const Value& v) {
  if (v.kind != Value::Kind::number) throw InvalidArgument(where(path, v) + ": expected an integer");
  std::uint64_t u = 0;
  auto res = std::from_chars(v.text.data(), v.text.data() + v.text.size(), u);
  if (res.ec != std::errc() || res.ptr != v.text.data() + v.text.size()) {
    throw InvalidArgument(where(path, v) + ": expected a non-negative integer, got " + v.text);
  }
  return u;
}

bool as_bool(const std::string& path, const Value& v) {
  if (v.kind != Value::Kind::boolean) throw InvalidArgument(where(path, v) + ": expected true or false");
  return v.flag;
}

std::string as_string(const std::string& path, const Value& v) {
  if (v.kind != Value::Kind::string) throw InvalidArgument(where(path, v) + ": expected a string");
  return v.text;
}

std::vector<double> as_doubles(const std::string& path, const Value& v) {
  if (v.kind != Value::Kind::array) throw InvalidArgument(where(path, v) + ": expected an array of numbers");
  std::vector<double> out;
  for (const auto& item : v.items) out.push_back(as_double(path, item));
  return out;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    if (c == '\t') {
      out += "\\t";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

std::string doubles_text(const std::vector<double>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ", ";
    out += format_double(v[i]);
  }
  return out + "]";
}

// ---------------------------------------------------------------------------
// key table shared by parse and serialize

struct KeySpec {
  std::string name;
  std::function<void(const std::string& path, const Value&)> set;
  std::function<std::optional<std::string>()> get;  // nullopt: omit
};

struct SectionSpec {
  std::string name;
  std::vector<KeySpec> keys;
};

struct PhiArrays {
  std::vector<double> amplitudes, frequencies, phases;
};

KeySpec num(std::string name, double& ref) {
  return {std::move(name), [&ref](const std::string& p, const Value& v) { ref = as_double(p, v); },
          [&ref] { return std::optional<std::string>(format_double(ref)); }};
}
KeySpec count(std::string name, std::size_t& ref) {
  return {std::move(name), [&ref](const std::string& p, const Value& v) { ref = as_u64(p, v); },
          [&ref] { return std::optional<std::string>(std::to_string(ref)); }};
}
KeySpec u64(std::string name, std::uint64_t& ref) {
  return {std::move(name), [&ref](const std::string& p, const Value& v) { ref = as_u64(p, v); },
          [&ref] { return std::optional<std::string>(std::to_string(ref)); }};
}
KeySpec integer(std::string name, int& ref) {
  return {std::move(name),
          [&ref](const std::string& p, const Value& v) {
            const std::uint64_t u = as_u64(p, v);
            if (u > 1000000) throw InvalidArgument(where(p, v) + ": value too large");
            ref = static_cast<int>(u);
          },
          [&ref] { return std::optional<std::string>(std::to_string(ref)); }};
}
KeySpec boolean(std::string name, bool& ref) {
  return {std::move(name), [&ref](const std::string& p, const Value& v) { ref = as_bool(p, v); },
          [&ref] { return std::optional<std::string>(ref ? "true" : "false"); }};
}
KeySpec text(std::string name, std::string& ref) {
  return {std::move(name), [&ref](const std::string& p, const Value& v) { ref = as_string(p, v); },
          [&ref] { return std::optional<std::string>(quote(ref)); }};
}
KeySpec list(std::string name, std::vector<double>& ref) {
  return {std::move(name), [&ref](const std::string& p, const Value& v) { ref = as_doubles(p, v); },
          [&ref] { return std::optional<std::string>(doubles_text(ref)); }};
}
KeySpec optional_num(std::string name, std::optional<double>& ref) {
  return {std::move(name), [&ref](const std::string& p, const Value& v) { ref = as_double(p, v); },
          [&ref] { return ref ? std::optional<std::string>(format_double(*ref)) : std::nullopt; }};
}
template <class E, class To, class From>
KeySpec enumeration(std::string name, E& ref, To to, From from) {
  return {std::move(name),
          [&ref, from](const std::string& p, const Value& v) {
            try {
              ref = from(as_string(p, v));
            } catch (const InvalidArgument& e) {
              throw InvalidArgument(where(p, v) + ": " + e.what());
            }
          },
          [&ref, to] { return std::optional<std::string>(quote(to(ref))); }};
}

std::vector<SectionSpec> key_table(RunConfig& c, PhiArrays& phi) {
  auto& sp = c.system.params;
  auto& pl = c.plan;
  std::vector<SectionSpec> t;
  t.push_back({"", {u64("seed_base", c.seed_base)}});
  t.push_back({"system",
               {enumeration("name", c.system.name, [](ExampleName n) { return to_string(n); },
                            [](const std::string& s) { return example_name_from_string(s); }),
                num("ell1_amplitude", sp.ell1.amplitude), num("ell1_iota", sp.ell1.iota),
                num("ell1_limit", sp.ell1.offset), num("ell2_amplitude", sp.ell2.amplitude),
                num("ell2_iota", sp.ell2.iota), num("ell2_limit", sp.ell2.offset),
                num("phi_constant", sp.phi.constant), list("phi_amplitudes", phi.amplitudes),
                list("phi_frequencies", phi.frequencies), list("phi_phases", phi.phases), num("c", sp.c),
                num("a_coupling", sp.a_coupling), num("f_x", sp.f_x), num("f_y", sp.f_y),
                num("g1_mult", sp.g1_mult), num("g1_add", sp.g1_add), num("g2_add", sp.g2_add),
                optional_num("slow_cubic", sp.slow_cubic), optional_num("fast_cubic", sp.fast_cubic),
                num("generic_C", sp.generic_C)}});
  auto kind_to = [](OperatorKind k) { return to_string(k); };
  auto kind_from = [](const std::string& s) { return operator_kind_from_string(s); };
  t.push_back({"spaces",
               {count("slow_dim", c.spaces.slow_dim), enumeration("slow_kind", c.spaces.slow_kind, kind_to, kind_from),
                num("slow_v_exponent", c.spaces.slow_v_exponent), num("mass_shift", c.spaces.mass_shift),
                count("fast_dim", c.spaces.fast_dim), enumeration("fast_kind", c.spaces.fast_kind, kind_to, kind_from),
                num("fast_v_exponent", c.spaces.fast_v_exponent)}});
  auto& ic = c.integrator;
  t.push_back({"integrator",
               {enumeration("scheme", ic.scheme, [](Scheme s) { return to_string(s); },
                            [](const std::string& s) { return scheme_from_string(s); }),
                num("step", ic.step), num("newton_tol", ic.newton_tol), integer("newton_max_iter", ic.newton_max_iter),
                num("taming_power", ic.taming_power), num("fast_factor", ic.fast_factor),
                integer("finest_level", ic.finest_level)}});
  auto& pv = c.provider;
  t.push_back({"provider",
               {enumeration("mode", pv.mode, [](DriftMode m) { return to_string(m); },
                            [](const std::string& s) { return drift_mode_from_string(s); }),
                count("ensemble_M", pv.ensemble_M), num("pullback_S", pv.pullback_S), num("bias_tol", pv.bias_tol),
                num("step", pv.step), u64("seed", pv.seed), num("stderr_tol", pv.stderr_tol),
                num("t_quantum", pv.t_quantum), num("x_quantum", pv.x_quantum)}});
  t.push_back({"plan",
               {text("theorem", pl.theorem), list("eps_list", pl.eps_list), count("mc_paths", pl.mc_paths),
                num("horizon", pl.horizon), num("moment_p", pl.moment_p), num("epsilon", pl.epsilon),
                list("delta_list", pl.delta_list), num("bohr_T", pl.bohr_T), num("bohr_quad_step", pl.bohr_quad_step),
                list("bohr_anchors", pl.bohr_anchors), num("x_amplitude", pl.x_amplitude),
                num("y_amplitude", pl.y_amplitude), num("t_anchor", pl.t_anchor),
                count("check_samples", pl.check_samples), num("check_scale", pl.check_scale),
                list("ap_taus", pl.ap_taus), list("ap_anchors", pl.ap_anchors), count("ap_M", pl.ap_M),
                num("epsilon_ap", pl.epsilon_ap), num("ap_threshold", pl.ap_threshold),
                num("ap_scan_tau_max", pl.ap_scan_tau_max),
                num("ap_scan_tau_step", pl.ap_scan_tau_step), num("ap_scan_probe_max", pl.ap_scan_probe_max),
                num("ap_scan_probe_step", pl.ap_scan_probe_step), num("ap_scan_window", pl.ap_scan_window)}});
  t.push_back({"output",
               {text("directory", c.output.directory), boolean("write_paths", c.output.write_paths),
                boolean("csv", c.output.csv)}});
  return t;
}

std::string suggestion(const std::string& name, const std::vector<std::string>& known) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& k : known) {
    const std::size_t d = levenshtein(name, k);
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (best.empty() || best_d > std::max<std::size_t>(2, name.size() / 3)) return "";
  return " (did you mean '" + best + "'?)";
}

void fill_phi_arrays(const RunConfig& c, PhiArrays& phi) {
  for (const auto& term : c.system.params.phi.terms) {
    phi.amplitudes.push_back(term.amplitude);
    phi.frequencies.push_back(term.frequency);
    phi.phases.push_back(term.phase);
  }
}

void assemble_phi(RunConfig& c, const PhiArrays& phi) {
  const std::size_t n = phi.amplitudes.size();
  if (phi.frequencies.size() != n || phi.phases.size() != n) {
    throw InvalidArgument("system.phi_amplitudes, phi_frequencies and phi_phases must have equal lengths");
  }
  c.system.params.phi.terms.clear();
  for (std::size_t i = 0; i < n; ++i) {
    c.system.params.phi.terms.push_back({phi.amplitudes[i], phi.frequencies[i], phi.phases[i]});
  }
}

// ---------------------------------------------------------------------------
// artifacts

class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) {}

  void write(const std::string& rel, const std::string& bytes) {
    const fs::path p = dir_ / rel;
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + p.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed for " + p.string());
    files_.push_back({rel, fnv1a64(bytes), bytes.size()});
  }

  void manifest(const std::string& command, const RunConfig& cfg) {
    ojson j;
    j["spec_version"] = kReportSchemaVersion;
    j["tool"] = "avgsim";
    j["tool_version"] = tool_version();
    j["command"] = command;
    j["config_hash"] = hex64(fnv1a64(serialize_config(cfg)));
    j["seed_base"] = cfg.seed_base;
    j["files"] = ojson::array();
    for (const auto& f : files_) {
      j["files"].push_back({{"path", f.path}, {"fnv1a64", hex64(f.hash)}, {"bytes", f.bytes}});
    }
    const std::string s = j.dump(2) + "\n";
    std::ofstream out(dir_ / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest.json");
    out << s;
  }

 private:
  struct FileRecord {
    std::string path;
    std::uint64_t hash;
    std::size_t bytes;
  };
  fs::path dir_;
  std::vector<FileRecord> files_;
};

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

ojson header(const std::string& command) {
  ojson j;
  j["spec_version"] = kReportSchemaVersion;
  j["command"] = command;
  return j;
}

std::string dump(const ojson& j) { return j.dump(2) + "\n"; }

std::string path_bytes(const PathSample& p) {
  std::ostringstream out(std::ios::binary);
  write_path_binary(out, p);
  return out.str();
}

struct Outcome {
  int code = kExitPass;
  std::string summary;
};

// ---------------------------------------------------------------------------
// commands

Outcome cmd_simulate(const RunConfig& cfg, ArtifactWriter& w) {
  const ExperimentPlan plan = cfg.to_plan();
  const CoefficientBundle bundle = build_plan_system(plan);
  const TimeGrid grid(0.0, plan.horizon, cfg.integrator.step);
  const SeedRecord seeds{cfg.seed_base};
  const PathSample p = simulate_coupled(bundle, cfg.plan.epsilon, plan.x0(), plan.y0(), grid, seeds, cfg.integrator);
  ojson j = header("simulate");
  j["eps"] = cfg.plan.epsilon;
  j["points"] = grid.points();
  j["w1_checksum"] = hex64(p.w1_checksum);
  j["final_slow"] = p.slow.back().coeffs();
  j["final_fast"] = p.fast.back().coeffs();
  w.write("results.json", dump(j));
  if (cfg.output.csv) {
    std::ostringstream t;
    t << "t,slow_H,fast_H\n";
    for (std::size_t i = 0; i < grid.points(); ++i) {
      t << format_double(grid.time(i)) << ',' << format_double(norm(bundle.slow_space, p.slow[i], NormKind::H))
        << ',' << format_double(norm(bundle.fast_space, p.fast[i], NormKind::H)) << '\n';
    }
    w.write("tables/path_norms.csv", t.str());
  }
  if (cfg.output.write_paths) w.write("paths/coupled.bin", path_bytes(p));
  return {kExitPass, "simulate: " + std::to_string(grid.points()) + " points"};
}

Outcome cmd_frozen(const RunConfig& cfg, ArtifactWriter& w) {
  const ExperimentPlan plan = cfg.to_plan();
  const CoefficientBundle bundle = build_plan_system(plan);
  const SeedRecord seeds{cfg.seed_base};
  const PathSample p =
      simulate_frozen(bundle, plan.x0(), 0.0, plan.horizon, plan.y0(), cfg.integrator.step, seeds, cfg.integrator);
  ojson j = header("frozen");
  j["points"] = p.grid.points();
  j["final_fast"] = p.fast.back().coeffs();
  w.write("results.json", dump(j));
  if (cfg.output.csv) {
    std::ostringstream t;
    t << "t,fast_H\n";
    for (std::size_t i = 0; i < p.grid.points(); ++i) {
      t << format_double(p.grid.time(i)) << ',' << format_double(norm(bundle.fast_space, p.fast[i], NormKind::H))
        << '\n';
    }
    w.write("tables/frozen_norms.csv", t.str());
  }
  if (cfg.output.write_paths) w.write("paths/frozen.bin", path_bytes(p));
  return {kExitPass, "frozen: " + std::to_string(p.grid.points()) + " points"};
}

Outcome cmd_measure(const RunConfig& cfg, ArtifactWriter& w) {
  const ExperimentPlan plan = cfg.to_plan();
  const CoefficientBundle bundle = build_plan_system(plan);
  const State x = plan.x0();
  EnsembleOptions eo;
  eo.M = cfg.provider.ensemble_M;
  eo.step = cfg.provider.step;
  eo.seed = cfg.seed_base;
  eo.bias_tol = cfg.provider.bias_tol;
  eo.integrator = cfg.integrator;
  eo.S = cfg.provider.pullback_S > 0.0
             ? cfg.provider.pullback_S
             : std::max(eo.step, required_pullback(bundle, x, State(bundle.fast_dim()), cfg.provider.bias_tol));
  const MeasureEnsemble e = estimate_evolution_measure(bundle, x, cfg.plan.t_anchor, eo);
  ojson j = header("measure");
  j["t"] = e.t_anchor;
  j["M"] = e.size();
  j["pullback_S"] = e.pullback_horizon;
  j["bias_bound"] = e.bias_bound;
  j["second_moment"] = e.second_moment;
  j["mean"] = e.mean();
  j["variance"] = e.variance();
  w.write("results.json", dump(j));
  if (cfg.output.csv) {
    const auto m = e.mean();
    const auto v = e.variance();
    std::ostringstream t;
    t << "mode,mean,variance\n";
    for (std::size_t k = 0; k < m.size(); ++k) t << k + 1 << ',' << format_double(m[k]) << ',' << format_double(v[k]) << '\n';
    w.write("tables/measure.csv", t.str());
  }
  if (cfg.output.write_paths) {
    std::ostringstream out(std::ios::binary);
    write_ensemble(out, e);
    w.write("paths/ensemble.bin", out.str());
  }
  return {kExitPass, "measure: M=" + std::to_string(e.size()) + ", S=" + format_double(e.pullback_horizon)};
}

Outcome cmd_average(const RunConfig& cfg, ArtifactWriter& w) {
  const ExperimentPlan plan = cfg.to_plan();
  const CoefficientBundle bundle = build_plan_system(plan);
  const AveragedDriftProvider provider(bundle, plan.provider);
  const State x = plan.x0();
  const BohrMeanReport fbar = bohr_limit_drift(provider, x, plan.bohr_T, plan.bohr_anchors, plan.bohr_quad_step);
  const AsymptoticA abar = asymptotic_A(bundle, {x}, plan.bohr_T);
  const TimeAveragedG1 gbar = time_avg_G1(bundle, x, plan.bohr_T, plan.bohr_anchors, plan.bohr_quad_step);
  ojson j = header("average");
  j["x"] = x.coeffs();
  j["F_bar"] = fbar.value;
  j["F_bar_tail_estimate"] = fbar.tail_estimate;
  j["window_T"] = fbar.window_T;
  j["ell1_bar"] = abar.ell1_bar;
  j["A_residual"] = abar.residual;
  j["ell2_bar"] = gbar.ell2_bar;
  j["G1_deviation"] = gbar.deviation;
  w.write("results.json", dump(j));
  if (cfg.output.csv) {
    std::ostringstream t;
    t << "mode,F_bar\n";
    for (std::size_t k = 0; k < fbar.value.size(); ++k) t << k + 1 << ',' << format_double(fbar.value[k]) << '\n';
    w.write("tables/limit_drift.csv", t.str());
  }
  return {kExitPass, "average: tail estimate " + format_double(fbar.tail_estimate)};
}

Outcome cmd_converge(const RunConfig& cfg, ArtifactWriter& w) {
  const ExperimentPlan plan = cfg.to_plan();
  ConvergenceReport rep;
  if (cfg.plan.theorem == "T1") {
    rep = run_convergence_T1(plan);
  } else if (cfg.plan.theorem == "T2") {
    rep = run_convergence_T2(plan);
  } else {
    throw InvalidArgument("plan.theorem must be \"T1\" or \"T2\", got \"" + cfg.plan.theorem + "\"");
  }
  w.write("results.json", report_json(rep, plan));
  if (cfg.output.csv) w.write("tables/convergence.csv", report_csv(rep));
  w.write("timing.json", timing_json(rep));
  const bool ok = !rep.inconclusive && rep.bound_check;
  return {ok ? kExitPass : kExitInconclusive,
          "converge " + rep.theorem + ": slope " + format_double(rep.rate_fit.slope) +
              (ok ? ", monotone and consistent with the eps^{1/6} bound" : ", flagged inconclusive")};
}

Outcome cmd_khasminskii(const RunConfig& cfg, ArtifactWriter& w) {
  const ExperimentPlan plan = cfg.to_plan();
  const KhasminskiiReport rep = run_khasminskii_study(plan, plan.delta_list);
  w.write("results.json", report_json(rep, plan));
  if (cfg.output.csv) w.write("tables/khasminskii.csv", report_csv(rep));
  w.write("timing.json", timing_json(rep));
  return {rep.passed ? kExitPass : kExitInconclusive,
          "khasminskii: slope " + format_double(rep.fit.slope) + (rep.passed ? " in [0.3, 0.8]" : " outside [0.3, 0.8]")};
}

Outcome cmd_apcheck(const RunConfig& cfg, ArtifactWriter& w) {
  const ExperimentPlan plan = cfg.to_plan();
  const CoefficientBundle bundle = build_plan_system(plan);
  const auto& pl = cfg.plan;
  std::vector<double> probes;
  for (double s = 0.0; s <= pl.ap_scan_probe_max + 1e-9; s += pl.ap_scan_probe_step) probes.push_back(s);
  const AlmostPeriodicScalar phi = bundle.phi;
  const auto taus = translation_number_scan(ScalarSignal([&phi](double t) { return phi(t); }), pl.epsilon_ap, 0.0,
                                            pl.ap_scan_tau_max, pl.ap_scan_tau_step, probes);
  double worst_gap = 0.0;
  bool relatively_dense = true;
  for (double lo = 0.0; lo + pl.ap_scan_window <= pl.ap_scan_tau_max + 1e-9; lo += pl.ap_scan_window) {
    const bool hit = std::any_of(taus.begin(), taus.end(),
                                 [&](double t) { return t >= lo && t <= lo + pl.ap_scan_window; });
    if (!hit) relatively_dense = false;
  }
  worst_gap = max_translation_gap(taus, 0.0, pl.ap_scan_tau_max);

  ApDiagnosticOptions ao;
  ao.M = pl.ap_M;
  ao.seed = cfg.seed_base;
  ao.epsilon_ap = pl.ap_threshold;
  ao.step = cfg.provider.step;
  ao.bias_tol = cfg.provider.bias_tol;
  ao.integrator = cfg.integrator;
  const ApDiagnosticReport diag = measure_ap_diagnostic(bundle, plan.x0(), pl.ap_taus, pl.ap_anchors, ao);

  ojson j = header("apcheck");
  j["scan_accepted"] = taus.size();
  j["scan_max_gap"] = worst_gap;
  j["scan_relatively_dense"] = relatively_dense;
  j["taus"] = diag.taus;
  j["anchors"] = diag.anchors;
  j["distances"] = diag.distances;
  j["noise_floor"] = diag.noise_floor;
  j["threshold"] = diag.threshold;
  j["max_distance"] = diag.max_distance;
  j["passed"] = diag.passed;
  w.write("results.json", dump(j));
  if (cfg.output.csv) {
    std::ostringstream t;
    t << "tau,anchor,distance\n";
    for (std::size_t i = 0; i < diag.taus.size(); ++i) {
      for (std::size_t a = 0; a < diag.anchors.size(); ++a) {
        t << format_double(diag.taus[i]) << ',' << format_double(diag.anchors[a]) << ','
          << format_double(diag.distances[i][a]) << '\n';
      }
    }
    w.write("tables/ap_distances.csv", t.str());
  }
  const bool ok = diag.passed && relatively_dense;
  return {ok ? kExitPass : kExitInconclusive,
          std::string("apcheck: ") + (ok ? "all probed translations accepted" : "some translation rejected")};
}

Outcome cmd_conditions(const RunConfig& cfg, ArtifactWriter& w) {
  const ExperimentPlan plan = cfg.to_plan();
  const CoefficientBundle bundle = build_plan_system(plan);
  CheckOptions co;
  co.samples = cfg.plan.check_samples;
  co.seed = cfg.seed_base;
  co.state_scale = cfg.plan.check_scale;
  const auto reports = check_all_conditions(bundle, co);
  ojson j = header("conditions");
  j["checks"] = ojson::array();
  bool all = true;
  for (const auto& r : reports) {
    all = all && r.passed;
    j["checks"].push_back({{"condition", r.condition},
                           {"samples", r.samples},
                           {"violations", r.violations},
                           {"max_margin", r.max_margin},
                           {"passed", r.passed}});
  }
  j["passed"] = all;
  w.write("results.json", dump(j));
  if (cfg.output.csv) {
    std::ostringstream t;
    t << "condition,samples,violations,max_margin,passed\n";
    for (const auto& r : reports) {
      t << r.condition << ',' << r.samples << ',' << r.violations << ',' << format_double(r.max_margin) << ','
        << (r.passed ? "true" : "false") << '\n';
    }
    w.write("tables/conditions.csv", t.str());
  }
  return {all ? kExitPass : kExitInconclusive,
          std::string("conditions: ") + (all ? "all checks passed" : "violations found")};
}

using Command = Outcome (*)(const RunConfig&, ArtifactWriter&);

const std::map<std::string, Command>& commands() {
  static const std::map<std::string, Command> table{
      {"simulate", cmd_simulate},     {"frozen", cmd_frozen}, {"measure", cmd_measure},
      {"average", cmd_average},       {"converge", cmd_converge}, {"khasminskii", cmd_khasminskii},
      {"apcheck", cmd_apcheck},       {"conditions", cmd_conditions}};
  return table;
}

}  // namespace

// ---------------------------------------------------------------------------

ExperimentPlan RunConfig::to_plan() const {
  ExperimentPlan p;
  p.system = system;
  p.spaces = spaces;
  p.eps_list = plan.eps_list;
  p.mc_paths = plan.mc_paths;
  p.horizon = plan.horizon;
  p.moment_p = plan.moment_p;
  p.integrator = integrator;
  p.provider = provider;
  p.provider.integrator = integrator;
  p.initial = {plan.x_amplitude, plan.y_amplitude};
  p.seed_base = seed_base;
  p.bohr_T = plan.bohr_T;
  p.bohr_quad_step = plan.bohr_quad_step;
  p.bohr_anchors = plan.bohr_anchors;
  p.delta_list = plan.delta_list;
  p.khasminskii_eps = plan.epsilon;
  return p;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string tool_version() { return AVGSIM_VERSION; }

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    for (const auto& [k, v] : commands()) n.push_back(k);
    return n;
  }();
  return names;
}

void validate_config(const RunConfig& cfg) {
  if (cfg.plan.theorem != "T1" && cfg.plan.theorem != "T2") {
    throw InvalidArgument("plan.theorem must be \"T1\" or \"T2\", got \"" + cfg.plan.theorem + "\"");
  }
  if (!(cfg.plan.epsilon > 0.0 && cfg.plan.epsilon <= 1.0)) throw InvalidArgument("plan.epsilon must lie in (0, 1]");
  if (cfg.output.directory.empty()) throw InvalidArgument("output.directory must be non-empty");
  if (cfg.provider.ensemble_M < 2) throw InvalidArgument("provider.ensemble_M must be >= 2");
  if (!(cfg.provider.step > 0.0)) throw InvalidArgument("provider.step must be > 0");
  if (cfg.plan.check_samples == 0) throw InvalidArgument("plan.check_samples must be >= 1");
  if (!(cfg.plan.epsilon_ap > 0.0) || !(cfg.plan.ap_threshold >= 0.0)) {
    throw InvalidArgument("plan.epsilon_ap must be > 0 and plan.ap_threshold >= 0");
  }
  if (!(cfg.plan.ap_scan_tau_step > 0.0) || !(cfg.plan.ap_scan_probe_step > 0.0) || !(cfg.plan.ap_scan_window > 0.0)) {
    throw InvalidArgument("plan.ap_scan_* steps and window must be > 0");
  }
  try {
    cfg.integrator.validate();
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string("integrator: ") + e.what());
  }
  try {
    cfg.to_plan().validate();
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string("plan: ") + e.what());
  }
  try {
    build_system(cfg.system, cfg.spaces.slow(), cfg.spaces.fast());
  } catch (const ConfigurationRejected& e) {
    throw ConfigurationRejected(std::string("system: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(std::string("system/spaces: ") + e.what());
  }
}

RunConfig parse_config(std::string_view text) {
  const Document doc = Parser(text).parse();
  RunConfig cfg;
  PhiArrays phi;
  fill_phi_arrays(cfg, phi);
  const auto table = key_table(cfg, phi);
  std::vector<std::string> section_names;
  for (const auto& s : table) {
    if (!s.name.empty()) section_names.push_back(s.name);
  }
  for (const auto& name : doc.order) {
    const auto spec = std::find_if(table.begin(), table.end(), [&](const SectionSpec& s) { return s.name == name; });
    if (spec == table.end()) {
      throw InvalidArgument("unknown section [" + name + "]" + suggestion(name, section_names));
    }
    std::vector<std::string> known;
    for (const auto& k : spec->keys) known.push_back(k.name);
    for (const auto& entry : doc.sections.at(name)) {
      const std::string path = name.empty() ? entry.key : name + "." + entry.key;
      const auto key = std::find_if(spec->keys.begin(), spec->keys.end(),
                                    [&](const KeySpec& k) { return k.name == entry.key; });
      if (key == spec->keys.end()) {
        throw InvalidArgument("unknown key '" + path + "' at line " + std::to_string(entry.value.line) +
                              suggestion(entry.key, known));
      }
      key->set(path, entry.value);
    }
  }
  assemble_phi(cfg, phi);
  cfg.provider.integrator = cfg.integrator;
  validate_config(cfg);
  return cfg;
}

RunConfig parse_config_file(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::runtime_error&) {
    throw InvalidArgument("cannot read config file '" + path + "'");
  }
  return parse_config(text);
}

std::string serialize_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  PhiArrays phi;
  fill_phi_arrays(copy, phi);
  const auto table = key_table(copy, phi);
  std::string out;
  for (const auto& section : table) {
    if (!section.name.empty()) out += "\n[" + section.name + "]\n";
    for (const auto& key : section.keys) {
      if (auto v = key.get()) out += key.name + " = " + *v + "\n";
    }
  }
  return out;
}

bool verify_manifest(const std::string& dir, std::ostream& err) {
  const fs::path root(dir);
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_file(root / "manifest.json"));
  } catch (const std::exception& e) {
    err << "verify: " << e.what() << "\n";
    return false;
  }
  bool ok = true;
  for (const auto& f : m.at("files")) {
    const std::string rel = f.at("path").get<std::string>();
    std::string bytes;
    try {
      bytes = read_file(root / rel);
    } catch (const std::exception&) {
      err << "verify: missing " << rel << "\n";
      ok = false;
      continue;
    }
    if (hex64(fnv1a64(bytes)) != f.at("fnv1a64").get<std::string>()) {
      err << "verify: hash mismatch for " << rel << "\n";
      ok = false;
    }
  }
  return ok;
}

int run(const Flags& flags, std::ostream& out, std::ostream& err) {
  try {
    const auto& table = commands();
    const auto it = table.find(flags.command);
    if (it == table.end()) {
      err << "error: unknown command '" << flags.command << "'" << suggestion(flags.command, command_names()) << "\n";
      return kExitError;
    }
    RunConfig cfg = flags.config_path ? parse_config_file(*flags.config_path) : RunConfig{};
    if (flags.seed) cfg.seed_base = *flags.seed;
    if (flags.out) cfg.output.directory = *flags.out;
    if (flags.threads) {
      if (*flags.threads == 0) throw InvalidArgument("--threads must be >= 1");
      set_thread_count(*flags.threads);
    }
    validate_config(cfg);

    const fs::path dir(cfg.output.directory);
    // the previous run's hashes, for --verify re-runs
    std::optional<nlohmann::json> previous;
    if (flags.verify && fs::exists(dir / "manifest.json")) {
      try {
        previous = nlohmann::json::parse(read_file(dir / "manifest.json"));
      } catch (const std::exception&) {
        previous.reset();
      }
    }
    fs::create_directories(dir);
    ArtifactWriter writer(dir);
    const Outcome outcome = it->second(cfg, writer);
    writer.write("config.toml", serialize_config(cfg));
    writer.manifest(flags.command, cfg);

    if (flags.verify) {
      if (!verify_manifest(dir.string(), err)) return kExitError;
      if (previous) {
        const nlohmann::json current = nlohmann::json::parse(read_file(dir / "manifest.json"));
        auto results_hash = [](const nlohmann::json& m) -> std::string {
          for (const auto& f : m.at("files")) {
            if (f.at("path") == "results.json") return f.at("fnv1a64").get<std::string>();
          }
          return "";
        };
        if (previous->value("config_hash", "") == current.value("config_hash", "") &&
            results_hash(*previous) != results_hash(current)) {
          err << "verify: results.json differs from the previous run with the same config\n";
          return kExitError;
        }
      }
    }
    if (outcome.code == kExitPass) {
      out << "PASS " << outcome.summary << "\n";
    } else {
      out << "INCONCLUSIVE " << outcome.summary << "\n";
    }
    return outcome.code;
  } catch (const PullbackTooShort& e) {
    err << "error: " << e.what() << " (required S = " << format_double(e.required_S()) << ")\n";
  } catch (const EnsembleTooSmall& e) {
    err << "error: " << e.what() << " (required M = " << e.required_M() << ")\n";
  } catch (const ParseError& e) {
    err << "error: config: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitError;
}

}  // namespace avgsim::cli
