#pragma once

// Run configuration: a sectioned key = value file.
//
//   [run]          steps, paths, seed
//   [problem]      id (a built-in name or "custom"), x0, horizon, sigma_low_sq,
//                  sigma_high_sq, u_min, u_max, delay; built-ins: rate, m, s
//                  (numbers or expressions in t), alpha; custom: drift,
//                  qv_drift, diffusion, running (in t, x, u), terminal,
//                  terminal_derivative (in x), multiplicative, adjoint_power
//   [control]      u (expression in t, or in t and x for feedback)
//   [scenarios]    constants, bang_bang (switch times), theta (constant
//                  volatilities), step_<name> (volatility as a function of t)
//   [perturbations] builtin (names), beta_<name> (expression), a_grid
//   [basis]        degree, coordinate (state | log_state), weight_power
//   [tolerances]   criticality, criticality_paths, remark_grid, lattice,
//                  lattice_margin, concavity, concavity_times, concavity_paths,
//                  fd_step, gateaux_slack, gateaux_paths, z
//   [output]       dir, plots, dump_paths
//
// '#' and ';' start comments. Lists are comma separated.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "glab/control_problem.hpp"
#include "glab/error.hpp"
#include "glab/expression.hpp"
#include "glab/grid.hpp"
#include "glab/problems.hpp"
#include "glab/regression.hpp"
#include "glab/scenario.hpp"
#include "glab/verify.hpp"

namespace glab {

/// A raw value with the line it came from.
struct Setting {
  std::string text;
  int line = 0;
};

class IniDocument {
 public:
  using Section = std::map<std::string, Setting>;

  static IniDocument parse(std::string_view text) {
    IniDocument doc;
    std::string current;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      const std::size_t end = std::min(text.find('\n', start), text.size());
      std::string line(text.substr(start, end - start));
      start = end + 1;
      ++line_no;
      if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
      line = trim(line);
      if (line.empty()) {
        if (end == text.size()) break;
        continue;
      }
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("unterminated section header", line_no);
        current = trim(line.substr(1, line.size() - 2));
        if (current.empty()) throw ConfigError("empty section name", line_no);
        if (doc.sections_.count(current)) throw ConfigError("duplicate section [" + current + "]", line_no);
        doc.sections_[current];
        doc.section_lines_[current] = line_no;
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("expected 'key = value'", line_no);
      if (current.empty()) throw ConfigError("key outside of any section", line_no);
      const std::string key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("empty key", line_no);
      auto& sec = doc.sections_[current];
      if (sec.count(key)) throw ConfigError("duplicate key '" + key + "' in [" + current + "]", line_no);
      sec[key] = Setting{trim(line.substr(eq + 1)), line_no};
      if (end == text.size()) break;
    }
    return doc;
  }

  const std::map<std::string, Section>& sections() const noexcept { return sections_; }
  int section_line(const std::string& s) const {
    const auto it = section_lines_.find(s);
    return it == section_lines_.end() ? 0 : it->second;
  }
  const Setting* get(const std::string& section, const std::string& key) const {
    const auto s = sections_.find(section);
    if (s == sections_.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

 private:
  std::map<std::string, Section> sections_;
  std::map<std::string, int> section_lines_;
};

struct RunConfig {
  std::size_t steps = 200;
  std::size_t paths = 100000;
  std::uint64_t seed = 1;

  std::string problem = "example3";
  int problem_line = 0;
  std::map<std::string, Setting> problem_keys;  // everything in [problem] except id

  std::optional<Setting> control;

  std::size_t constants = 5;
  std::optional<std::vector<double>> bang_bang;  // default: one switch at T/2
  std::vector<double> thetas;
  std::vector<std::pair<std::string, Setting>> step_scenarios;
  int scenarios_line = 0;
  int thetas_line = 0;

  std::vector<std::string> perturbations{"one", "late", "early", "sign_switch"};
  int perturbations_line = 0;
  std::vector<std::pair<std::string, Setting>> custom_betas;
  std::optional<std::vector<double>> a_grid;

  std::optional<std::size_t> degree;
  std::optional<BasisSpec::Coordinate> coordinate;
  std::optional<double> weight_power;

  VerifyOptions options;

  std::string out_dir = "glab_out";
  bool plots = false;
  std::size_t dump_paths = 0;
};

namespace detail {

inline double parse_double(const Setting& s) {
  double v = 0.0;
  const char* b = s.text.data();
  const char* e = b + s.text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e || !std::isfinite(v)) throw ConfigError("expected a number, got '" + s.text + "'", s.line);
  return v;
}

inline std::uint64_t parse_unsigned(const Setting& s) {
  std::uint64_t v = 0;
  const char* b = s.text.data();
  const char* e = b + s.text.size();
  auto [p, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || p != e) throw ConfigError("expected a non-negative integer, got '" + s.text + "'", s.line);
  return v;
}

inline std::size_t parse_positive(const Setting& s) {
  const auto v = parse_unsigned(s);
  if (v == 0) throw ConfigError("value must be positive", s.line);
  return static_cast<std::size_t>(v);
}

inline double parse_positive_double(const Setting& s) {
  const double v = parse_double(s);
  if (!(v > 0.0)) throw ConfigError("value must be positive", s.line);
  return v;
}

inline bool parse_bool(const Setting& s) {
  if (s.text == "true" || s.text == "yes" || s.text == "1" || s.text == "on") return true;
  if (s.text == "false" || s.text == "no" || s.text == "0" || s.text == "off") return false;
  throw ConfigError("expected true or false, got '" + s.text + "'", s.line);
}

inline std::vector<std::string> split_list(const Setting& s) {
  std::vector<std::string> out;
  if (s.text.empty() || s.text == "none") return out;
  std::stringstream ss(s.text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = IniDocument::trim(item);
    if (item.empty()) throw ConfigError("empty list item", s.line);
    out.push_back(item);
  }
  return out;
}

inline std::vector<double> parse_double_list(const Setting& s) {
  std::vector<double> out;
  for (const auto& item : split_list(s)) out.push_back(parse_double(Setting{item, s.line}));
  return out;
}

inline Expression parse_expression(const Setting& s) {
  try {
    return Expression::parse(s.text);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what(), s.line);
  }
}

inline void reject_unknown(const IniDocument::Section& sec, const std::string& name,
                           std::initializer_list<std::string_view> keys, std::string_view prefix = {}) {
  for (const auto& [k, v] : sec) {
    if (!prefix.empty() && k.rfind(prefix, 0) == 0 && k.size() > prefix.size()) continue;
    if (std::find(keys.begin(), keys.end(), k) == keys.end())
      throw ConfigError("unknown key '" + k + "' in [" + name + "]", v.line);
  }
}

}  // namespace detail

inline RunConfig parse_config(std::string_view text) {
  const IniDocument doc = IniDocument::parse(text);
  RunConfig c;
  using namespace detail;
  static const std::set<std::string> known{"run",   "problem",    "control", "scenarios", "perturbations",
                                           "basis", "tolerances", "output"};
  for (const auto& [name, sec] : doc.sections())
    if (!known.count(name)) throw ConfigError("unknown section [" + name + "]", doc.section_line(name));

  auto section = [&doc](const std::string& name) -> const IniDocument::Section* {
    const auto it = doc.sections().find(name);
    return it == doc.sections().end() ? nullptr : &it->second;
  };

  if (const auto* s = section("run")) {
    reject_unknown(*s, "run", {"steps", "paths", "seed"});
    if (const auto* v = doc.get("run", "steps")) c.steps = parse_positive(*v);
    if (const auto* v = doc.get("run", "paths")) c.paths = parse_positive(*v);
    if (const auto* v = doc.get("run", "seed")) c.seed = parse_unsigned(*v);
  }

  if (const auto* s = section("problem")) {
    c.problem_line = doc.section_line("problem");
    for (const auto& [k, v] : *s) {
      if (k == "id") {
        c.problem = v.text;
        c.problem_line = v.line;
        if (v.text != "custom" && !parse_builtin_id(v.text))
          throw ConfigError("unknown problem id '" + v.text + "'", v.line);
      } else {
        c.problem_keys[k] = v;
      }
    }
    const bool custom = c.problem == "custom";
    static const std::set<std::string> common{"x0", "horizon", "sigma_low_sq", "sigma_high_sq", "u_min", "u_max", "delay"};
    static const std::set<std::string> builtin_keys{"rate", "m", "s", "alpha"};
    static const std::set<std::string> custom_keys{"drift",    "qv_drift",        "diffusion",     "running",
                                                   "terminal", "terminal_derivative", "multiplicative", "adjoint_power"};
    for (const auto& [k, v] : c.problem_keys) {
      if (common.count(k)) continue;
      if (custom ? custom_keys.count(k) : builtin_keys.count(k)) continue;
      throw ConfigError("key '" + k + "' does not apply to problem '" + c.problem + "'", v.line);
    }
    for (const auto& k : {"horizon", "sigma_low_sq", "sigma_high_sq"})
      if (c.problem_keys.count(k)) parse_positive_double(c.problem_keys[k]);
    for (const auto& k : {"x0", "u_min", "u_max", "delay", "alpha", "adjoint_power"})
      if (c.problem_keys.count(k)) parse_double(c.problem_keys[k]);
    for (const auto& k : {"rate", "m", "s"})
      if (c.problem_keys.count(k)) {
        const auto e = parse_expression(c.problem_keys[k]);
        if (e.uses_x() || e.uses_u()) throw ConfigError(std::string(k) + " may depend on t only", c.problem_keys[k].line);
      }
    for (const auto& k : {"drift", "qv_drift", "diffusion", "running", "terminal", "terminal_derivative"})
      if (c.problem_keys.count(k)) parse_expression(c.problem_keys[k]);
    if (c.problem_keys.count("multiplicative")) parse_bool(c.problem_keys["multiplicative"]);
    if (custom)
      for (const auto& k : {"drift", "diffusion", "running", "terminal", "terminal_derivative"})
        if (!c.problem_keys.count(k))
          throw ConfigError(std::string("custom problem needs '") + k + "'", c.problem_line);
  } else if (doc.sections().count("problem") == 0) {
    c.problem_line = 0;
  }

  if (const auto* s = section("control")) {
    reject_unknown(*s, "control", {"u"});
    if (const auto* v = doc.get("control", "u")) {
      const auto e = parse_expression(*v);
      if (e.uses_u()) throw ConfigError("a control cannot depend on u", v->line);
      c.control = *v;
    }
  }
  if (c.problem == "custom" && !c.control) throw ConfigError("custom problem needs [control] u", c.problem_line);

  if (const auto* s = section("scenarios")) {
    c.scenarios_line = doc.section_line("scenarios");
    reject_unknown(*s, "scenarios", {"constants", "bang_bang", "theta"}, "step_");
    if (const auto* v = doc.get("scenarios", "constants")) c.constants = static_cast<std::size_t>(parse_unsigned(*v));
    if (const auto* v = doc.get("scenarios", "bang_bang")) c.bang_bang = parse_double_list(*v);
    if (const auto* v = doc.get("scenarios", "theta")) {
      c.thetas = parse_double_list(*v);
      c.thetas_line = v->line;
      for (double th : c.thetas)
        if (!(th > 0.0)) throw ConfigError("volatility must be positive", v->line);
    }
    for (const auto& [k, v] : *s)
      if (k.rfind("step_", 0) == 0) {
        const auto e = parse_expression(v);
        if (e.uses_x() || e.uses_u()) throw ConfigError("scenario volatility may depend on t only", v.line);
        c.step_scenarios.emplace_back(k.substr(5), v);
      }
    if (c.constants == 0 && c.bang_bang && c.bang_bang->empty() && c.thetas.empty() && c.step_scenarios.empty())
      throw ConfigError("scenario family is empty", c.scenarios_line);
  }

  if (const auto* s = section("perturbations")) {
    c.perturbations_line = doc.section_line("perturbations");
    reject_unknown(*s, "perturbations", {"builtin", "a_grid"}, "beta_");
    if (const auto* v = doc.get("perturbations", "builtin")) {
      c.perturbations = split_list(*v);
      for (const auto& name : c.perturbations)
        if (name != "one" && name != "late" && name != "early" && name != "sign_switch")
          throw ConfigError("unknown perturbation '" + name + "'", v->line);
    }
    if (const auto* v = doc.get("perturbations", "a_grid")) {
      c.a_grid = parse_double_list(*v);
      if (c.a_grid->empty()) throw ConfigError("a_grid is empty", v->line);
    }
    for (const auto& [k, v] : *s)
      if (k.rfind("beta_", 0) == 0) {
        const auto e = parse_expression(v);
        if (e.uses_u()) throw ConfigError("a perturbation cannot depend on u", v.line);
        c.custom_betas.emplace_back(k.substr(5), v);
      }
  }

  if (const auto* s = section("basis")) {
    reject_unknown(*s, "basis", {"degree", "coordinate", "weight_power"});
    if (const auto* v = doc.get("basis", "degree")) {
      c.degree = static_cast<std::size_t>(parse_unsigned(*v));
      if (*c.degree > 12) throw ConfigError("basis degree must be at most 12", v->line);
    }
    if (const auto* v = doc.get("basis", "coordinate")) {
      if (v->text == "state") c.coordinate = BasisSpec::Coordinate::state;
      else if (v->text == "log_state") c.coordinate = BasisSpec::Coordinate::log_state;
      else throw ConfigError("coordinate must be state or log_state", v->line);
    }
    if (const auto* v = doc.get("basis", "weight_power")) c.weight_power = parse_double(*v);
  }

  if (const auto* s = section("tolerances")) {
    reject_unknown(*s, "tolerances",
                   {"criticality", "criticality_paths", "remark_grid", "lattice", "lattice_margin", "concavity",
                    "concavity_times", "concavity_paths", "fd_step", "gateaux_slack", "gateaux_paths", "z"});
    auto& o = c.options;
    auto num = [&](const char* k, double& dst) {
      if (const auto* v = doc.get("tolerances", k)) dst = parse_positive_double(*v);
    };
    auto count = [&](const char* k, std::size_t& dst) {
      if (const auto* v = doc.get("tolerances", k)) dst = parse_positive(*v);
    };
    num("criticality", o.criticality_tol);
    count("criticality_paths", o.criticality_paths);
    count("remark_grid", o.remark_grid);
    count("lattice", o.lattice);
    num("lattice_margin", o.lattice_margin);
    num("concavity", o.concavity_tol);
    count("concavity_times", o.concavity_times);
    count("concavity_paths", o.concavity_paths);
    num("fd_step", o.fd_step);
    num("gateaux_slack", o.gateaux_slack);
    count("gateaux_paths", o.gateaux_paths);
    num("z", o.z);
    if (o.lattice < 3)
      throw ConfigError("lattice needs at least 3 points", doc.get("tolerances", "lattice")->line);
  }

  if (const auto* s = section("output")) {
    reject_unknown(*s, "output", {"dir", "plots", "dump_paths"});
    if (const auto* v = doc.get("output", "dir")) {
      if (v->text.empty()) throw ConfigError("output dir is empty", v->line);
      c.out_dir = v->text;
    }
    if (const auto* v = doc.get("output", "plots")) c.plots = parse_bool(*v);
    if (const auto* v = doc.get("output", "dump_paths")) c.dump_paths = static_cast<std::size_t>(parse_unsigned(*v));
  }
  return c;
}

inline RunConfig load_config(const std::string& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw ConfigError("cannot read config file '" + file + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(file + ": " + e.what());
  }
}

/// Everything a subcommand needs, built from a RunConfig.
struct RunSetup {
  std::optional<BuiltinId> builtin;
  BuiltinParams params;
  ControlProblem problem;
  Control control;
  TimeGrid grid{1.0, 1};
  std::optional<ScenarioFamily> family;
  std::vector<Perturbation> perturbations;
  std::vector<double> a_grid;
  BasisSpec basis;
  VerifyOptions options;
  std::uint64_t seed = 1;
  std::size_t n_paths = 0;

  VerifySetup verify_setup() const {
    return {problem, control, *family, perturbations, a_grid, basis, seed, n_paths, options};
  }
};

namespace detail {

inline TimeFunction time_function(const Setting& s) {
  const auto e = parse_expression(s);
  if (e.is_constant()) return {e(0.0), {}};
  return {0.0, [e](double t) { return e(t); }};
}

inline Coefficient coefficient(const Setting& s) {
  const auto e = parse_expression(s);
  return Coefficient{[e](double t, double x, double u) { return e(t, x, u); }, {}, {}};
}

inline Control control_from(const Expression& e, const std::string& label) {
  if (e.uses_x()) return Control::feedback([e](double t, double x) { return e(t, x); }, label);
  return Control::open_loop([e](double t) { return e(t); }, label);
}

}  // namespace detail

inline RunSetup materialize(const RunConfig& c) {
  using namespace detail;
  RunSetup s;
  const auto& keys = c.problem_keys;
  auto num = [&keys](const char* k) -> std::optional<double> {
    const auto it = keys.find(k);
    if (it == keys.end()) return std::nullopt;
    return parse_double(it->second);
  };
  auto line_of = [&](const char* k) {
    const auto it = keys.find(k);
    return it == keys.end() ? c.problem_line : it->second.line;
  };

  try {
    BuiltinParams p;
    if (auto v = num("x0")) p.x0 = *v;
    if (auto v = num("horizon")) p.horizon = *v;
    if (auto v = num("sigma_low_sq")) p.bounds.sigma_low_sq = *v;
    if (auto v = num("sigma_high_sq")) p.bounds.sigma_high_sq = *v;
    if (auto v = num("alpha")) p.alpha = *v;
    if (keys.count("rate")) p.rate = time_function(keys.at("rate"));
    if (keys.count("m")) p.m = time_function(keys.at("m"));
    if (keys.count("s")) p.s = time_function(keys.at("s"));
    const auto u_min = num("u_min"), u_max = num("u_max");
    try {
      p.bounds.validate();
    } catch (const Error& e) {
      throw ConfigError(e.what(), line_of(keys.count("sigma_low_sq") ? "sigma_low_sq" : "sigma_high_sq"));
    }
    s.params = p;

    if (c.problem == "custom") {
      ControlProblem& pr = s.problem;
      pr.id = "custom";
      pr.x0 = p.x0;
      pr.bounds = p.bounds;
      pr.drift = coefficient(keys.at("drift"));
      pr.qv_drift = keys.count("qv_drift") ? coefficient(keys.at("qv_drift")) : Coefficient::zero();
      pr.diffusion = coefficient(keys.at("diffusion"));
      pr.running = coefficient(keys.at("running"));
      const auto g = parse_expression(keys.at("terminal"));
      const auto dg = parse_expression(keys.at("terminal_derivative"));
      pr.terminal = [g](double x) { return g(0.0, x); };
      pr.terminal_derivative = [dg](double x) { return dg(0.0, x); };
      pr.multiplicative = keys.count("multiplicative") && parse_bool(keys.at("multiplicative"));
      if (auto v = num("adjoint_power")) pr.adjoint_power = *v;
      pr.controls = {u_min.value_or(-10.0), u_max.value_or(10.0)};
      s.basis = BasisSpec{3, pr.multiplicative ? BasisSpec::Coordinate::log_state : BasisSpec::Coordinate::state,
                          pr.adjoint_power};
      s.a_grid = {-0.5, -0.25, 0.25, 0.5};
    } else {
      s.builtin = *parse_builtin_id(c.problem);
      if (u_min || u_max) {
        const ControlSet def = builtin(*s.builtin, p).problem.controls;
        p.controls = ControlSet{u_min.value_or(def.lo), u_max.value_or(def.hi)};
        s.params = p;
      }
      Builtin b = builtin(*s.builtin, p);
      s.problem = std::move(b.problem);
      s.control = std::move(b.candidate);
      s.basis = b.basis;
      s.a_grid = b.a_grid;
    }
    if (auto v = num("delay")) {
      if (*v < 0.0) throw ConfigError("delay must be >= 0", line_of("delay"));
      s.problem.delay = *v;
    }
    if (!(s.problem.controls.lo <= s.problem.controls.hi))
      throw ConfigError("u_min must not exceed u_max", line_of("u_min"));
    s.problem.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what(), c.problem_line);
  }

  if (c.control) s.control = control_from(parse_expression(*c.control), c.control->text);

  s.grid = TimeGrid(s.params.horizon, c.steps);
  s.seed = c.seed;
  s.n_paths = c.paths;
  s.options = c.options;

  // scenario family
  try {
    std::vector<ScenarioProcess> members;
    auto add = [&members](const ScenarioFamily& f) {
      for (const auto& m : f) members.push_back(m);
    };
    const auto& bounds = s.problem.bounds;
    if (c.constants > 0) add(canonical_family(bounds, s.grid, family::Constants{c.constants}));
    for (double th : c.thetas) {
      try {
        members.push_back(make_scenario(rule::Constant{th}, bounds, s.grid));
      } catch (const Error& err) {
        throw ConfigError(err.what(), c.thetas_line);
      }
    }
    for (double ts : c.bang_bang.value_or(std::vector<double>{0.5 * s.grid.horizon()})) add(canonical_family(bounds, s.grid, family::BangBangOnSign{ts}));
    for (const auto& [name, setting] : c.step_scenarios) {
      const auto e = parse_expression(setting);
      std::vector<double> thetas(s.grid.n_steps());
      for (std::size_t k = 0; k < thetas.size(); ++k) thetas[k] = e(s.grid.time(k));
      try {
        members.push_back(make_scenario(rule::Step{std::move(thetas)}, bounds, s.grid, name));
      } catch (const Error& err) {
        throw ConfigError(err.what(), setting.line);
      }
    }
    s.family = ScenarioFamily(std::move(members));
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what(), c.scenarios_line);
  }

  // perturbations
  const auto defaults = default_perturbations(s.grid);
  for (const auto& name : c.perturbations)
    for (const auto& d : defaults)
      if (d.label == name) s.perturbations.push_back(d);
  for (const auto& [name, setting] : c.custom_betas)
    s.perturbations.push_back({name, control_from(parse_expression(setting), name)});
  if (c.a_grid) s.a_grid = *c.a_grid;

  if (c.degree) s.basis.degree = static_cast<int>(*c.degree);
  if (c.coordinate) s.basis.coordinate = *c.coordinate;
  if (c.weight_power) s.basis.weight_power = *c.weight_power;
  return s;
}

}  // namespace glab
