#pragma once

// Subcommands behind the glab executable. Each one reads a RunConfig, writes
// CSV tables and summary.txt into the output directory and returns the exit
// status: 0 when every verdict passes, 2 when one fails, 1 on errors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "glab/adjoint.hpp"
#include "glab/config.hpp"
#include "glab/driver.hpp"
#include "glab/expectation.hpp"
#include "glab/problems.hpp"
#include "glab/report.hpp"
#include "glab/verify.hpp"

namespace glab::cli {

struct Options {
  std::string config;  // empty: defaults
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> paths;
  std::optional<std::string> out;
  bool quiet = false;
  std::string example;  // problem id for `example`
};

inline constexpr int kExitPass = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitVerdictFailed = 2;

namespace fs = std::filesystem;

class Context {
 public:
  Context(RunConfig config, RunSetup setup, fs::path dir, bool quiet, std::ostream& out, std::ostream& err)
      : config(std::move(config)), setup(std::move(setup)), dir(std::move(dir)), quiet_(quiet), out_(out), err_(err) {}

  void log(const std::string& msg) const {
    if (!quiet_) err_ << "glab: " << msg << '\n';
  }
  void write(const std::string& name, const CsvTable& t) const { t.write(dir / name); }
  void write_text(const std::string& name, const std::string& text) const { CsvTable::write_text(dir / name, text); }
  int finish(const Summary& s, bool pass) const {
    s.write(dir / "summary.txt");
    if (!quiet_) out_ << s.str();
    return pass ? kExitPass : kExitVerdictFailed;
  }

  RunConfig config;
  RunSetup setup;
  fs::path dir;

 private:
  bool quiet_;
  std::ostream& out_;
  std::ostream& err_;
};

// -------------------------------------------------------------------- tables

inline std::optional<double> constant_theta_sq(const ScenarioProcess& sc) {
  if (sc.kind() != ScenarioProcess::Kind::constant) return std::nullopt;
  return sc.deterministic_theta_sq(0);
}

inline void write_adjoint_tables(const Context& ctx, const AdjointSolution& sol) {
  const auto& grid = ctx.setup.grid;
  CsvTable members({"scenario", "p0", "mean_r2", "min_r2", "max_condition"});
  CsvTable fit({"scenario", "step", "t", "r2", "condition"});
  for (std::size_t i = 0; i < sol.member_labels.size(); ++i) {
    const auto& r2 = sol.member_r2[i];
    const auto& cond = sol.member_condition[i];
    double mean = 0.0, lo = INFINITY, hi = 0.0;
    for (std::size_t k = 0; k < r2.size(); ++k) {
      mean += r2[k];
      lo = std::min(lo, r2[k]);
      hi = std::max(hi, cond[k]);
      fit.row() << sol.member_labels[i] << k << grid.time(k) << r2[k] << cond[k];
    }
    mean /= static_cast<double>(std::max<std::size_t>(r2.size(), 1));
    members.row() << sol.member_labels[i] << sol.member_p0[i] << mean << lo << hi;
  }
  ctx.write("adjoint_members.csv", members);
  ctx.write("adjoint_fit.csv", fit);

  CsvTable path({"reference", "step", "t", "k_mean", "k_se"});
  CsvTable summary({"reference", "k_terminal", "k_terminal_se", "max_abs", "max_z", "floor", "argmax_step",
                    "increments_up", "increments_down", "comparison_nodes", "comparison_violations",
                    "path_dependent_nodes", "path_dependent_exceed", "path_dependent_max_excess"});
  for (const auto& r : sol.residuals) {
    for (std::size_t k = 0; k < r.k_mean.size(); ++k) path.row() << r.reference << k << grid.time(k) << r.k_mean[k] << r.k_se[k];
    summary.row() << r.reference << r.terminal() << r.terminal_se() << r.max_abs << r.max_z << r.floor << r.argmax_node
                  << r.increments_up << r.increments_down << r.comparison_nodes << r.comparison_violations
                  << r.path_dependent_nodes << r.path_dependent_exceed << r.path_dependent_max_excess;
  }
  ctx.write("k_residual.csv", path);
  ctx.write("k_residual_summary.csv", summary);

  if (ctx.config.plots && !sol.residuals.empty()) {
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2"};
    std::vector<Series> series;
    for (std::size_t i = 0; i < sol.residuals.size(); ++i) {
      const auto& r = sol.residuals[i];
      Series s{r.reference, {}, r.k_mean, colors[i % 7]};
      for (std::size_t k = 0; k < r.k_mean.size(); ++k) s.x.push_back(grid.time(k));
      series.push_back(std::move(s));
    }
    const auto& w = sol.residuals[sol.worst];
    Series band{"+3 se (" + w.reference + ")", {}, {}, "#7f7f7f", true};
    Series lower{"-3 se", {}, {}, "#7f7f7f", true};
    for (std::size_t k = 0; k < w.k_se.size(); ++k) {
      band.x.push_back(grid.time(k));
      lower.x.push_back(grid.time(k));
      band.y.push_back(3.0 * w.k_se[k] + w.floor);
      lower.y.push_back(-3.0 * w.k_se[k] - w.floor);
    }
    series.push_back(std::move(band));
    series.push_back(std::move(lower));
    ctx.write_text("k_residual.svg", line_chart_svg("K residual", "t", series));
  }
}

/// Per-measure adjoint against the closed form, on constant members of a
/// built-in problem.
struct AdjointAccuracy {
  std::string scenario;
  double theta_sq = 0.0;
  double p_rms_rel = 0.0;    // RMS of p_hat / p - 1
  double q_ratio_rms = 0.0;  // RMS of q_hat / p_hat - q / p
  double q_ratio_oracle = 0.0;  // mean of q / p
  std::vector<double> p_hat_mean, p_oracle_mean;  // per step
};

inline std::vector<AdjointAccuracy> adjoint_accuracy(const RunSetup& s, const AdjointSolution& sol,
                                                     std::size_t sample = 2000) {
  std::vector<AdjointAccuracy> out;
  if (!s.builtin || !sol.aggregate) return out;
  const auto& pr = s.problem;
  const std::size_t n = s.grid.n_steps();
  for (const auto& sc : *s.family) {
    const auto th = constant_theta_sq(sc);
    if (!th) continue;
    const MeasureAdjoint* m = nullptr;
    for (const auto& cand : sol.aggregate->members())
      if (cand.scenario() == sc.label()) m = &cand;
    if (!m) continue;
    const std::size_t np = std::min(sample, s.n_paths);
    const PathBundle paths = simulate_driver(sc, s.grid, s.seed, np);
    const StatePaths state = simulate_state(pr, s.control, paths);
    AdjointAccuracy a{sc.label(), *th, 0.0, 0.0, 0.0, std::vector<double>(n, 0.0), std::vector<double>(n, 0.0)};
    double sp = 0.0, sq = 0.0, sr = 0.0;
    std::size_t cnt = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const double t = s.grid.time(k);
      std::size_t ck = 0;
      for (std::size_t i = 0; i < np; ++i) {
        if (!state.ok(i)) continue;
        const double x = state.x(i, k), u = state.u(i, k);
        const auto [p_hat, q_hat] = m->value_and_q(k, x);
        const double p = adjoint_oracle(*s.builtin, s.params, t, x, *th);
        const double h = 1e-5 * std::max(1.0, std::abs(x));
        const double dp = (adjoint_oracle(*s.builtin, s.params, t, x + h, *th) -
                           adjoint_oracle(*s.builtin, s.params, t, x - h, *th)) /
                          (2.0 * h);
        const double ratio = pr.diffusion(t, x, u) * dp / p;
        sp += (p_hat / p - 1.0) * (p_hat / p - 1.0);
        sq += (q_hat / p_hat - ratio) * (q_hat / p_hat - ratio);
        sr += ratio;
        a.p_hat_mean[k] += p_hat;
        a.p_oracle_mean[k] += p;
        ++cnt;
        ++ck;
      }
      if (ck) {
        a.p_hat_mean[k] /= static_cast<double>(ck);
        a.p_oracle_mean[k] /= static_cast<double>(ck);
      }
    }
    if (cnt) {
      a.p_rms_rel = std::sqrt(sp / static_cast<double>(cnt));
      a.q_ratio_rms = std::sqrt(sq / static_cast<double>(cnt));
      a.q_ratio_oracle = sr / static_cast<double>(cnt);
    }
    out.push_back(std::move(a));
  }
  return out;
}

inline void write_accuracy(const Context& ctx, const std::vector<AdjointAccuracy>& acc, Summary& summary) {
  if (acc.empty()) return;
  const auto& grid = ctx.setup.grid;
  CsvTable t({"scenario", "theta_sq", "p_rms_rel", "q_ratio_rms", "q_ratio_oracle"});
  CsvTable prof({"scenario", "step", "t", "p_hat_mean", "p_oracle_mean"});
  double worst_p = 0.0, worst_q = 0.0;
  for (const auto& a : acc) {
    t.row() << a.scenario << a.theta_sq << a.p_rms_rel << a.q_ratio_rms << a.q_ratio_oracle;
    for (std::size_t k = 0; k < a.p_hat_mean.size(); ++k)
      prof.row() << a.scenario << k << grid.time(k) << a.p_hat_mean[k] << a.p_oracle_mean[k];
    worst_p = std::max(worst_p, a.p_rms_rel);
    worst_q = std::max(worst_q, a.q_ratio_rms);
  }
  ctx.write("adjoint_oracle.csv", t);
  ctx.write("adjoint_profile.csv", prof);
  summary.verdict("p_oracle", worst_p <= 0.02, worst_p, 0.02);
  summary.verdict("q_ratio_oracle", worst_q <= 0.05, worst_q, 0.05);

  if (ctx.config.plots) {
    const auto& a = acc.back();
    Series hat{"p_hat (" + a.scenario + ")", {}, a.p_hat_mean, "#1f77b4"};
    Series orc{"closed form", {}, a.p_oracle_mean, "#d62728", true};
    for (std::size_t k = 0; k < a.p_hat_mean.size(); ++k) {
      hat.x.push_back(grid.time(k));
      orc.x.push_back(grid.time(k));
    }
    ctx.write_text("p_vs_oracle.svg", line_chart_svg("mean p along paths", "t", {hat, orc}));
  }
}

inline void write_robustness(const Context& ctx, const RobustnessResult& r, Summary& summary,
                             bool expect_failure = false) {
  CsvTable t({"scenario", "perturbation", "a", "j_base", "delta_j", "std_error", "z", "improves"});
  for (const auto& row : r.rows)
    t.row() << row.scenario << row.perturbation << row.a << row.j_base << row.delta << row.std_error
            << (row.std_error > 0.0 ? row.delta / row.std_error : 0.0) << row.improves;
  ctx.write("robustness.csv", t);
  if (const auto best = r.strongest()) {
    const auto& row = r.rows[*best];
    summary.note("strongest cell: scenario=" + row.scenario + " beta=" + row.perturbation +
                 " a=" + format_double(row.a, 6) + " delta_j=" + format_double(row.delta, 6) +
                 " se=" + format_double(row.std_error, 6));
  }
  const bool robust = r.strongly_robust_on_family();
  std::string note = robust ? "strongly robust on family" : "NOT strongly robust on family";
  if (expect_failure) note += robust ? " (a counter-row was expected and not found)" : " (expected failure)";
  summary.note(note);
  summary.verdict("robustness", r.strongly_robust_on_family(), static_cast<double>(r.counter_rows), 0.0);

  if (ctx.config.plots && !r.rows.empty()) {
    std::vector<std::string> labels;
    std::vector<double> v, e;
    for (const auto& row : r.rows) {
      labels.push_back(row.scenario + " " + row.perturbation + " a=" + format_double(row.a, 4));
      v.push_back(row.delta);
      e.push_back(3.0 * row.std_error);
    }
    ctx.write_text("robustness.svg", bar_chart_svg("Delta J per cell (+-3 se)", labels, v, e));
  }
}

inline void write_verification(const Context& ctx, const VerificationReport& r, Summary& summary,
                               bool expect_failure = false) {
  write_adjoint_tables(ctx, r.adjoint);
  const auto& grid = ctx.setup.grid;
  if (r.criticality) {
    CsvTable t({"step", "t", "max_abs_dH_du"});
    for (std::size_t k = 0; k < r.criticality->per_node.size(); ++k)
      t.row() << k << grid.time(k) << r.criticality->per_node[k];
    ctx.write("criticality.csv", t);
    summary.note(std::string("criticality mode=") + to_string(r.criticality->mode) +
                 " max_abs=" + format_double(r.criticality->stat, 6) + " at " + r.criticality->argmax_scenario +
                 " step " + std::to_string(r.criticality->argmax_node));
  }
  if (r.concavity) {
    CsvTable t({"where", "scenario", "t", "x", "u", "curvature", "scale"});
    for (const auto& v : r.concavity->violations) t.row() << v.where << v.scenario << v.t << v.x << v.u << v.curvature << v.scale;
    ctx.write("concavity_violations.csv", t);
    summary.note("concavity points checked=" + std::to_string(r.concavity->points_checked));
  }
  if (!r.adjoint.aggregate) summary.note("aggregation refused: " + r.adjoint.refusal);
  CsvTable g({"scenario", "perturbation", "analytic", "analytic_se", "finite_difference", "finite_difference_se", "gap",
              "tolerance", "pass"});
  for (const auto& x : r.gateaux)
    g.row() << x.scenario << x.perturbation << x.analytic.value << x.analytic.std_error << x.finite_difference.value
            << x.finite_difference.std_error << x.gap << x.tolerance << x.pass();
  ctx.write("gateaux.csv", g);
  for (const auto& v : r.verdicts)
    if (v.check != "robustness") summary.verdict(v.check, v.pass, v.stat, v.tol);
  write_robustness(ctx, r.robustness, summary, expect_failure);
}

/// J per scenario (with the closed form where one exists) and the sup.
inline void write_values(const Context& ctx, Summary& summary, bool with_verdict) {
  const auto& s = ctx.setup;
  const auto perf = FunctionalSpec::performance(s.problem, s.control);
  CsvTable t({"scenario", "j", "std_error", "n_paths", "oracle", "z"});
  std::vector<Estimate> ests;
  double worst_z = 0.0;
  bool any_oracle = false;
  for (const auto& sc : *s.family) {
    const auto e = expect_under(perf, sc, s.grid, s.seed, s.n_paths);
    ests.push_back(e);
    auto& row = t.row() << sc.label() << e.value << e.std_error << e.n_paths;
    const auto th = constant_theta_sq(sc);
    if (s.builtin && th && s.builtin != BuiltinId::example3_general) {
      const double o = value_oracle(*s.builtin, s.params, *th);
      const double z = std::abs(e.value - o) / std::max(e.std_error, 1e-300);
      const double zz = std::abs(e.value - o) <= 1e-9 * (1.0 + std::abs(o)) ? 0.0 : z;
      row << o << zz;
      worst_z = std::max(worst_z, zz);
      any_oracle = true;
    } else {
      row << "" << "";
    }
  }
  ctx.write("values.csv", t);
  const auto sup = sup_of(ests);
  summary.note("sublinear value=" + format_double(sup.best.value, 10) + " se=" + format_double(sup.best.std_error, 6) +
               " argmax=" + sup.best.scenario);
  if (with_verdict && any_oracle) summary.verdict("j_oracle", worst_z <= 3.0, worst_z, 3.0);
}

// --------------------------------------------------------------- subcommands

inline int cmd_simulate(Context& ctx) {
  Summary summary;
  summary.note("simulate problem=" + ctx.setup.problem.id + " control=" + ctx.setup.control.label());
  ctx.log("estimating J under " + std::to_string(ctx.setup.family->size()) + " scenarios");
  write_values(ctx, summary, true);
  if (ctx.config.dump_paths > 0) {
    std::size_t i = 0;
    for (const auto& sc : *ctx.setup.family) {
      const auto paths = simulate_driver(sc, ctx.setup.grid, ctx.setup.seed,
                                         std::min(ctx.config.dump_paths, ctx.setup.n_paths));
      const auto state = simulate_state(ctx.setup.problem, ctx.setup.control, paths);
      dump_paths_csv((ctx.dir / ("paths_" + std::to_string(i++) + ".csv")).string(), paths, &state,
                     ctx.config.dump_paths);
    }
  }
  return ctx.finish(summary, summary.all_pass());
}

inline int cmd_sweep(Context& ctx) {
  const auto& s = ctx.setup;
  Summary summary;
  summary.note("sweep problem=" + s.problem.id + " control=" + s.control.label());
  ctx.log("robustness sweep over " + std::to_string(s.family->size() * s.perturbations.size() * s.a_grid.size()) +
          " cells");
  const auto r = robustness_sweep(s.problem, s.control, s.perturbations, *s.family, s.a_grid, s.seed, s.n_paths,
                                  s.options);
  write_robustness(ctx, r, summary);
  return ctx.finish(summary, summary.all_pass());
}

inline int cmd_bsde(Context& ctx) {
  const auto& s = ctx.setup;
  Summary summary;
  summary.note("bsde problem=" + s.problem.id + " control=" + s.control.label());
  ctx.log("solving the adjoint under " + std::to_string(s.family->size()) + " scenarios");
  const auto sol = aggregate_gbsde(s.problem, s.control, *s.family, s.seed, s.n_paths, s.basis);
  write_adjoint_tables(ctx, sol);
  if (!sol.aggregate) summary.note("aggregation refused: " + sol.refusal);
  double worst_z = 0.0;
  bool within = true;
  std::size_t nodes = 0, viol = 0;
  for (const auto& r : sol.residuals) {
    worst_z = std::max(worst_z, r.max_z);
    within = within && r.within(s.options.z);
    nodes += r.comparison_nodes;
    viol += r.comparison_violations;
  }
  summary.verdict("k_residual", within, worst_z, s.options.z);
  const double share = nodes ? static_cast<double>(viol) / static_cast<double>(nodes) : 0.0;
  summary.verdict("comparison", share <= 1e-3, share, 1e-3);
  write_accuracy(ctx, adjoint_accuracy(s, sol), summary);
  return ctx.finish(summary, summary.all_pass());
}

inline int cmd_verify(Context& ctx) {
  const auto& s = ctx.setup;
  Summary summary;
  summary.note("verify problem=" + s.problem.id + " control=" + s.control.label());
  ctx.log("running the verification battery");
  const auto r = verify(s.verify_setup());
  write_verification(ctx, r, summary);
  return ctx.finish(summary, summary.all_pass());
}

/// example3_general: the scenario-wise optimum of each constant scenario is
/// not improved on under its own scenario, but every one of them is improved
/// on under some other member, so no tested control is robust.
inline int example_general(Context& ctx, Summary& summary) {
  const auto& s = ctx.setup;
  std::vector<ScenarioProcess> constants;
  for (const auto& sc : *s.family)
    if (constant_theta_sq(sc)) constants.push_back(sc);
  if (constants.size() < 2) throw ConfigError("example3_general needs at least two constant scenarios");
  const ScenarioFamily fam(constants);
  CsvTable t({"control_theta_sq", "scenario", "perturbation", "a", "delta_j", "std_error", "improves"});
  std::size_t own_improving = 0, robust_controls = 0;
  for (const auto& own : constants) {
    const double th = *constant_theta_sq(own);
    const Control u = example3_general_control(s.params, th);
    ctx.log("sweeping the optimum for theta_sq=" + format_double(th, 6));
    const auto r = robustness_sweep(s.problem, u, s.perturbations, fam, s.a_grid, s.seed, s.n_paths, s.options);
    bool robust = true;
    for (const auto& row : r.rows) {
      t.row() << th << row.scenario << row.perturbation << row.a << row.delta << row.std_error << row.improves;
      if (row.scenario == own.label()) own_improving += row.improves;
      else if (row.improves) robust = false;
    }
    robust_controls += robust;
  }
  ctx.write("scenario_optima.csv", t);
  summary.note("documented negative result: the pathwise maximizer depends on the volatility");
  summary.verdict("scenario_optimal", own_improving == 0, static_cast<double>(own_improving), 0.0);
  summary.verdict("no_single_robust_control", robust_controls == 0, static_cast<double>(robust_controls), 0.0);
  return ctx.finish(summary, summary.all_pass());
}

inline int cmd_example(Context& ctx) {
  const auto& s = ctx.setup;
  Summary summary;
  summary.note("example " + s.problem.id + " control=" + s.control.label());
  ctx.log("value table against the closed form");
  write_values(ctx, summary, true);
  if (s.builtin == BuiltinId::example3_general) return example_general(ctx, summary);

  ctx.log("running the verification battery");
  const bool counter = s.builtin == BuiltinId::counterexample;
  const auto r = verify(s.verify_setup());
  if (counter) summary.note("expected failure: K residual and robustness must FAIL for this example");
  write_verification(ctx, r, summary, counter);
  write_accuracy(ctx, adjoint_accuracy(s, r.adjoint), summary);

  if (!counter) return ctx.finish(summary, summary.all_pass());
  // The reproduction passes when the failure is detected.
  double best_z = 0.0;
  if (const auto b = r.robustness.strongest()) {
    const auto& row = r.robustness.rows[*b];
    best_z = row.std_error > 0.0 ? row.delta / row.std_error : 0.0;
  }
  const auto* k = r.verdict("k_residual");
  const bool detected = !r.robustness.strongly_robust_on_family() && k && !k->pass;
  summary.verdict("detects_non_robustness", detected, best_z, s.options.z);
  return ctx.finish(summary, detected);
}

// ---------------------------------------------------------------------- run

inline int run(const std::string& subcommand, const Options& opt, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  try {
    RunConfig c = opt.config.empty() ? RunConfig{} : load_config(opt.config);
    if (subcommand == "example") {
      if (opt.example != "custom" && !parse_builtin_id(opt.example))
        throw ConfigError("unknown example '" + opt.example + "'");
      c.problem = opt.example;
    }
    if (opt.seed) c.seed = *opt.seed;
    if (opt.paths) {
      if (*opt.paths < 2) throw ConfigError("--paths must be at least 2");
      c.paths = *opt.paths;
    }
    if (opt.out) c.out_dir = *opt.out;
    RunSetup setup = materialize(c);
    fs::path dir(c.out_dir);
    fs::create_directories(dir);
    Context ctx(std::move(c), std::move(setup), dir, opt.quiet, out, err);
    if (subcommand == "simulate") return cmd_simulate(ctx);
    if (subcommand == "verify") return cmd_verify(ctx);
    if (subcommand == "example") return cmd_example(ctx);
    if (subcommand == "sweep") return cmd_sweep(ctx);
    if (subcommand == "bsde") return cmd_bsde(ctx);
    throw InvalidArgument("unknown subcommand '" + subcommand + "'");
  } catch (const std::exception& e) {
    err << "glab: error: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace glab::cli
