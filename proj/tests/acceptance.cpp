// Acceptance suite: one PASS/FAIL line per criterion, at 1e5 paths and 200
// steps on [0, 1] unless GLAB_ACCEPTANCE_PATHS overrides the path count.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "glab/glab.hpp"

using namespace glab;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kSteps = 200;
constexpr std::uint64_t kSeed = 20240611;

std::size_t n_paths() {
  if (const char* v = std::getenv("GLAB_ACCEPTANCE_PATHS")) return std::stoul(v);
  return 100000;
}

std::string fmt(double v) { return format_double(v, 5); }

struct Line {
  bool pass = true;
  std::vector<std::string> notes;
  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back(std::string(ok ? "" : "!") + what);
  }
};

int failures = 0;

void criterion(int id, const std::string& name, const std::function<Line()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Line l;
  try {
    l = body();
  } catch (const std::exception& e) {
    l.require(false, std::string("error: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ostringstream os;
  os << "criterion " << id << ": " << (l.pass ? "PASS" : "FAIL") << "  " << name << "  [";
  for (std::size_t i = 0; i < l.notes.size(); ++i) os << (i ? "; " : "") << l.notes[i];
  os << "] (" << fmt(secs) << " s)";
  std::cout << os.str() << std::endl;
  failures += !l.pass;
}

/// Verification report of a built-in on constants(5) + bang_bang(T/2), computed once.
struct Run {
  Builtin ex;
  TimeGrid grid;
  ScenarioFamily family;
  VerificationReport report;
};

std::map<BuiltinId, Run> cache;

const Run& run_of(BuiltinId id) {
  if (const auto it = cache.find(id); it != cache.end()) return it->second;
  auto ex = builtin(id);
  const TimeGrid grid = ex.grid(kSteps);
  auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{5}) +
             canonical_family(ex.problem.bounds, grid, family::BangBangOnSign{0.5});
  VerifySetup s{ex.problem, ex.candidate, fam, default_perturbations(grid), ex.a_grid, ex.basis, kSeed, n_paths(), {}};
  auto report = verify(s);
  return cache.emplace(id, Run{std::move(ex), grid, std::move(fam), std::move(report)}).first->second;
}

bool verdict_pass(const VerificationReport& r, const std::string& check) {
  const auto* v = r.verdict(check);
  return v && v->pass;
}
double verdict_stat(const VerificationReport& r, const std::string& check) {
  const auto* v = r.verdict(check);
  return v ? v->stat : NAN;
}

/// Relative RMS of the fitted constant-member adjoints against the oracle, and
/// RMS of q/p - ratio, along fresh paths of each member.
struct Accuracy {
  double p_rms = 0.0;
  double q_rms = 0.0;
};
Accuracy adjoint_accuracy(const Run& r, double q_ratio) {
  const auto& agg = *r.report.adjoint.aggregate;
  double sp = 0.0, sq = 0.0;
  std::size_t c = 0;
  for (const auto& m : agg.members()) {
    std::optional<ScenarioProcess> sc;
    for (const auto& f : r.family)
      if (f.label() == m.scenario()) sc = f;
    const double th = *sc->deterministic_theta_sq(0);
    const auto paths = simulate_driver(*sc, r.grid, kSeed + 1, 2000);
    const auto state = simulate_state(r.ex.problem, r.ex.candidate, paths);
    for (std::size_t i = 0; i < paths.n_paths; ++i)
      for (std::size_t k = 0; k < kSteps; ++k) {
        const double x = state.x(i, k);
        const auto [p, q] = m.value_and_q(k, x);
        const double oracle = adjoint_oracle(r.ex.id, r.ex.params, r.grid.time(k), x, th);
        sp += std::pow(p / oracle - 1.0, 2);
        sq += std::pow(q / p - q_ratio, 2);
        ++c;
      }
  }
  return {std::sqrt(sp / c), std::sqrt(sq / c)};
}

Line constant_values(const Run& r, const std::vector<double>& thetas_sq, Line l) {
  for (double th : thetas_sq) {
    const auto sc = make_scenario(rule::Constant{std::sqrt(th)}, r.ex.problem.bounds, r.grid);
    const auto e = expect_under(FunctionalSpec::performance(r.ex.problem, r.ex.candidate), sc, r.grid, kSeed, n_paths());
    const double oracle = value_oracle(r.ex.id, r.ex.params, th);
    const double z = std::abs(e.value - oracle) / e.std_error;
    l.require(z <= 3.0, "J(theta_sq=" + fmt(th) + ")=" + fmt(e.value) + " vs " + fmt(oracle) + " z=" + fmt(z));
  }
  return l;
}

ControlProblem random_problem(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double a1 = u(rng), a2 = 1.0 + u(rng), a3 = u(rng), s0 = 0.5 + 0.5 * std::abs(u(rng)), s1 = 0.3 * u(rng),
               m1 = u(rng), c = u(rng);
  auto coef = [](Fn3 f) { return Coefficient{std::move(f), {}, {}}; };
  ControlProblem pr;
  pr.id = "random";
  pr.x0 = u(rng);
  pr.drift = coef([=](double t, double x, double v) { return a1 * x + a2 * v + a3 * std::sin(x + t); });
  pr.qv_drift = coef([=](double, double x, double v) { return m1 * std::tanh(x) * v; });
  pr.diffusion = coef([=](double, double x, double v) { return s0 + s1 * v + 0.1 * std::cos(x); });
  pr.running = coef([=](double, double x, double v) { return -(v - c) * (v - c) - 0.5 * x * x; });
  pr.terminal = [c](double x) { return -std::cosh(0.5 * x) + c * x; };
  pr.terminal_derivative = [c](double x) { return -0.5 * std::sinh(0.5 * x) + c; };
  pr.validate();
  return pr;
}

std::string read(const fs::path& f) {
  std::ifstream is(f, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

}  // namespace

int main() {
  std::cout << "acceptance: " << n_paths() << " paths, " << kSteps << " steps, T = 1, seed " << kSeed << std::endl;

  criterion(1, "example1 values and robustness", [] {
    const auto& r = run_of(BuiltinId::example1);
    Line l = constant_values(r, {0.25, 0.4375, 0.625, 0.8125, 1.0}, {});
    l.require(r.report.robustness.strongly_robust_on_family(),
              "improving cells=" + std::to_string(r.report.robustness.counter_rows));
    return l;
  });

  criterion(2, "example2 adjoint, criticality and value", [] {
    const auto& r = run_of(BuiltinId::example2);
    Line l;
    const auto acc = adjoint_accuracy(r, NAN);
    l.require(acc.p_rms <= 0.01, "p rel rms=" + fmt(acc.p_rms));
    const double crit = verdict_stat(r.report, "criticality");
    l.require(verdict_pass(r.report, "criticality") && crit < 1e-2, "criticality=" + fmt(crit));
    return constant_values(r, {0.25, 0.625, 1.0}, l);
  });

  criterion(3, "example3 verdicts, adjoint and values", [] {
    const auto& r = run_of(BuiltinId::example3);
    Line l;
    for (const char* v : {"criticality", "concavity", "k_residual", "gateaux"})
      l.require(verdict_pass(r.report, v), std::string(v) + "=" + fmt(verdict_stat(r.report, v)));
    const auto acc = adjoint_accuracy(r, -1.0);
    l.require(acc.p_rms <= 0.02, "p*X rel rms=" + fmt(acc.p_rms));
    l.require(acc.q_rms <= 0.05, "q/p+1 rms=" + fmt(acc.q_rms));
    return constant_values(r, {1.0, 0.25}, l);
  });

  criterion(4, "counterexample value, K residual and non-robustness", [] {
    const auto& r = run_of(BuiltinId::counterexample);
    Line l;
    const auto consts = canonical_family(r.ex.problem.bounds, r.grid, family::Constants{5});
    const auto sup = expect_sublinear(FunctionalSpec::performance(r.ex.problem, r.ex.candidate), consts, r.grid,
                                      kSeed, n_paths());
    const double target = 2.0 * std::exp(0.5);
    const double z = std::abs(sup.best.value - target) / sup.best.std_error;
    l.require(z <= 3.0 && sup.argmax == consts.size() - 1,
              "(a) sup J=" + fmt(sup.best.value) + " vs " + fmt(target) + " z=" + fmt(z) + " at " + sup.best.scenario);

    const auto& low = r.report.adjoint.residuals.front();
    const double closed = counterexample_k_terminal(r.ex.params, r.ex.params.bounds.sigma_low_sq);
    const double zk = std::abs(low.terminal() - closed) / low.terminal_se();
    l.require(low.terminal() < 0.0 && zk <= 3.0,
              "(b) K(T)=" + fmt(low.terminal()) + " vs " + fmt(closed) + " z=" + fmt(zk));

    // (c) the stated direction 1{t >= T/2} sign(B(T/2)) under bang_bang(T/2)
    double stated_z = -INFINITY, any_z = -INFINITY;
    std::string any_cell;
    for (const auto& row : r.report.robustness.rows) {
      if (row.scenario.rfind("bang_bang", 0) != 0) continue;
      const double zr = row.delta / row.std_error;
      if (row.perturbation == "sign_switch") stated_z = std::max(stated_z, zr);
      if (zr > any_z) {
        any_z = zr;
        any_cell = row.perturbation + " a=" + fmt(row.a);
      }
    }
    l.require(stated_z > 3.0, "(c) sign_switch best dJ/se=" + fmt(stated_z));
    l.notes.push_back("other directions best dJ/se=" + fmt(any_z) + " (" + any_cell + ")");
    return l;
  });

  criterion(5, "sublinear expectation axioms on 100 random functionals", [] {
    const TimeGrid grid(1.0, kSteps);
    const VolatilityBounds bounds{0.25, 1.0};
    const auto fam = canonical_family(bounds, grid, family::Constants{5}) +
                     canonical_family(bounds, grid, family::BangBangOnSign{0.5});
    // per-member, per-path features of (W, B, <B>)
    constexpr int kFeatures = 6;
    std::vector<std::vector<std::array<double, kFeatures>>> feats;
    for (const auto& m : fam) {
      const auto p = simulate_driver(m, grid, kSeed, n_paths());
      std::vector<std::array<double, kFeatures>> f(p.n_paths);
      for (std::size_t i = 0; i < p.n_paths; ++i) {
        double peak = 0.0;
        for (std::size_t k = 0; k <= kSteps; ++k) peak = std::max(peak, p.b(i, k));
        const double bT = p.b(i, kSteps);
        f[i] = {bT, bT * bT, p.qv(i, kSteps), peak, std::sin(p.w(i, kSteps / 2)), std::abs(p.b(i, kSteps / 3))};
      }
      feats.push_back(std::move(f));
    }
    using Fn = std::function<double(const std::array<double, kFeatures>&)>;
    auto E = [&](const Fn& fn) {
      std::vector<Estimate> members;
      for (const auto& f : feats) {
        std::vector<double> s(f.size());
        for (std::size_t i = 0; i < f.size(); ++i) s[i] = fn(f[i]);
        members.push_back(summarize(s));
      }
      return sup_of(std::move(members)).best.value;
    };
    std::mt19937_64 rng(kSeed);
    std::normal_distribution<double> nd;
    std::uniform_real_distribution<double> ud(0.0, 3.0);
    std::size_t broken[4] = {0, 0, 0, 0};
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::array<double, kFeatures> cx, cy;
      for (auto& v : cx) v = nd(rng);
      for (auto& v : cy) v = nd(rng);
      auto lin = [](const std::array<double, kFeatures>& c) {
        return [c](const std::array<double, kFeatures>& f) {
          double s = 0.0;
          for (int j = 0; j < kFeatures; ++j) s += c[j] * f[j];
          return s;
        };
      };
      const Fn X = lin(cx), Y = lin(cy);
      const double c = ud(rng) - 1.5, lambda = ud(rng);
      const double ex = E(X), ey = E(Y);
      // floating-point rounding of a mean of n terms
      const double tol = 1e-12 * (1.0 + std::abs(ex) + std::abs(ey) + std::abs(c));
      const double mono = ex - E([&](const auto& f) { return std::max(X(f), Y(f)); });
      const double cons = std::abs(E([&](const auto& f) { return X(f) + c; }) - ex - c);
      const double sub = E([&](const auto& f) { return X(f) + Y(f); }) - ex - ey;
      const double hom = std::abs(E([&](const auto& f) { return lambda * X(f); }) - lambda * ex);
      const bool exact2 = E([&](const auto& f) { return 4.0 * X(f); }) == 4.0 * ex;
      broken[0] += mono > tol;
      broken[1] += cons > tol;
      broken[2] += sub > tol;
      broken[3] += hom > tol * (1.0 + lambda) || !exact2;
      worst = std::max({worst, mono, cons, sub, hom});
    }
    Line l;
    const char* names[4] = {"monotonicity", "constants", "sub-additivity", "homogeneity"};
    for (int i = 0; i < 4; ++i) l.require(broken[i] == 0, std::string(names[i]) + " violations=" + std::to_string(broken[i]));
    l.notes.push_back("largest excess=" + fmt(worst));
    return l;
  });

  criterion(6, "Gateaux derivative via Y against finite differences", [] {
    Line l;
    for (auto id : {BuiltinId::example1, BuiltinId::example2, BuiltinId::example3}) {
      const auto& r = run_of(id);
      double worst = 0.0;
      bool ok = true;
      for (const auto& g : r.report.gateaux) {
        worst = std::max(worst, g.gap / g.tolerance);
        ok = ok && g.pass();
      }
      l.require(ok, std::string(to_string(id)) + " gap/tol=" + fmt(worst));
    }
    std::mt19937_64 rng(kSeed);
    const TimeGrid grid(1.0, kSteps);
    const std::size_t np = std::min<std::size_t>(n_paths(), 5000);
    double worst = 0.0;
    std::size_t failed = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto pr = random_problem(rng);
      const auto control = Control::feedback([](double t, double x) { return 0.3 - 0.5 * x + 0.2 * t; });
      const auto fam = canonical_family(pr.bounds, grid, family::Constants{2});
      for (const auto& beta : default_perturbations(grid))
        for (const auto& sc : fam) {
          const auto g = gateaux_check(pr, control, beta, sc, kSeed + trial, np);
          worst = std::max(worst, g.gap / g.tolerance);
          failed += !g.pass();
        }
    }
    l.require(failed == 0, "20 random problems: failed cells=" + std::to_string(failed) + " gap/tol=" + fmt(worst));
    return l;
  });

  criterion(7, "comparison p^G >= p^P on every built-in", [] {
    Line l;
    auto share = [](const AdjointSolution& a) {
      std::size_t nodes = 0, viol = 0;
      for (const auto& r : a.residuals) {
        nodes += r.comparison_nodes;
        viol += r.comparison_violations;
      }
      return nodes ? static_cast<double>(viol) / static_cast<double>(nodes) : 1.0;
    };
    for (auto id : {BuiltinId::example1, BuiltinId::example2, BuiltinId::example3, BuiltinId::counterexample}) {
      const double s = share(run_of(id).report.adjoint);
      l.require(s <= 1e-3, std::string(to_string(id)) + " violating share=" + fmt(s));
    }
    const auto ex = builtin(BuiltinId::example3_general);
    const TimeGrid grid = ex.grid(kSteps);
    const auto fam = canonical_family(ex.problem.bounds, grid, family::Constants{5});
    const auto a = aggregate_gbsde(ex.problem, ex.candidate, fam, kSeed, n_paths(), ex.basis);
    const double s = share(a);
    l.require(s <= 1e-3, "example3_general violating share=" + fmt(s));
    return l;
  });

  criterion(8, "sufficient conditions imply robustness; the counterexample fails both", [] {
    Line l;
    for (auto id : {BuiltinId::example1, BuiltinId::example2, BuiltinId::example3}) {
      const auto& r = run_of(id).report;
      const bool premises = verdict_pass(r, "criticality") && verdict_pass(r, "concavity") && verdict_pass(r, "k_residual");
      const bool robust = r.robustness.strongly_robust_on_family();
      l.require(!premises || robust, std::string(to_string(id)) + " premises=" + (premises ? "1" : "0") +
                                         " robust=" + (robust ? "1" : "0"));
    }
    const auto& c = run_of(BuiltinId::counterexample).report;
    const bool crit = verdict_pass(c, "criticality"), conc = verdict_pass(c, "concavity");
    const bool k = verdict_pass(c, "k_residual"), robust = c.robustness.strongly_robust_on_family();
    l.require(crit && conc && !k && !robust, std::string("counterexample criticality=") + (crit ? "1" : "0") +
                                                 " concavity=" + (conc ? "1" : "0") + " k_residual=" + (k ? "1" : "0") +
                                                 " robust=" + (robust ? "1" : "0") +
                                                 " improving cells=" + std::to_string(c.robustness.counter_rows));
    return l;
  });

  criterion(9, "byte-identical output of every subcommand", [] {
    Line l;
    const auto root = fs::temp_directory_path() / "glab_acceptance_determinism";
    fs::remove_all(root);
    fs::create_directories(root);
    const auto cfg = root / "run.ini";
    CsvTable::write_text(cfg, "[run]\nsteps = 50\npaths = 2000\nseed = 17\n[problem]\nid = example3\n"
                              "[tolerances]\nconcavity_paths = 5\n[output]\nplots = true\n");
    for (const std::string sub : {"simulate", "verify", "sweep", "bsde", "example"}) {
      bool same = true;
      std::size_t files = 0;
      for (int rep = 0; rep < 2; ++rep) {
        cli::Options opt;
        opt.config = cfg.string();
        opt.out = (root / (sub + std::to_string(rep))).string();
        opt.quiet = true;
        opt.example = "example3";
        std::ostringstream out, err;
        if (cli::run(sub, opt, out, err) == cli::kExitError) same = false;
      }
      for (const auto& f : fs::directory_iterator(root / (sub + "0"))) {
        ++files;
        same = same && read(f.path()) == read(root / (sub + "1") / f.path().filename());
      }
      l.require(same && files > 0, sub + " files=" + std::to_string(files));
    }
    return l;
  });

  std::cout << "acceptance: " << (9 - failures) << "/9 criteria pass" << std::endl;
  return failures == 0 ? 0 : 1;
}
