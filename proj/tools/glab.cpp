// glab: simulate, verify, example <id>, sweep, bsde.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

#include "glab/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"G-Brownian-motion lab: maximum-principle verification of robust controls"};
  app.require_subcommand(1);

  glab::cli::Options opt;
  std::uint64_t seed = 0;
  std::size_t paths = 0;
  std::string out;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "Random seed");
    sub->add_option("--paths", paths, "Monte Carlo paths per scenario")->check(CLI::PositiveNumber);
    sub->add_option("--out", out, "Output directory");
    sub->add_flag("--quiet", opt.quiet, "Suppress progress and summary output");
  };
  common(app.add_subcommand("simulate", "Paths and J estimates per scenario"));
  common(app.add_subcommand("verify", "Full verification battery for the configured control"));
  auto* example = app.add_subcommand("example", "Canned reproduction of a built-in problem");
  example->add_option("id", opt.example, "example1 | example2 | example3 | example3_general | counterexample")
      ->required();
  common(example);
  common(app.add_subcommand("sweep", "Robustness sweep over scenarios, perturbations and step sizes"));
  common(app.add_subcommand("bsde", "Adjoint diagnostics and the K residual"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : glab::cli::kExitError;
  }
  CLI::App* sub = app.get_subcommands().front();
  if (sub->count("--seed")) opt.seed = seed;
  if (sub->count("--paths")) opt.paths = paths;
  if (sub->count("--out")) opt.out = out;
  return glab::cli::run(sub->get_name(), opt, std::cout, std::cerr);
}
