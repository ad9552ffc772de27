#include <iostream>

#include <CLI11.hpp>

#include "avgsim/cli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"avgsim: averaging-principle experiments for slow-fast SPDE systems"};
  app.set_version_flag("--version", avgsim::cli::tool_version());
  app.require_subcommand(1);

  std::string config;
  std::uint64_t seed = 0;
  std::size_t threads = 0;
  std::string out;
  bool verify = false;
  app.add_option("--config", config, "experiment config (TOML subset)")->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "override seed_base");
  auto* threads_opt = app.add_option("--threads", threads, "worker cap")->check(CLI::PositiveNumber);
  auto* out_opt = app.add_option("--out", out, "output directory");
  app.add_flag("--verify", verify, "re-check manifest hashes after the run");

  const char* help[][2] = {
      {"simulate", "coupled slow-fast path"},
      {"frozen", "frozen fast equation path"},
      {"measure", "pullback ensemble for mu_t^x"},
      {"average", "limit coefficients of the averaged equation"},
      {"converge", "strong-error study over the eps ladder"},
      {"khasminskii", "Khasminskii delta study"},
      {"apcheck", "almost-periodicity diagnostics"},
      {"conditions", "structural condition checkers"},
  };
  for (const auto& h : help) {
    auto* sub = app.add_subcommand(h[0], h[1]);
    sub->fallthrough();
  }

  CLI11_PARSE(app, argc, argv);

  avgsim::cli::Flags flags;
  flags.command = app.get_subcommands().front()->get_name();
  if (!config.empty()) flags.config_path = config;
  if (*seed_opt) flags.seed = seed;
  if (*threads_opt) flags.threads = threads;
  if (*out_opt) flags.out = out;
  flags.verify = verify;
  return avgsim::cli::run(flags, std::cout, std::cerr);
}
