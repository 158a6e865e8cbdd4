// SPDX-License-Identifier: Apache-2.0
//
// alflb: run one balancing experiment from a JSON config and write CSV
// traces plus summary.json. Exit status: 0 when every enabled checker
// passed, 1 when a checker failed, 2 on configuration or I/O errors.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "alflb/alflb.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::size_t parallel = 1;
  bool strict = false;
};

int run(alflb::ExperimentKind kind, const Flags& flags) {
  alflb::Json doc = alflb::Json::object();
  if (!flags.config.empty()) {
    std::ifstream in(flags.config, std::ios::binary);
    if (!in) throw alflb::Error(alflb::ErrorCode::IoError, "cannot open config '" + flags.config + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    doc = alflb::parse_config_text(ss.str());
    if (!doc.is_object()) throw alflb::Error(alflb::ErrorCode::ParseError, "config must be a JSON object");
  }
  // command-line overrides go through the same validation as the file
  if (flags.seed) doc["seed"] = *flags.seed;
  if (flags.out) doc["output"]["dir"] = *flags.out;
  const auto cfg = alflb::parse_config(doc, kind);

  alflb::RunOptions ro;
  ro.threads = flags.parallel;
  ro.strict = flags.strict;
  const auto res = alflb::run_experiment(cfg, ro);
  alflb::write_artifacts(res, cfg.out_dir);

  for (const auto& w : res.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& [name, v] : res.verdicts) std::cout << name << ": " << (v.pass ? "pass" : "fail") << '\n';
  const bool ok = res.all_pass(ro.strict);
  std::cout << "config_hash " << res.summary["config_hash"].get<std::string>() << '\n'
            << "artifacts in " << cfg.out_dir << '\n';
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ALF-LB primal-dual load balancing experiments"};
  app.require_subcommand(1);
  Flags flags;
  std::uint64_t seed = 0;
  std::string out;

  const char* kinds[] = {"deterministic_run", "balance_check", "moment_check",
                         "hessian_check",     "regret_sweep",  "schedule_compare"};
  for (const char* name : kinds) {
    auto* sub = app.add_subcommand(name, std::string("run the ") + name + " experiment");
    sub->add_option("--config", flags.config, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--out", out, "output directory");
    sub->add_option("--parallel", flags.parallel, "worker threads")->check(CLI::Range(1, 1024));
    sub->add_flag("--strict", flags.strict, "treat warnings as failures");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto* sub : app.get_subcommands()) {
      if (sub->count("--seed")) flags.seed = seed;
      if (sub->count("--out")) flags.out = out;
      return run(*alflb::experiment_kind_from_string(sub->get_name()), flags);
    }
  } catch (const alflb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
