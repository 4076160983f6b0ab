// dpl: verify | train | params | diagnose

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dpl/cli/commands.hpp"

namespace {

using namespace dpl::cli;

void add_common(CLI::App* cmd, CommonOptions& o, bool with_mode) {
  cmd->add_option("--config", o.config, "Experiment config (JSON)");
  cmd->add_option("--seed", o.seed, "Override the config seed");
  cmd->add_option("--out", o.out, "Output directory");
  if (with_mode) cmd->add_option("--mode", o.mode, "Attention mode override");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decoupled prompt learning toolkit"};
  app.require_subcommand(0, 1);
  bool print_defaults = false;
  app.add_flag("--print-defaults", print_defaults, "Print the default config and exit");

  VerifyOptions verify;
  std::optional<std::filesystem::path> verify_out;
  auto* v = app.add_subcommand("verify", "Run the invariant and gradient checks");
  v->add_option("--seed", verify.seed, "Seed for random configurations and the audit models")->capture_default_str();
  v->add_option("--out", verify_out, "Write verify.json here");
  v->add_option("--configurations", verify.configurations, "Random attention configurations")->capture_default_str();
  v->add_option("--inject-fault", verify.inject_fault, "Perturb a mixing coefficient (sigma|beta)");
  v->add_flag("--all-weights", verify.all_projection_weights, "Gradient-check every attention projection");

  CommonOptions train, params, diagnose;
  std::optional<std::filesystem::path> banks_dir;
  auto* t = app.add_subcommand("train", "Train prompts or run an ablation grid");
  add_common(t, train, true);
  auto* p = app.add_subcommand("params", "Count prompt parameters");
  add_common(p, params, false);
  auto* d = app.add_subcommand("diagnose", "hf ratios, attention-map distances and a 1-shot trace");
  add_common(d, diagnose, true);
  d->add_option("--banks", banks_dir, "Directory with visual.bin and textual.bin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (print_defaults) {
    std::cout << to_json(default_config()).dump(2) << '\n';
    return kExitOk;
  }
  if (v->parsed()) return run_guarded([&] { return cmd_verify(verify, verify_out, std::cout); }, std::cerr);
  if (t->parsed()) return run_guarded([&] { return cmd_train(train, std::cout); }, std::cerr);
  if (p->parsed()) return run_guarded([&] { return cmd_params(params, std::cout); }, std::cerr);
  if (d->parsed()) return run_guarded([&] { return cmd_diagnose(diagnose, banks_dir, std::cout); }, std::cerr);
  std::cout << app.help();
  return kExitConfig;
}
