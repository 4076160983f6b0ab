#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "dpl/cli/config.hpp"
#include "dpl/cli/verify.hpp"

namespace dpl::cli {

enum ExitCode : int { kExitOk = 0, kExitInvariant = 1, kExitConfig = 2 };

struct CommonOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> mode;
};

// Loads the config file (or the defaults) and applies flag overrides.
ExperimentConfig resolve_config(const CommonOptions& options);

// Each command writes human-readable lines to `log` and report files under
// the output directory, and returns an exit code. Errors propagate as
// dpl::Error; run_guarded maps them to exit codes.
int cmd_verify(const VerifyOptions& options, const std::optional<std::filesystem::path>& out, std::ostream& log);
int cmd_train(const CommonOptions& options, std::ostream& log);
int cmd_params(const CommonOptions& options, std::ostream& log);
// banks_dir holds visual.bin and textual.bin; fresh banks when absent.
int cmd_diagnose(const CommonOptions& options, const std::optional<std::filesystem::path>& banks_dir,
                 std::ostream& log);

// Configuration, Template, NotFound and Format errors exit with 2, every
// other error with 1.
int run_guarded(const std::function<int()>& command, std::ostream& err);

}  // namespace dpl::cli
