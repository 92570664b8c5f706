#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace polyfuse {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  /// Comma-separated check names; empty runs every check.
  std::string filter;
  /// When set, also validates this checkpoint directory.
  std::filesystem::path checkpoint;
  std::uint64_t seed = 1;
};

/// Names accepted by the filter, in run order:
/// linear-blocks, second-order-blocks, cp-equivalence, gradients, param-counts,
/// extractor-shapes, checkpoint.
const std::vector<std::string>& verify_check_names();

/// std::invalid_argument for unknown filter names.
std::vector<CheckResult> run_verify(const VerifyOptions& options);

}  // namespace polyfuse
