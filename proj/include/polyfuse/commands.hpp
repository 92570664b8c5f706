#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <ostream>

#include "polyfuse/config.hpp"
#include "polyfuse/verify.hpp"

namespace polyfuse::cli {

enum ExitCode : int { kOk = 0, kFailed = 1, kUsage = 2, kRuntime = 3 };

/// Runs `body` and maps escaped exceptions to exit codes, printing the message to `err`.
/// ConfigError and other invalid_argument: 2. FormatError (corrupt artifact): 1.
/// DataError, divergence and I/O failures: 3.
int guarded(const std::function<int()>& body, std::ostream& err);

/// Loads a manifest or generates the synthetic set, then applies label shuffling.
SegmentDataset load_data(const RunConfig& config);
/// The configured model with input sizes taken from the data.
ModelSpec model_for(const RunConfig& config, const SegmentShape& shape);

// Each command writes its artifacts under `out` (created if needed) and logs to `log`.

/// checkpoint/ and train_report.json; trains on every segment.
int cmd_train(const RunConfig& config, const std::filesystem::path& out, std::ostream& log);
/// cv_report.json and cv_offsets.csv.
int cmd_cv(const RunConfig& config, const std::filesystem::path& out, std::ostream& log);
/// Segment manifest plus synthetic.json describing the generator.
int cmd_synth(const SyntheticSpec& spec, std::uint64_t seed, const std::filesystem::path& out, std::ostream& log);
/// One row per check; 1 when any check fails.
int cmd_verify(const VerifyOptions& options, std::ostream& log);
/// Parameter counts of every fusion variant at the model's dimensions.
int cmd_params(const ModelSpec& spec, std::ostream& log);
/// Cuts a raw-trial manifest into a segment manifest.
int cmd_segment(const std::filesystem::path& trial_manifest, const std::filesystem::path& out, std::ostream& log);

}  // namespace polyfuse::cli
