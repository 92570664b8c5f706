#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "polyfuse/data.hpp"
#include "polyfuse/fusion.hpp"
#include "polyfuse/models.hpp"
#include "polyfuse/trainer.hpp"

namespace polyfuse {

/// Invalid configuration: unknown keys, wrong types or out-of-range values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// JSON codecs. The *_from_json overlays only the keys present onto `base`,
// and reject unknown keys.
nlohmann::json fusion_spec_to_json(const fusion::FusionSpec& spec);
fusion::FusionSpec fusion_spec_from_json(const nlohmann::json& j, fusion::FusionSpec base = {});
nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j, ModelSpec base = {});
nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j, SyntheticSpec base = {});

enum class Profile { Desk, Full };

std::string to_string(Profile p);
Profile parse_profile(const std::string& text);

struct DataSource {
  std::string manifest;                  // path to a manifest, or empty
  std::optional<SyntheticSpec> synthetic;  // used when no manifest is given
  bool shuffle_labels = false;           // chance-level control
};

/// Everything a run needs; serialized verbatim into every report.
struct RunConfig {
  std::string task = "experiment";
  Profile profile = Profile::Desk;
  DataSource data;
  ModelSpec model;
  TrainConfig trainer;
  std::size_t folds = 5;
  std::vector<std::size_t> run_folds;  // empty: all folds
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
  std::string out;
};

/// Defaults for a profile. Both use third-order symmetric polynomial fusion at R = 16.
/// Desk: widths / 6, fused output 32, 30 epochs. Full: the original sizes,
/// fused output 128, 300 epochs.
RunConfig profile_defaults(Profile profile);

nlohmann::json run_config_to_json(const RunConfig& config);
/// The "profile" key (or `profile_override`) selects the starting defaults; the
/// remaining keys overlay them.
RunConfig run_config_from_json(const nlohmann::json& j, std::optional<Profile> profile_override = {});
RunConfig load_run_config(const std::filesystem::path& path, std::optional<Profile> profile_override = {});

}  // namespace polyfuse
