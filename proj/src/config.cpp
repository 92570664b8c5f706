#include "polyfuse/config.hpp"

#include <fstream>
#include <set>

namespace polyfuse {

using Json = nlohmann::json;

namespace {

// Reads typed fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong type (" + j_.at(key).dump() + ")");
    }
  }

  template <typename T, typename Parse>
  void read_enum(const char* key, T& out, Parse parse) {
    std::string text;
    read(key, text);
    if (!j_.contains(key)) return;
    try {
      out = parse(text);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where_ + "." + key + ": " + e.what());
    }
  }

  const Json* child(const char* key) {
    known_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    std::string unknown;
    for (const auto& [key, value] : j_.items())
      if (!known_.count(key)) unknown += (unknown.empty() ? "" : ", ") + key;
    if (!unknown.empty()) throw ConfigError(where_ + ": unknown key(s) " + unknown);
  }

 private:
  const Json& j_;
  std::string where_;
  std::set<std::string> known_;
};

}  // namespace

Json fusion_spec_to_json(const fusion::FusionSpec& s) {
  return {{"kind", fusion::to_string(s.kind)}, {"dim_a", s.dim_a},   {"dim_b", s.dim_b},
          {"dim_c", s.dim_c},                  {"output_dim", s.output_dim}, {"rank", s.rank},
          {"order", s.order},                  {"symmetric", s.symmetric},   {"path", fusion::to_string(s.path)},
          {"augment_one", s.augment_one}};
}

fusion::FusionSpec fusion_spec_from_json(const Json& j, fusion::FusionSpec s) {
  ObjectReader r(j, "fusion");
  r.read_enum("kind", s.kind, fusion::parse_kind);
  r.read("dim_a", s.dim_a);
  r.read("dim_b", s.dim_b);
  r.read("dim_c", s.dim_c);
  r.read("output_dim", s.output_dim);
  r.read("rank", s.rank);
  r.read("order", s.order);
  r.read("symmetric", s.symmetric);
  r.read_enum("path", s.path, fusion::parse_path);
  r.read("augment_one", s.augment_one);
  r.finish();
  return s;
}

Json model_spec_to_json(const ModelSpec& s) {
  Json j{{"modality", s.modality ? to_string(*s.modality) : "fused"},
         {"fusion", fusion_spec_to_json(s.fusion)},
         {"eeg_channels", s.eeg_channels},
         {"eeg_length", s.eeg_length},
         {"nirs_channels", s.nirs_channels},
         {"nirs_length", s.nirs_length},
         {"width_divisor", s.width_divisor},
         {"l2_for_linear", s.l2_for_linear}};
  return j;
}

ModelSpec model_spec_from_json(const Json& j, ModelSpec s) {
  ObjectReader r(j, "model");
  std::string modality;
  r.read("modality", modality);
  if (j.contains("modality")) {
    if (modality == "fused") {
      s.modality.reset();
    } else {
      try {
        s.modality = parse_modality(modality);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("model.modality: ") + e.what() + " or fused");
      }
    }
  }
  if (const Json* f = r.child("fusion")) s.fusion = fusion_spec_from_json(*f, s.fusion);
  r.read("eeg_channels", s.eeg_channels);
  r.read("eeg_length", s.eeg_length);
  r.read("nirs_channels", s.nirs_channels);
  r.read("nirs_length", s.nirs_length);
  r.read("width_divisor", s.width_divisor);
  r.read("l2_for_linear", s.l2_for_linear);
  r.finish();
  return s;
}

Json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"eval_batch", c.eval_batch},
          {"adam", {{"lr", c.adam.lr}, {"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}}}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig c) {
  ObjectReader r(j, "trainer");
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("eval_batch", c.eval_batch);
  if (const Json* a = r.child("adam")) {
    ObjectReader ar(*a, "trainer.adam");
    ar.read("lr", c.adam.lr);
    ar.read("beta1", c.adam.beta1);
    ar.read("beta2", c.adam.beta2);
    ar.read("eps", c.adam.eps);
    ar.finish();
  }
  r.finish();
  if (c.batch_size < 2) throw ConfigError("trainer.batch_size must be >= 2");
  if (c.eval_batch == 0) throw ConfigError("trainer.eval_batch must be >= 1");
  if (!(c.adam.lr >= 0.0)) throw ConfigError("trainer.adam.lr must be >= 0");
  return c;
}

Json synthetic_spec_to_json(const SyntheticSpec& s) {
  return {{"generator", to_string(s.generator)},
          {"noise", s.noise},
          {"trials", s.trials},
          {"subjects", s.subjects},
          {"task", to_string(s.task)},
          {"amplitude_min", s.amplitude_min},
          {"amplitude_max", s.amplitude_max},
          {"segment_shape",
           {{"eeg", {s.shape.eeg_channels, s.shape.eeg_length}}, {"nirs", {s.shape.nirs_channels, s.shape.nirs_length}}}}};
}

SyntheticSpec synthetic_spec_from_json(const Json& j, SyntheticSpec s) {
  ObjectReader r(j, "synthetic");
  r.read_enum("generator", s.generator, parse_generator);
  r.read("noise", s.noise);
  r.read("trials", s.trials);
  r.read("subjects", s.subjects);
  r.read_enum("task", s.task, parse_task);
  r.read("amplitude_min", s.amplitude_min);
  r.read("amplitude_max", s.amplitude_max);
  if (const Json* sh = r.child("segment_shape")) {
    ObjectReader sr(*sh, "synthetic.segment_shape");
    std::vector<std::size_t> eeg{s.shape.eeg_channels, s.shape.eeg_length};
    std::vector<std::size_t> nirs{s.shape.nirs_channels, s.shape.nirs_length};
    sr.read("eeg", eeg);
    sr.read("nirs", nirs);
    sr.finish();
    if (eeg.size() != 2 || nirs.size() != 2) throw ConfigError("synthetic.segment_shape entries must be [C, T]");
    s.shape = {eeg[0], eeg[1], nirs[0], nirs[1]};
  }
  r.finish();
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

std::string to_string(Profile p) { return p == Profile::Desk ? "desk" : "full"; }

Profile parse_profile(const std::string& text) {
  if (text == "desk") return Profile::Desk;
  if (text == "full") return Profile::Full;
  throw std::invalid_argument("unknown profile '" + text + "' (expected desk or full)");
}

RunConfig profile_defaults(Profile profile) {
  RunConfig c;
  c.profile = profile;
  c.model.fusion.order = 3;
  c.model.fusion.symmetric = true;
  if (profile == Profile::Desk) {
    c.model.width_divisor = 6;
    c.model.fusion.output_dim = 32;
    c.trainer.epochs = 30;
  } else {
    c.model.width_divisor = 1;
    c.model.fusion.output_dim = 128;
    c.trainer.epochs = 300;
  }
  return c;
}

Json run_config_to_json(const RunConfig& c) {
  Json data{{"manifest", c.data.manifest}, {"shuffle_labels", c.data.shuffle_labels}};
  if (c.data.synthetic) data["synthetic"] = synthetic_spec_to_json(*c.data.synthetic);
  return {{"task", c.task},
          {"profile", to_string(c.profile)},
          {"data", data},
          {"model", model_spec_to_json(c.model)},
          {"trainer", train_config_to_json(c.trainer)},
          {"folds", c.folds},
          {"run_folds", c.run_folds},
          {"seed", c.seed},
          {"jobs", c.jobs},
          {"out", c.out}};
}

RunConfig run_config_from_json(const Json& j, std::optional<Profile> profile_override) {
  ObjectReader r(j, "config");
  Profile profile = Profile::Desk;
  r.read_enum("profile", profile, parse_profile);
  if (profile_override) profile = *profile_override;
  RunConfig c = profile_defaults(profile);
  r.read("task", c.task);
  if (const Json* d = r.child("data")) {
    ObjectReader dr(*d, "data");
    dr.read("manifest", c.data.manifest);
    dr.read("shuffle_labels", c.data.shuffle_labels);
    if (const Json* s = dr.child("synthetic")) c.data.synthetic = synthetic_spec_from_json(*s);
    dr.finish();
  }
  if (const Json* m = r.child("model")) c.model = model_spec_from_json(*m, c.model);
  if (const Json* t = r.child("trainer")) c.trainer = train_config_from_json(*t, c.trainer);
  r.read("folds", c.folds);
  r.read("run_folds", c.run_folds);
  r.read("seed", c.seed);
  r.read("jobs", c.jobs);
  r.read("out", c.out);
  r.finish();
  if (c.folds < 2) throw ConfigError("config.folds must be >= 2");
  for (std::size_t f : c.run_folds)
    if (f >= c.folds) throw ConfigError("config.run_folds entry " + std::to_string(f) + " is >= folds");
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<Profile> profile_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, profile_override);
}

}  // namespace polyfuse
