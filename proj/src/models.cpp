#include "polyfuse/models.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "polyfuse/config.hpp"
#include "polyfuse/tensor_io.hpp"

namespace polyfuse {

namespace {

using Json = nlohmann::json;

struct Geometry {
  std::size_t filter, stride, padding;
};

ExtractorSpec build_extractor(std::string name, std::size_t input_channels, std::size_t narrow, std::size_t wide,
                              std::span<const Geometry> geometry) {
  if (narrow == 0 || wide == 0) throw std::invalid_argument(name + " extractor: width divisor leaves no channels");
  ExtractorSpec ex;
  ex.name = name;
  ex.input_channels = input_channels;
  std::size_t in = input_channels;
  for (std::size_t i = 0; i < geometry.size(); ++i) {
    const std::size_t out = i < 3 ? narrow : wide;
    ex.layers.push_back({in, out, geometry[i].filter, geometry[i].stride, geometry[i].padding,
                         name + " conv" + std::to_string(i + 1)});
    in = out;
  }
  return ex;
}

std::string block_prefix(const ExtractorSpec& ex, std::size_t i) { return ex.name + ".block" + std::to_string(i); }

}  // namespace

std::string to_string(Modality m) {
  switch (m) {
    case Modality::Eeg: return "eeg";
    case Modality::Oxy: return "oxy";
    case Modality::Deoxy: return "deoxy";
  }
  return "?";
}

Modality parse_modality(const std::string& text) {
  if (text == "eeg") return Modality::Eeg;
  if (text == "oxy") return Modality::Oxy;
  if (text == "deoxy") return Modality::Deoxy;
  throw std::invalid_argument("unknown modality '" + text + "' (expected eeg, oxy or deoxy)");
}

const Tensor& Batch::modality(Modality m) const {
  switch (m) {
    case Modality::Eeg: return eeg;
    case Modality::Oxy: return oxy;
    case Modality::Deoxy: return deoxy;
  }
  return eeg;
}

std::vector<std::size_t> ExtractorSpec::time_lengths(std::size_t input_length) const {
  std::vector<std::size_t> out;
  std::size_t t = input_length;
  for (const auto& layer : layers) {
    t = layer.output_length(t);
    out.push_back(t);
  }
  return out;
}

ExtractorSpec eeg_extractor(std::size_t input_channels, std::size_t width_divisor) {
  static constexpr Geometry kGeometry[] = {{9, 4, 0}, {3, 1, 0}, {3, 1, 0}, {9, 4, 0}, {3, 1, 0}, {3, 1, 0}};
  return build_extractor("eeg", input_channels, 60 / width_divisor, 120 / width_divisor, kGeometry);
}

ExtractorSpec nirs_extractor(std::string name, std::size_t input_channels, std::size_t width_divisor) {
  // The first layer uses (5,2,0) so that 30 samples map to 13, 11, 9, 7, 5, 3.
  static constexpr Geometry kGeometry[] = {{5, 2, 0}, {3, 1, 0}, {3, 1, 0}, {3, 1, 0}, {3, 1, 0}, {3, 1, 0}};
  return build_extractor(std::move(name), input_channels, 72 / width_divisor, 144 / width_divisor, kGeometry);
}

std::string ModelSpec::name() const { return modality ? to_string(*modality) : fusion::to_string(fusion.kind); }

ModelSpec ModelSpec::resolved() const {
  if (width_divisor == 0) throw std::invalid_argument("width_divisor must be positive");
  ModelSpec out = *this;
  const ExtractorSpec eeg = eeg_extractor(eeg_channels, width_divisor);
  const ExtractorSpec nirs = nirs_extractor("oxy", nirs_channels, width_divisor);
  if (!modality || modality == Modality::Eeg) eeg.time_lengths(eeg_length);
  if (!modality || modality != Modality::Eeg) nirs.time_lengths(nirs_length);
  out.fusion.dim_a = eeg.feature_dim();
  out.fusion.dim_b = nirs.feature_dim();
  out.fusion.dim_c = nirs.feature_dim();
  if (!modality) out.fusion.validate();
  return out;
}

Model::Model(const ModelSpec& spec, std::uint64_t seed)
    : spec_(spec.resolved()), store_(std::make_unique<ParameterStore>()) {
  std::mt19937_64 rng(seed);
  if (!spec_.modality || spec_.modality == Modality::Eeg)
    extractors_.push_back(eeg_extractor(spec_.eeg_channels, spec_.width_divisor));
  if (!spec_.modality || spec_.modality == Modality::Oxy)
    extractors_.push_back(nirs_extractor("oxy", spec_.nirs_channels, spec_.width_divisor));
  if (!spec_.modality || spec_.modality == Modality::Deoxy)
    extractors_.push_back(nirs_extractor("deoxy", spec_.nirs_channels, spec_.width_divisor));

  for (const auto& ex : extractors_) {
    for (std::size_t i = 0; i < ex.layers.size(); ++i) {
      const auto& layer = ex.layers[i];
      const std::string p = block_prefix(ex, i);
      const double bound = 1.0 / std::sqrt(static_cast<double>(layer.in_channels * layer.filter));
      store_->add(p + ".conv.weight",
                  nn::uniform_tensor(Shape{layer.out_channels, layer.in_channels, layer.filter}, bound, rng));
      store_->add(p + ".conv.bias", nn::uniform_tensor(Shape{layer.out_channels}, bound, rng));
      store_->add(p + ".bn.gamma", Tensor(Shape{layer.out_channels}, 1.0));
      store_->add(p + ".bn.beta", Tensor(Shape{layer.out_channels}, 0.0));
      bn_.emplace(p + ".bn", nn::BatchNormState(layer.out_channels));
    }
  }

  auto add_linear = [&](const std::string& p, std::size_t in, std::size_t out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    store_->add(p + ".weight", nn::uniform_tensor(Shape{in, out}, bound, rng));
    store_->add(p + ".bias", nn::uniform_tensor(Shape{out}, bound, rng));
  };
  if (spec_.fused()) {
    fusion_ = std::make_unique<fusion::FusionLayer>(spec_.fusion, *store_, "fusion.", rng);
    add_linear("head", spec_.fusion.output_dim, 2);
  } else {
    const std::size_t feat = extractors_.front().feature_dim();
    add_linear("head.hidden", feat, std::max<std::size_t>(feat / 2, 1));
    add_linear("head.out", std::max<std::size_t>(feat / 2, 1), 2);
  }
}

std::vector<const ExtractorSpec*> Model::extractors() const {
  std::vector<const ExtractorSpec*> out;
  for (const auto& ex : extractors_) out.push_back(&ex);
  return out;
}

Var Model::extract(Tape& tape, const ExtractorSpec& ex, const Tensor& input, nn::Mode mode,
                   std::map<std::string, nn::BatchNormState>& bn) const {
  if (input.order() != 3 || input.dim(1) != ex.input_channels) {
    throw ShapeError(ex.name + " extractor expects [N, " + std::to_string(ex.input_channels) + ", T], got " +
                     shape_string(input.shape()));
  }
  Var h = tape.constant(input);
  for (std::size_t i = 0; i < ex.layers.size(); ++i) {
    const std::string p = block_prefix(ex, i);
    h = nn::conv1d(h, tape.parameter(store_->at(p + ".conv.weight")), tape.parameter(store_->at(p + ".conv.bias")),
                   ex.layers[i]);
    h = nn::batch_norm(h, tape.parameter(store_->at(p + ".bn.gamma")), tape.parameter(store_->at(p + ".bn.beta")),
                       bn.at(p + ".bn"), mode);
    h = nn::relu(h);
  }
  return nn::global_avgpool(h);
}

Var Model::head(Tape& tape, const Var& features) const {
  if (spec_.fused()) {
    return nn::linear(features, tape.parameter(store_->at("head.weight")), tape.parameter(store_->at("head.bias")));
  }
  Var h = nn::relu(nn::linear(features, tape.parameter(store_->at("head.hidden.weight")),
                              tape.parameter(store_->at("head.hidden.bias"))));
  return nn::linear(h, tape.parameter(store_->at("head.out.weight")), tape.parameter(store_->at("head.out.bias")));
}

Var Model::forward_impl(Tape& tape, const Batch& batch, nn::Mode mode,
                        std::map<std::string, nn::BatchNormState>& bn) const {
  if (spec_.modality) {
    return head(tape, extract(tape, extractors_.front(), batch.modality(*spec_.modality), mode, bn));
  }
  Var z1 = extract(tape, extractors_[0], batch.eeg, mode, bn);
  Var z2 = extract(tape, extractors_[1], batch.oxy, mode, bn);
  Var z3 = extract(tape, extractors_[2], batch.deoxy, mode, bn);
  Var fused = fusion_->forward(tape, z1, z2, z3);
  if (spec_.fusion.kind != fusion::Kind::Linear || spec_.l2_for_linear) fused = nn::l2_normalize(fused);
  return head(tape, fused);
}

Var Model::forward(Tape& tape, const Batch& batch) { return forward_impl(tape, batch, mode_, bn_); }

Tensor Model::predict_proba(const Batch& batch) const {
  Tape tape;
  auto bn = bn_;
  return nn::softmax(forward_impl(tape, batch, nn::Mode::Eval, bn).value());
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  Json manifest;
  manifest["format"] = "polyfuse-checkpoint";
  manifest["version"] = POLYFUSE_VERSION;
  manifest["seed"] = seed;
  manifest["model"] = model_spec_to_json(model.spec());
  Json params = Json::array();
  const auto& store = model.parameters();
  for (const auto& name : store.names()) {
    const std::string file = name + ".bin";
    std::ostringstream bytes;
    write_tensor(bytes, store.at(name).value);
    write_file_atomic(dir / file, bytes.str());
    params.push_back({{"name", name}, {"file", file}, {"shape", store.at(name).value.shape()}});
  }
  manifest["parameters"] = params;
  Json buffers = Json::array();
  for (const auto& [name, state] : model.batch_norm_states()) {
    for (const auto& [suffix, t] : {std::pair{"running_mean", &state.running_mean}, {"running_var", &state.running_var}}) {
      const std::string file = name + "." + suffix + ".bin";
      std::ostringstream bytes;
      write_tensor(bytes, *t);
      write_file_atomic(dir / file, bytes.str());
      buffers.push_back({{"name", name + "." + suffix}, {"file", file}});
    }
  }
  manifest["buffers"] = buffers;

  // Reference entries of the dense fusion weight, for integrity checks on reload.
  if (const auto* layer = model.fusion_layer()) {
    const auto factors = layer->position_factors();
    Json probes = Json::array();
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    const bool factorized = layer->spec().path == fusion::Path::Factorized && layer->spec().kind != fusion::Kind::Linear;
    for (int k = 0; k < 8 && factorized; ++k) {
      std::vector<std::size_t> index;
      for (const auto& f : factors) index.push_back(std::uniform_int_distribution<std::size_t>(0, f.dim(0) - 1)(rng));
      const std::size_t o = std::uniform_int_distribution<std::size_t>(0, layer->spec().output_dim - 1)(rng);
      probes.push_back({{"index", index}, {"output", o},
                        {"value", fusion::reconstruct_entry(factors, layer->rank_weights(), index, o)}});
    }
    manifest["fusion_probes"] = probes;

    // Response to one fixed input; depends on every fusion weight.
    const fusion::FusionSpec& fs = layer->spec();
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Json inputs = Json::array();
    std::vector<Tensor> z;
    for (std::size_t n : {fs.dim_a, fs.dim_b, fs.dim_c}) {
      Tensor t(Shape{n});
      for (double& v : t.data()) v = u(rng);
      inputs.push_back(t.data());
      z.push_back(std::move(t));
    }
    manifest["fusion_response"] = {{"inputs", inputs}, {"output", layer->apply(z[0], z[1], z[2]).data()}};
  }
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw FormatError("checkpoint: cannot open " + (dir / "manifest.json").string());
  Json manifest;
  try {
    in >> manifest;
  } catch (const Json::exception& e) {
    throw FormatError("checkpoint: malformed manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "polyfuse-checkpoint") throw FormatError("checkpoint: not a polyfuse checkpoint");
  Model model(model_spec_from_json(manifest.at("model")), manifest.value("seed", std::uint64_t{0}));
  auto& store = model.parameters();
  std::size_t seen = 0;
  for (const auto& entry : manifest.at("parameters")) {
    const std::string name = entry.at("name");
    if (!store.contains(name)) throw FormatError("checkpoint: unexpected parameter " + name);
    Tensor t = load_tensor(dir / entry.at("file").get<std::string>());
    if (t.shape() != store.at(name).value.shape()) {
      throw FormatError("checkpoint: parameter " + name + " has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(store.at(name).value.shape()));
    }
    store.at(name).value = std::move(t);
    ++seen;
  }
  if (seen != store.size()) throw FormatError("checkpoint: manifest lists " + std::to_string(seen) + " of " +
                                              std::to_string(store.size()) + " parameters");
  auto& bn = model.batch_norm_states();
  for (const auto& entry : manifest.at("buffers")) {
    const std::string name = entry.at("name");
    const auto dot = name.rfind('.');
    auto it = bn.find(name.substr(0, dot));
    if (it == bn.end()) throw FormatError("checkpoint: unexpected buffer " + name);
    Tensor t = load_tensor(dir / entry.at("file").get<std::string>());
    Tensor& target = name.substr(dot + 1) == "running_mean" ? it->second.running_mean : it->second.running_var;
    if (t.shape() != target.shape()) throw FormatError("checkpoint: buffer " + name + " has the wrong shape");
    target = std::move(t);
  }
  model.set_mode(nn::Mode::Eval);
  return model;
}

}  // namespace polyfuse
