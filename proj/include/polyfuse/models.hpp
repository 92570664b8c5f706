#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "polyfuse/autodiff.hpp"
#include "polyfuse/fusion.hpp"
#include "polyfuse/nn.hpp"

namespace polyfuse {

enum class Modality { Eeg, Oxy, Deoxy };

std::string to_string(Modality m);
Modality parse_modality(const std::string& text);

/// One mini-batch of tri-modal segments: eeg [N, Ce, Le], oxy/deoxy [N, Cn, Ln].
struct Batch {
  Tensor eeg;
  Tensor oxy;
  Tensor deoxy;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  const Tensor& modality(Modality m) const;
};

/// A stack of Conv1d + BatchNorm + ReLU blocks followed by global average pooling.
struct ExtractorSpec {
  std::string name;
  std::size_t input_channels = 0;
  std::vector<nn::Conv1dSpec> layers;

  std::size_t feature_dim() const { return layers.back().out_channels; }
  /// Output time length after each conv; throws nn::GeometryError naming the layer.
  std::vector<std::size_t> time_lengths(std::size_t input_length) const;
};

/// EEG extractor: (9,4,0),(3,1,0)x2,(9,4,0),(3,1,0)x2 with widths 60/120 divided by `width_divisor`.
ExtractorSpec eeg_extractor(std::size_t input_channels = 30, std::size_t width_divisor = 1);
/// NIRS extractor: (5,2,0) then (3,1,0)x5 with widths 72/144 divided by `width_divisor`.
ExtractorSpec nirs_extractor(std::string name, std::size_t input_channels = 36, std::size_t width_divisor = 1);

/// Single-modal classifier when `modality` is set, tri-modal fused classifier otherwise.
struct ModelSpec {
  std::optional<Modality> modality;
  fusion::FusionSpec fusion;  // feature dims are overwritten from the extractors
  std::size_t eeg_channels = 30;
  std::size_t eeg_length = 600;
  std::size_t nirs_channels = 36;
  std::size_t nirs_length = 30;
  std::size_t width_divisor = 1;
  /// Normalize the fused vector for LF too (TF and PF always normalize).
  bool l2_for_linear = false;

  bool fused() const noexcept { return !modality.has_value(); }
  /// Short identifier: "eeg", "oxy", "deoxy", "lf", "tf", "pf".
  std::string name() const;
  /// Checks every extractor geometry and the fusion spec; returns the resolved spec.
  ModelSpec resolved() const;
};

class Model {
 public:
  Model(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }
  ParameterStore& parameters() noexcept { return *store_; }
  const ParameterStore& parameters() const noexcept { return *store_; }
  std::size_t parameter_count() const { return store_->total_entries(); }
  std::map<std::string, nn::BatchNormState>& batch_norm_states() noexcept { return bn_; }
  const std::map<std::string, nn::BatchNormState>& batch_norm_states() const noexcept { return bn_; }

  nn::Mode mode() const noexcept { return mode_; }
  void set_mode(nn::Mode mode) noexcept { mode_ = mode; }

  /// Logits [N, 2] recorded on `tape`. Train mode updates BatchNorm running statistics.
  Var forward(Tape& tape, const Batch& batch);
  /// Eval-mode softmax probabilities [N, 2]; does not change the model.
  Tensor predict_proba(const Batch& batch) const;

  const fusion::FusionLayer* fusion_layer() const noexcept { return fusion_.get(); }
  std::vector<const ExtractorSpec*> extractors() const;

 private:
  Var extract(Tape& tape, const ExtractorSpec& ex, const Tensor& input, nn::Mode mode,
              std::map<std::string, nn::BatchNormState>& bn) const;
  Var head(Tape& tape, const Var& features) const;
  Var forward_impl(Tape& tape, const Batch& batch, nn::Mode mode, std::map<std::string, nn::BatchNormState>& bn) const;

  ModelSpec spec_;
  std::unique_ptr<ParameterStore> store_;
  std::map<std::string, nn::BatchNormState> bn_;
  std::vector<ExtractorSpec> extractors_;
  std::unique_ptr<fusion::FusionLayer> fusion_;
  nn::Mode mode_ = nn::Mode::Train;
};

/// Checkpoint layout: manifest.json plus one tensor file per parameter and BatchNorm buffer.
void save_checkpoint(const Model& model, const std::filesystem::path& dir, std::uint64_t seed);
/// Rebuilds the model from the manifest and loads every tensor; FormatError on mismatch.
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace polyfuse
