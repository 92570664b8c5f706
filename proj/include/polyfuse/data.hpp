#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "polyfuse/models.hpp"
#include "polyfuse/tensor.hpp"

namespace polyfuse {

enum class Task { MI, MA };

std::string to_string(Task t);
Task parse_task(const std::string& text);

// Recording and windowing conventions. Offsets are whole seconds relative to task onset.
inline constexpr std::size_t kEegRate = 200;
inline constexpr std::size_t kNirsRate = 10;
inline constexpr int kWindowSeconds = 3;
inline constexpr int kFirstOffset = -10;
inline constexpr int kLastOffset = 22;
inline constexpr std::size_t kSegmentsPerTrial = kLastOffset - kFirstOffset + 1;

/// One converted trial. `onset` is the EEG sample index of task onset; the NIRS
/// onset is onset * kNirsRate / kEegRate.
struct TrialRecording {
  std::string id;
  std::string subject;
  Task task = Task::MI;
  int label = 0;
  Tensor eeg;    // [channels, samples] at kEegRate
  Tensor oxy;    // [channels, samples] at kNirsRate
  Tensor deoxy;  // [channels, samples] at kNirsRate
  std::size_t onset = 0;
};

struct ModalSegment {
  Tensor eeg;    // [channels, 3 s of EEG]
  Tensor oxy;    // [channels, 3 s of NIRS]
  Tensor deoxy;
  int label = 0;
  int offset = 0;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 33 windows of 3 s at 1 s steps starting 10 s before onset. DataError names the missing span.
std::vector<ModalSegment> segment_trial(const TrialRecording& rec);

struct TrialInfo {
  std::string id;
  std::string subject;
  Task task = Task::MI;
  int label = 0;
};

/// Shapes of one segment's modalities.
struct SegmentShape {
  std::size_t eeg_channels = 30;
  std::size_t eeg_length = 600;
  std::size_t nirs_channels = 36;
  std::size_t nirs_length = 30;

  bool operator==(const SegmentShape&) const = default;
};

/// Segments stored contiguously per modality, grouped by trial.
class SegmentDataset {
 public:
  explicit SegmentDataset(SegmentShape shape = {});

  const SegmentShape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return trial_of_.size(); }
  const std::vector<TrialInfo>& trials() const noexcept { return trials_; }

  std::size_t add_trial(TrialInfo info);
  /// Appends a segment of trial `trial`; its label must equal the trial's.
  void add_segment(std::size_t trial, const ModalSegment& seg);
  void reserve(std::size_t segments);

  std::size_t trial_of(std::size_t segment) const { return trial_of_.at(segment); }
  int offset(std::size_t segment) const { return offsets_.at(segment); }
  int label(std::size_t segment) const { return trials_[trial_of_.at(segment)].label; }
  /// Segment indices of each trial, in insertion order.
  std::vector<std::vector<std::size_t>> segments_by_trial() const;

  Batch batch(std::span<const std::size_t> segments) const;
  ModalSegment segment(std::size_t index) const;

  /// Copy whose trial labels are permuted (trial-level, so balance is preserved).
  SegmentDataset with_shuffled_labels(std::uint64_t seed) const;

 private:
  SegmentShape shape_;
  std::vector<TrialInfo> trials_;
  std::vector<std::size_t> trial_of_;
  std::vector<int> offsets_;
  std::vector<double> eeg_, oxy_, deoxy_;
};

enum class Generator { Additive, Interaction };

/// Planted tri-modal datasets. Each modality carries a per-channel offset pattern
/// scaled by a latent amplitude a_k, plus Gaussian noise. `additive`: every a_k
/// has the label's sign. `interaction`: the label is sign(a_1 a_2 a_3) and each
/// single amplitude sign is independent of the label.
struct SyntheticSpec {
  Generator generator = Generator::Interaction;
  double noise = 0.1;
  std::size_t trials = 122;
  std::size_t subjects = 1;
  Task task = Task::MI;
  double amplitude_min = 0.5;
  double amplitude_max = 1.5;
  SegmentShape shape{};

  void validate() const;
};

std::string to_string(Generator g);
Generator parse_generator(const std::string& text);

/// Deterministic in (spec, seed). Labels alternate within each subject, so classes are balanced.
SegmentDataset synth_dataset(const SyntheticSpec& spec, std::uint64_t seed);
/// Latent amplitudes (a_1, a_2, a_3) planted by synth_dataset, one per segment in dataset order.
std::vector<std::array<double, 3>> synth_amplitudes(const SyntheticSpec& spec, std::uint64_t seed);

struct FoldPlan {
  std::size_t k = 5;
  std::vector<std::size_t> fold_of_trial;

  std::vector<std::size_t> test_segments(const SegmentDataset& data, std::size_t fold) const;
  std::vector<std::size_t> train_segments(const SegmentDataset& data, std::size_t fold) const;
  bool operator==(const FoldPlan&) const = default;
};

/// Trial-level folds, stratified by (subject, label) and dealt round-robin.
FoldPlan make_folds(const SegmentDataset& data, std::size_t k, std::uint64_t seed);

/// Manifest validation failure listing every problem found.
class ManifestError : public DataError {
 public:
  explicit ManifestError(std::vector<std::string> problems);
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  std::vector<std::string> problems_;
};

/// Loads a "segments" manifest, or a "trials" manifest which is segmented on load.
SegmentDataset load_manifest(const std::filesystem::path& path);
std::vector<TrialRecording> load_trial_manifest(const std::filesystem::path& path);

/// Writes per-trial tensors [33, C, T] plus manifest.json under `dir`.
void write_segment_manifest(const SegmentDataset& data, const std::filesystem::path& dir);
void write_trial_manifest(std::span<const TrialRecording> trials, const std::filesystem::path& dir);

}  // namespace polyfuse
