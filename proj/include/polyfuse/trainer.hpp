#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "polyfuse/autodiff.hpp"
#include "polyfuse/data.hpp"
#include "polyfuse/models.hpp"

namespace polyfuse {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected Adam over every parameter in a store.
class Adam {
 public:
  Adam(ParameterStore& store, AdamConfig config = {});

  /// Applies one update from the current gradients. NonFiniteError names the parameter.
  void step();
  std::uint64_t steps() const noexcept { return t_; }
  const Tensor& first_moment(const std::string& name) const { return m_.at(name); }
  const Tensor& second_moment(const std::string& name) const { return v_.at(name); }

 private:
  ParameterStore* store_;
  AdamConfig config_;
  std::map<std::string, Tensor> m_, v_;
  std::uint64_t t_ = 0;
};

/// Loss became non-finite during training.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::size_t epochs = 300;
  std::size_t batch_size = 16;
  AdamConfig adam{};
  /// Accuracy is evaluated with this batch size; it does not affect results.
  std::size_t eval_batch = 128;
};

struct TrainReport {
  std::vector<double> loss_history;  // mean training loss per epoch
  std::size_t steps = 0;
};

/// Trains in place on `segments` with a seeded per-epoch shuffle. Batches of one
/// segment are merged into the previous batch (BatchNorm needs two samples).
TrainReport train(Model& model, const SegmentDataset& data, std::span<const std::size_t> segments,
                  const TrainConfig& config, std::uint64_t seed);

struct Evaluation {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::map<int, std::pair<std::size_t, std::size_t>> by_offset;   // offset -> (correct, total)
  std::map<std::string, std::pair<std::size_t, std::size_t>> by_subject;
  std::size_t trials_correct = 0;  // majority vote over each trial's segments
  std::size_t trials_total = 0;

  double accuracy() const { return total ? static_cast<double>(correct) / total : 0.0; }
  double trial_accuracy() const { return trials_total ? static_cast<double>(trials_correct) / trials_total : 0.0; }
};

Evaluation evaluate(const Model& model, const SegmentDataset& data, std::span<const std::size_t> segments,
                    std::size_t batch_size = 128);

struct FoldResult {
  std::size_t fold = 0;
  std::uint64_t seed = 0;
  std::size_t train_segments = 0;
  std::size_t test_segments = 0;
  double accuracy = 0.0;
  double trial_accuracy = 0.0;
  std::map<int, double> offset_accuracy;
  std::map<std::string, std::pair<std::size_t, std::size_t>> by_subject;
  std::vector<double> loss_history;
};

struct CvOptions {
  std::size_t k = 5;
  /// Folds to train; empty means all k.
  std::vector<std::size_t> folds;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;
};

struct CvReport {
  nlohmann::json config;  // embedded verbatim
  std::vector<FoldResult> folds;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation over folds
  double trial_mean = 0.0;
  std::map<int, double> offset_accuracy;  // pooled over folds
  std::map<std::string, double> subject_accuracy;
  double subject_mean = 0.0;

  nlohmann::json to_json() const;
  /// Rows "fold,offset,accuracy".
  std::string to_csv() const;
};

/// Per-fold seed derived from the run seed.
std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold);

/// Trains one fresh model per fold; results are merged by fold index, so `jobs`
/// does not change the report.
CvReport cross_validate(const ModelSpec& spec, const SegmentDataset& data, const TrainConfig& config,
                        const CvOptions& options, nlohmann::json config_record = {});

}  // namespace polyfuse
