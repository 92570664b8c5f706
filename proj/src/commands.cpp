#include "polyfuse/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "polyfuse/tensor_io.hpp"

namespace polyfuse::cli {

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

void write_json(const fs::path& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

Json provenance(const RunConfig& config) {
  return {{"version", POLYFUSE_VERSION}, {"run_config", run_config_to_json(config)}};
}

std::string grouped(std::uint64_t n) {
  std::string s = std::to_string(n);
  for (int i = static_cast<int>(s.size()) - 3; i > 0; i -= 3) s.insert(static_cast<std::size_t>(i), ",");
  return s;
}

}  // namespace

int guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const FormatError& e) {
    err << "invalid artifact: " << e.what() << "\n";
    return kFailed;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntime;
  }
}

SegmentDataset load_data(const RunConfig& config) {
  SegmentDataset data;
  if (!config.data.manifest.empty()) {
    data = load_manifest(config.data.manifest);
  } else if (config.data.synthetic) {
    data = synth_dataset(*config.data.synthetic, config.seed);
  } else {
    throw ConfigError("no data source: set data.manifest, data.synthetic or --data");
  }
  if (config.data.shuffle_labels) data = data.with_shuffled_labels(config.seed ^ 0x5bd1e995ULL);
  return data;
}

ModelSpec model_for(const RunConfig& config, const SegmentShape& shape) {
  ModelSpec spec = config.model;
  spec.eeg_channels = shape.eeg_channels;
  spec.eeg_length = shape.eeg_length;
  spec.nirs_channels = shape.nirs_channels;
  spec.nirs_length = shape.nirs_length;
  return spec.resolved();
}

int cmd_train(const RunConfig& config, const fs::path& out, std::ostream& log) {
  const SegmentDataset data = load_data(config);
  const ModelSpec spec = model_for(config, data.shape());
  const std::uint64_t model_seed = fold_seed(config.seed, 0);
  const std::uint64_t shuffle_seed = model_seed ^ 0xa5a5a5a5a5a5a5a5ULL;
  Model model(spec, model_seed);
  log << "train " << spec.name() << ": " << data.size() << " segments, " << model.parameter_count()
      << " parameters, " << config.trainer.epochs << " epochs\n";

  std::vector<std::size_t> all(data.size());
  std::iota(all.begin(), all.end(), 0);
  const TrainReport report = train(model, data, all, config.trainer, shuffle_seed);
  const Evaluation fit = evaluate(model, data, all, config.trainer.eval_batch);

  fs::create_directories(out);
  save_checkpoint(model, out / "checkpoint", model_seed);
  Json j = provenance(config);
  j["model"] = spec.name();
  j["seeds"] = {{"run", config.seed}, {"model", model_seed}, {"shuffle", shuffle_seed}};
  j["segments"] = data.size();
  j["parameters"] = model.parameter_count();
  j["steps"] = report.steps;
  j["loss_history"] = report.loss_history;
  j["train_accuracy"] = fit.accuracy();
  write_json(out / "train_report.json", j);
  log << "final loss " << report.loss_history.back() << ", train accuracy " << fit.accuracy() << "\n"
      << "wrote " << (out / "train_report.json").string() << " and " << (out / "checkpoint").string() << "\n";
  return kOk;
}

int cmd_cv(const RunConfig& config, const fs::path& out, std::ostream& log) {
  const SegmentDataset data = load_data(config);
  const ModelSpec spec = model_for(config, data.shape());
  CvOptions options;
  options.k = config.folds;
  options.folds = config.run_folds;
  options.seed = config.seed;
  options.jobs = config.jobs;
  log << "cv " << spec.name() << ": " << data.size() << " segments, " << config.folds << " folds, "
      << (config.run_folds.empty() ? config.folds : config.run_folds.size()) << " trained\n";
  const CvReport report = cross_validate(spec, data, config.trainer, options, provenance(config));

  fs::create_directories(out);
  write_json(out / "cv_report.json", report.to_json());
  write_file_atomic(out / "cv_offsets.csv", report.to_csv());
  for (const auto& f : report.folds) log << "fold " << f.fold << ": accuracy " << f.accuracy << "\n";
  log << "mean " << report.mean << " (std " << report.std << ")\n";
  return kOk;
}

int cmd_synth(const SyntheticSpec& spec, std::uint64_t seed, const fs::path& out, std::ostream& log) {
  spec.validate();
  const SegmentDataset data = synth_dataset(spec, seed);
  write_segment_manifest(data, out);
  write_json(out / "synthetic.json",
             {{"version", POLYFUSE_VERSION}, {"seed", seed}, {"synthetic", synthetic_spec_to_json(spec)}});
  log << "wrote " << data.trials().size() << " trials (" << data.size() << " segments) to " << out.string() << "\n";
  return kOk;
}

int cmd_verify(const VerifyOptions& options, std::ostream& log) {
  const auto results = run_verify(options);
  bool all = true;
  for (const auto& r : results) {
    char timing[32];
    std::snprintf(timing, sizeof timing, "%7.2fs", r.seconds);
    log << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(21) << r.name << timing << "  " << r.detail
        << "\n";
    all = all && r.passed;
  }
  return all ? kOk : kFailed;
}

int cmd_params(const ModelSpec& model, std::ostream& log) {
  ModelSpec base = model;
  if (base.modality) base.modality.reset();
  base = base.resolved();
  const fusion::FusionSpec& f = base.fusion;
  log << "dimensions A=" << f.dim_a << " B=" << f.dim_b << " C=" << f.dim_c << " O=" << f.output_dim
      << " R=" << f.rank << " p=" << f.order << "\n";

  struct Row {
    std::string label;
    fusion::FusionSpec spec;
  };
  auto variant = [&](fusion::Kind kind, fusion::Path path, bool symmetric) {
    fusion::FusionSpec s = f;
    s.kind = kind;
    s.path = path;
    s.symmetric = symmetric;
    return s;
  };
  using fusion::Kind;
  using fusion::Path;
  const Row rows[] = {{"linear", variant(Kind::Linear, Path::Full, false)},
                      {"tensor, full", variant(Kind::Tensor, Path::Full, false)},
                      {"tensor, factorized", variant(Kind::Tensor, Path::Factorized, false)},
                      {"polynomial, full", variant(Kind::Polynomial, Path::Full, false)},
                      {"polynomial, factorized", variant(Kind::Polynomial, Path::Factorized, false)},
                      {"polynomial, symmetric", variant(Kind::Polynomial, Path::Factorized, true)}};
  for (const auto& row : rows) {
    const std::uint64_t n = fusion::param_count(row.spec);
    log << "  " << std::left << std::setw(24) << row.label << std::right << std::setw(30)
        << (n == UINT64_MAX ? std::string("overflow") : grouped(n)) << "\n";
  }
  if (!model.fused() || model.fusion.dense_entries() <= fusion::kMaxMaterializedEntries ||
      model.fusion.path == Path::Factorized || model.fusion.kind == Kind::Linear) {
    const Model built(model, 0);
    log << "model " << model.name() << ": " << grouped(built.parameter_count()) << " parameters in total\n";
  } else {
    log << "model " << model.name() << ": dense fusion weight exceeds the materialization bound\n";
  }
  return kOk;
}

int cmd_segment(const fs::path& trial_manifest, const fs::path& out, std::ostream& log) {
  const SegmentDataset data = load_manifest(trial_manifest);
  write_segment_manifest(data, out);
  log << "segmented " << data.trials().size() << " trials into " << data.size() << " segments at " << out.string()
      << "\n";
  return kOk;
}

}  // namespace polyfuse::cli
