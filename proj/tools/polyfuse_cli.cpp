// polyfuse command-line tool.
//
// Settings are resolved in three layers: profile defaults, then the --config
// file, then individual flags. The output directory falls back to
// $POLYFUSE_OUT and finally ./polyfuse-out.

#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "polyfuse/commands.hpp"

using namespace polyfuse;

namespace {

struct RunFlags {
  std::string config;
  std::string data;
  std::string synthetic;
  std::string model;
  std::string profile;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> order, rank, output_dim, epochs, batch_size, folds, jobs, trials;
  std::optional<double> lr, noise;
  std::vector<std::size_t> run_folds;
  bool symmetric = false;
  bool shuffle_labels = false;
};

void add_model_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--model", f.model, "eeg, oxy, deoxy, lf, tf or pf")
      ->check(CLI::IsMember({"eeg", "oxy", "deoxy", "lf", "tf", "pf"}));
  cmd->add_option("--order", f.order, "polynomial order");
  cmd->add_option("--rank", f.rank, "CP rank");
  cmd->add_option("--output-dim", f.output_dim, "fused feature length");
  cmd->add_flag("--symmetric", f.symmetric, "share one factor across polynomial positions");
  cmd->add_option("--profile", f.profile, "desk or full")->check(CLI::IsMember({"desk", "full"}));
  cmd->add_option("--config", f.config, "JSON run configuration")->check(CLI::ExistingFile);
}

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  add_model_flags(cmd, f);
  cmd->add_option("--data", f.data, "segment or trial manifest");
  cmd->add_option("--synthetic", f.synthetic, "generate data instead: additive or interaction")
      ->check(CLI::IsMember({"additive", "interaction"}));
  cmd->add_option("--trials", f.trials, "synthetic trial count");
  cmd->add_option("--noise", f.noise, "synthetic noise level");
  cmd->add_flag("--shuffle-labels", f.shuffle_labels, "permute labels across trials");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch-size", f.batch_size);
  cmd->add_option("--lr", f.lr, "Adam learning rate");
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--out", f.out, "output directory");
}

RunConfig resolve(const RunFlags& f) {
  std::optional<Profile> profile;
  if (!f.profile.empty()) profile = parse_profile(f.profile);
  RunConfig c = f.config.empty() ? profile_defaults(profile.value_or(Profile::Desk)) : load_run_config(f.config, profile);

  if (!f.model.empty()) {
    if (f.model == "lf" || f.model == "tf" || f.model == "pf") {
      c.model.modality.reset();
      c.model.fusion.kind = f.model == "lf" ? fusion::Kind::Linear
                            : f.model == "tf" ? fusion::Kind::Tensor
                                              : fusion::Kind::Polynomial;
    } else {
      c.model.modality = parse_modality(f.model);
    }
  }
  if (f.order) c.model.fusion.order = *f.order;
  if (f.rank) c.model.fusion.rank = *f.rank;
  if (f.output_dim) c.model.fusion.output_dim = *f.output_dim;
  if (f.symmetric) c.model.fusion.symmetric = true;

  if (!f.data.empty()) {
    c.data.manifest = f.data;
    c.data.synthetic.reset();
  }
  if (!f.synthetic.empty()) {
    c.data.manifest.clear();
    if (!c.data.synthetic) c.data.synthetic = SyntheticSpec{};
    c.data.synthetic->generator = parse_generator(f.synthetic);
  }
  if (c.data.synthetic) {
    if (f.trials) c.data.synthetic->trials = *f.trials;
    if (f.noise) c.data.synthetic->noise = *f.noise;
  } else if (f.trials || f.noise) {
    throw ConfigError("--trials and --noise apply to synthetic data only");
  }
  if (f.shuffle_labels) c.data.shuffle_labels = true;

  if (f.epochs) c.trainer.epochs = *f.epochs;
  if (f.batch_size) c.trainer.batch_size = *f.batch_size;
  if (f.lr) c.trainer.adam.lr = *f.lr;
  if (f.folds) c.folds = *f.folds;
  if (!f.run_folds.empty()) c.run_folds = f.run_folds;
  if (f.jobs) c.jobs = *f.jobs;
  if (f.seed) c.seed = *f.seed;
  if (!f.out.empty()) c.out = f.out;
  for (std::size_t fold : c.run_folds)
    if (fold >= c.folds) throw ConfigError("--fold " + std::to_string(fold) + " is >= the fold count");
  return c;
}

std::filesystem::path output_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("POLYFUSE_OUT"); env && *env) return env;
  return "polyfuse-out";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal fusion classifiers for EEG and NIRS segments"};
  app.set_version_flag("--version", POLYFUSE_VERSION);
  app.require_subcommand(1);

  RunFlags train_flags, cv_flags, params_flags;
  auto* train_cmd = app.add_subcommand("train", "train one model on every segment and save a checkpoint");
  add_run_flags(train_cmd, train_flags);

  auto* cv_cmd = app.add_subcommand("cv", "trial-disjoint k-fold cross-validation");
  add_run_flags(cv_cmd, cv_flags);
  cv_cmd->add_option("--folds", cv_flags.folds, "number of folds k");
  cv_cmd->add_option("--fold", cv_flags.run_folds, "train only these folds (repeatable)");
  cv_cmd->add_option("--jobs", cv_flags.jobs, "folds trained in parallel")->check(CLI::PositiveNumber);

  SyntheticSpec synth;
  std::string synth_generator = "interaction", synth_task = "MI", synth_out;
  std::uint64_t synth_seed = 1;
  auto* synth_cmd = app.add_subcommand("synth", "write a synthetic segment dataset");
  synth_cmd->add_option("--generator", synth_generator)->check(CLI::IsMember({"additive", "interaction"}));
  synth_cmd->add_option("--trials", synth.trials);
  synth_cmd->add_option("--subjects", synth.subjects);
  synth_cmd->add_option("--noise", synth.noise);
  synth_cmd->add_option("--task", synth_task)->check(CLI::IsMember({"MI", "MA"}));
  synth_cmd->add_option("--eeg-length", synth.shape.eeg_length);
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--out", synth_out, "output directory");

  VerifyOptions verify;
  std::string checkpoint;
  auto* verify_cmd = app.add_subcommand("verify", "run the oracle checks");
  verify_cmd->add_option("--filter", verify.filter, "comma-separated check names");
  verify_cmd->add_option("--checkpoint", checkpoint, "also validate this checkpoint directory");
  verify_cmd->add_option("--seed", verify.seed);
  verify_cmd->add_flag_callback(
      "--list",
      [] {
        for (const auto& name : verify_check_names()) std::cout << name << "\n";
        std::exit(0);
      },
      "print check names");

  auto* params_cmd = app.add_subcommand("params", "parameter counts of the fusion variants");
  add_model_flags(params_cmd, params_flags);

  std::string segment_in, segment_out;
  auto* segment_cmd = app.add_subcommand("segment", "cut a raw-trial manifest into 3 s segments");
  segment_cmd->add_option("--data", segment_in, "trial manifest")->required()->check(CLI::ExistingFile);
  segment_cmd->add_option("--out", segment_out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return cli::kUsage;
  }

  std::ostream& log = std::cerr;
  return cli::guarded(
      [&]() -> int {
        if (train_cmd->parsed()) {
          const RunConfig c = resolve(train_flags);
          return cli::cmd_train(c, output_dir(c.out), log);
        }
        if (cv_cmd->parsed()) {
          const RunConfig c = resolve(cv_flags);
          return cli::cmd_cv(c, output_dir(c.out), log);
        }
        if (synth_cmd->parsed()) {
          synth.generator = parse_generator(synth_generator);
          synth.task = parse_task(synth_task);
          return cli::cmd_synth(synth, synth_seed, output_dir(synth_out), log);
        }
        if (verify_cmd->parsed()) {
          verify.checkpoint = checkpoint;
          return cli::cmd_verify(verify, std::cout);
        }
        if (params_cmd->parsed()) return cli::cmd_params(resolve(params_flags).model, std::cout);
        return cli::cmd_segment(segment_in, output_dir(segment_out), log);
      },
      std::cerr);
}
