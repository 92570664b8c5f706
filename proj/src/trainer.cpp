#include "polyfuse/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "polyfuse/nn.hpp"

namespace polyfuse {

Adam::Adam(ParameterStore& store, AdamConfig config) : store_(&store), config_(config) {
  for (const auto& name : store.names()) {
    m_.emplace(name, Tensor(store.at(name).value.shape(), 0.0));
    v_.emplace(name, Tensor(store.at(name).value.shape(), 0.0));
  }
}

void Adam::step() {
  for (const auto& name : store_->names()) {
    for (double g : store_->at(name).grad.data()) {
      if (!std::isfinite(g)) throw NonFiniteError("non-finite gradient in parameter " + name);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (const auto& name : store_->names()) {
    Parameter& p = store_->at(name);
    Tensor& m = m_.at(name);
    Tensor& v = v_.at(name);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      p.value[i] -= config_.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.eps);
    }
  }
}

TrainReport train(Model& model, const SegmentDataset& data, std::span<const std::size_t> segments,
                  const TrainConfig& config, std::uint64_t seed) {
  if (segments.size() < 2) throw std::invalid_argument("train: need at least two training segments");
  if (config.batch_size < 2) throw std::invalid_argument("train: batch size must be >= 2");
  Adam opt(model.parameters(), config.adam);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(segments.begin(), segments.end());
  TrainReport report;
  model.set_mode(nn::Mode::Train);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t start = 0;
    while (start < order.size()) {
      std::size_t end = std::min(start + config.batch_size, order.size());
      if (order.size() - end == 1) end = order.size();
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const Batch b = data.batch(idx);
      model.parameters().zero_grad();
      Tape tape;
      const auto diverged = [&] {
        return DivergenceError("training loss became non-finite at epoch " + std::to_string(epoch + 1));
      };
      Var logits = model.forward(tape, b);
      if (!logits.value().all_finite()) throw diverged();
      Var loss = nn::softmax_cross_entropy(logits, b.labels);
      const double value = loss.value().item();
      if (!std::isfinite(value)) throw diverged();
      tape.backward(loss);
      opt.step();
      loss_sum += value * static_cast<double>(idx.size());
      start = end;
    }
    report.loss_history.push_back(loss_sum / static_cast<double>(order.size()));
  }
  report.steps = opt.steps();
  model.set_mode(nn::Mode::Eval);
  return report;
}

Evaluation evaluate(const Model& model, const SegmentDataset& data, std::span<const std::size_t> segments,
                    std::size_t batch_size) {
  Evaluation ev;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> votes;  // trial -> (votes for 1, total)
  for (std::size_t start = 0; start < segments.size(); start += batch_size) {
    const std::size_t end = std::min(start + batch_size, segments.size());
    const std::span<const std::size_t> idx(segments.data() + start, end - start);
    const Tensor probs = model.predict_proba(data.batch(idx));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const std::size_t s = idx[i];
      const int pred = probs[i * 2 + 1] > probs[i * 2] ? 1 : 0;
      const bool hit = pred == data.label(s);
      ev.correct += hit;
      ++ev.total;
      auto& off = ev.by_offset[data.offset(s)];
      off.first += hit;
      ++off.second;
      auto& subj = ev.by_subject[data.trials()[data.trial_of(s)].subject];
      subj.first += hit;
      ++subj.second;
      auto& v = votes[data.trial_of(s)];
      v.first += pred;
      ++v.second;
    }
  }
  for (const auto& [trial, v] : votes) {
    // ties go to class 0
    const int pred = 2 * v.first > v.second ? 1 : 0;
    ev.trials_correct += pred == data.trials()[trial].label;
    ++ev.trials_total;
  }
  return ev;
}

std::uint64_t fold_seed(std::uint64_t seed, std::size_t fold) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (fold + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace {

FoldResult run_fold(const ModelSpec& spec, const SegmentDataset& data, const FoldPlan& plan, std::size_t fold,
                    const TrainConfig& config, std::uint64_t seed) {
  const auto train_idx = plan.train_segments(data, fold);
  const auto test_idx = plan.test_segments(data, fold);
  std::set<std::size_t> train_trials, test_trials;
  for (std::size_t s : train_idx) train_trials.insert(data.trial_of(s));
  for (std::size_t s : test_idx) test_trials.insert(data.trial_of(s));
  for (std::size_t t : test_trials) {
    if (train_trials.count(t)) throw std::logic_error("trial " + data.trials()[t].id + " is in both splits");
  }
  if (train_idx.empty() || test_idx.empty()) {
    throw DataError("fold " + std::to_string(fold) + " has an empty train or test split");
  }

  FoldResult r;
  r.fold = fold;
  r.seed = fold_seed(seed, fold);
  Model model(spec, r.seed);
  const TrainReport tr = train(model, data, train_idx, config, r.seed ^ 0xa5a5a5a5a5a5a5a5ULL);
  const Evaluation ev = evaluate(model, data, test_idx, config.eval_batch);
  r.train_segments = train_idx.size();
  r.test_segments = test_idx.size();
  r.accuracy = ev.accuracy();
  r.trial_accuracy = ev.trial_accuracy();
  for (const auto& [offset, ct] : ev.by_offset) r.offset_accuracy[offset] = static_cast<double>(ct.first) / ct.second;
  r.by_subject = ev.by_subject;
  r.loss_history = tr.loss_history;
  return r;
}

}  // namespace

CvReport cross_validate(const ModelSpec& spec, const SegmentDataset& data, const TrainConfig& config,
                        const CvOptions& options, nlohmann::json config_record) {
  const FoldPlan plan = make_folds(data, options.k, options.seed);
  std::vector<std::size_t> folds = options.folds;
  if (folds.empty()) {
    folds.resize(options.k);
    std::iota(folds.begin(), folds.end(), 0);
  }
  for (std::size_t f : folds) {
    if (f >= options.k) throw std::invalid_argument("fold " + std::to_string(f) + " is out of range for k = " +
                                                    std::to_string(options.k));
  }

  CvReport report;
  report.config = std::move(config_record);
  report.folds.resize(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, folds.size()));
  auto worker = [&](std::size_t first) {
    for (std::size_t i = first; i < folds.size(); i += jobs) {
      try {
        report.folds[i] = run_fold(spec, data, plan, folds[i], config, options.seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker, j);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  const double n = static_cast<double>(report.folds.size());
  std::map<int, std::pair<double, double>> pooled;
  std::map<std::string, std::pair<std::size_t, std::size_t>> subjects;
  for (const auto& f : report.folds) {
    report.trial_mean += f.trial_accuracy / n;
    for (const auto& [subject, ct] : f.by_subject) {
      subjects[subject].first += ct.first;
      subjects[subject].second += ct.second;
    }
  }
  double sum = 0.0;
  for (const auto& f : report.folds) sum += f.accuracy;
  report.mean = sum / n;
  double ss = 0.0;
  for (const auto& f : report.folds) ss += (f.accuracy - report.mean) * (f.accuracy - report.mean);
  report.std = report.folds.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;

  for (std::size_t i = 0; i < folds.size(); ++i) {
    const auto test_idx = plan.test_segments(data, folds[i]);
    std::map<int, std::size_t> totals;
    for (std::size_t s : test_idx) ++totals[data.offset(s)];
    for (const auto& [offset, acc] : report.folds[i].offset_accuracy) {
      pooled[offset].first += acc * static_cast<double>(totals[offset]);
      pooled[offset].second += static_cast<double>(totals[offset]);
    }
  }
  for (const auto& [offset, p] : pooled) report.offset_accuracy[offset] = p.first / p.second;
  double subject_sum = 0.0;
  for (const auto& [subject, ct] : subjects) {
    report.subject_accuracy[subject] = static_cast<double>(ct.first) / ct.second;
    subject_sum += report.subject_accuracy[subject];
  }
  report.subject_mean = subjects.empty() ? 0.0 : subject_sum / static_cast<double>(subjects.size());
  return report;
}

nlohmann::json CvReport::to_json() const {
  nlohmann::json j;
  j["config"] = config;
  j["mean_accuracy"] = mean;
  j["std_accuracy"] = std;
  j["trial_vote_mean_accuracy"] = trial_mean;
  j["subject_mean_accuracy"] = subject_mean;
  j["subject_accuracy"] = subject_accuracy;
  nlohmann::json curve = nlohmann::json::array();
  for (const auto& [offset, acc] : offset_accuracy) curve.push_back({{"offset", offset}, {"accuracy", acc}});
  j["offset_accuracy"] = curve;
  nlohmann::json folds_json = nlohmann::json::array();
  for (const auto& f : folds) {
    nlohmann::json fj;
    fj["fold"] = f.fold;
    fj["seed"] = f.seed;
    fj["train_segments"] = f.train_segments;
    fj["test_segments"] = f.test_segments;
    fj["accuracy"] = f.accuracy;
    fj["trial_vote_accuracy"] = f.trial_accuracy;
    nlohmann::json fc = nlohmann::json::array();
    for (const auto& [offset, acc] : f.offset_accuracy) fc.push_back({{"offset", offset}, {"accuracy", acc}});
    fj["offset_accuracy"] = fc;
    fj["loss_history"] = f.loss_history;
    folds_json.push_back(fj);
  }
  j["folds"] = folds_json;
  return j;
}

std::string CvReport::to_csv() const {
  std::ostringstream os;
  os << "fold,offset,accuracy\n" << std::setprecision(17);
  for (const auto& f : folds)
    for (const auto& [offset, acc] : f.offset_accuracy) os << f.fold << ',' << offset << ',' << acc << '\n';
  return os.str();
}

}  // namespace polyfuse
