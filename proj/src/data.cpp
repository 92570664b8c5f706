#include "polyfuse/data.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "json.hpp"
#include "polyfuse/tensor_io.hpp"

namespace polyfuse {

namespace fs = std::filesystem;
using Json = nlohmann::json;

std::string to_string(Task t) { return t == Task::MI ? "MI" : "MA"; }

Task parse_task(const std::string& text) {
  if (text == "MI") return Task::MI;
  if (text == "MA") return Task::MA;
  throw std::invalid_argument("unknown task '" + text + "' (expected MI or MA)");
}

std::string to_string(Generator g) { return g == Generator::Additive ? "additive" : "interaction"; }

Generator parse_generator(const std::string& text) {
  if (text == "additive") return Generator::Additive;
  if (text == "interaction") return Generator::Interaction;
  throw std::invalid_argument("unknown generator '" + text + "' (expected additive or interaction)");
}

namespace {

std::string seconds(double s) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << (s >= 0 ? "+" : "") << s << " s";
  return os.str();
}

// Copies columns [start, start + length) of a [C, T] recording.
Tensor window(const Tensor& rec, std::size_t start, std::size_t length) {
  const std::size_t C = rec.dim(0), T = rec.dim(1);
  Tensor out(Shape{C, length});
  for (std::size_t c = 0; c < C; ++c)
    std::copy_n(rec.raw() + c * T + start, length, out.raw() + c * length);
  return out;
}

void check_span(const std::string& id, const char* modality, std::size_t rate, std::size_t onset, std::size_t total) {
  const double before = static_cast<double>(onset) / rate;
  const double after = (static_cast<double>(total) - static_cast<double>(onset)) / rate;
  const double need_before = -kFirstOffset, need_after = kLastOffset + kWindowSeconds;
  if (before < need_before || after < need_after) {
    throw DataError("trial " + id + ": " + modality + " recording covers " + seconds(-before) + " to " + seconds(after) +
                    " around onset; segmentation needs " + seconds(-need_before) + " to " + seconds(need_after));
  }
}

}  // namespace

std::vector<ModalSegment> segment_trial(const TrialRecording& rec) {
  if (rec.eeg.order() != 2 || rec.oxy.order() != 2 || rec.deoxy.order() != 2) {
    throw DataError("trial " + rec.id + ": recordings must be [channels, samples]");
  }
  if (rec.oxy.shape() != rec.deoxy.shape()) {
    throw DataError("trial " + rec.id + ": oxy " + shape_string(rec.oxy.shape()) + " and deoxy " +
                    shape_string(rec.deoxy.shape()) + " differ");
  }
  const std::size_t nirs_onset = rec.onset * kNirsRate / kEegRate;
  check_span(rec.id, "EEG", kEegRate, rec.onset, rec.eeg.dim(1));
  check_span(rec.id, "NIRS", kNirsRate, nirs_onset, rec.oxy.dim(1));

  std::vector<ModalSegment> out;
  out.reserve(kSegmentsPerTrial);
  for (int offset = kFirstOffset; offset <= kLastOffset; ++offset) {
    const std::size_t e0 = rec.onset + offset * static_cast<long>(kEegRate);
    const std::size_t n0 = nirs_onset + offset * static_cast<long>(kNirsRate);
    out.push_back({window(rec.eeg, e0, kWindowSeconds * kEegRate), window(rec.oxy, n0, kWindowSeconds * kNirsRate),
                   window(rec.deoxy, n0, kWindowSeconds * kNirsRate), rec.label, offset});
  }
  return out;
}

// ---------------------------------------------------------------------------

SegmentDataset::SegmentDataset(SegmentShape shape) : shape_(shape) {}

std::size_t SegmentDataset::add_trial(TrialInfo info) {
  if (info.label != 0 && info.label != 1) throw DataError("trial " + info.id + ": label must be 0 or 1");
  trials_.push_back(std::move(info));
  return trials_.size() - 1;
}

void SegmentDataset::reserve(std::size_t segments) {
  trial_of_.reserve(segments);
  offsets_.reserve(segments);
  eeg_.reserve(segments * shape_.eeg_channels * shape_.eeg_length);
  oxy_.reserve(segments * shape_.nirs_channels * shape_.nirs_length);
  deoxy_.reserve(segments * shape_.nirs_channels * shape_.nirs_length);
}

void SegmentDataset::add_segment(std::size_t trial, const ModalSegment& seg) {
  if (trial >= trials_.size()) throw DataError("segment refers to unknown trial " + std::to_string(trial));
  if (seg.label != trials_[trial].label) throw DataError("segment label differs from trial " + trials_[trial].id);
  const Shape eeg{shape_.eeg_channels, shape_.eeg_length};
  const Shape nirs{shape_.nirs_channels, shape_.nirs_length};
  if (seg.eeg.shape() != eeg || seg.oxy.shape() != nirs || seg.deoxy.shape() != nirs) {
    throw ShapeError("segment of trial " + trials_[trial].id + " has shapes " + shape_string(seg.eeg.shape()) + ", " +
                     shape_string(seg.oxy.shape()) + ", " + shape_string(seg.deoxy.shape()) + "; expected " +
                     shape_string(eeg) + ", " + shape_string(nirs) + ", " + shape_string(nirs));
  }
  trial_of_.push_back(trial);
  offsets_.push_back(seg.offset);
  eeg_.insert(eeg_.end(), seg.eeg.data().begin(), seg.eeg.data().end());
  oxy_.insert(oxy_.end(), seg.oxy.data().begin(), seg.oxy.data().end());
  deoxy_.insert(deoxy_.end(), seg.deoxy.data().begin(), seg.deoxy.data().end());
}

std::vector<std::vector<std::size_t>> SegmentDataset::segments_by_trial() const {
  std::vector<std::vector<std::size_t>> out(trials_.size());
  for (std::size_t i = 0; i < trial_of_.size(); ++i) out[trial_of_[i]].push_back(i);
  return out;
}

Batch SegmentDataset::batch(std::span<const std::size_t> segments) const {
  const std::size_t N = segments.size();
  const std::size_t es = shape_.eeg_channels * shape_.eeg_length;
  const std::size_t ns = shape_.nirs_channels * shape_.nirs_length;
  Batch b{Tensor(Shape{N, shape_.eeg_channels, shape_.eeg_length}),
          Tensor(Shape{N, shape_.nirs_channels, shape_.nirs_length}),
          Tensor(Shape{N, shape_.nirs_channels, shape_.nirs_length}),
          {}};
  b.labels.reserve(N);
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t s = segments[i];
    if (s >= size()) throw std::out_of_range("segment index " + std::to_string(s) + " out of range");
    std::copy_n(eeg_.data() + s * es, es, b.eeg.raw() + i * es);
    std::copy_n(oxy_.data() + s * ns, ns, b.oxy.raw() + i * ns);
    std::copy_n(deoxy_.data() + s * ns, ns, b.deoxy.raw() + i * ns);
    b.labels.push_back(label(s));
  }
  return b;
}

ModalSegment SegmentDataset::segment(std::size_t index) const {
  const std::size_t idx[] = {index};
  Batch b = batch(idx);
  return {b.eeg.reshaped({shape_.eeg_channels, shape_.eeg_length}),
          b.oxy.reshaped({shape_.nirs_channels, shape_.nirs_length}),
          b.deoxy.reshaped({shape_.nirs_channels, shape_.nirs_length}), b.labels[0], offsets_[index]};
}

SegmentDataset SegmentDataset::with_shuffled_labels(std::uint64_t seed) const {
  SegmentDataset out = *this;
  std::vector<int> labels;
  for (const auto& t : trials_) labels.push_back(t.label);
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);
  for (std::size_t i = 0; i < labels.size(); ++i) out.trials_[i].label = labels[i];
  return out;
}

// ---------------------------------------------------------------------------

void SyntheticSpec::validate() const {
  std::vector<std::string> problems;
  if (!(noise >= 0.0) || !std::isfinite(noise)) problems.push_back("noise must be finite and >= 0");
  if (subjects == 0) problems.push_back("subjects must be >= 1");
  if (trials < 2 * subjects) problems.push_back("need at least two trials per subject");
  if (!(amplitude_min > 0.0 && amplitude_max >= amplitude_min)) {
    problems.push_back("amplitude range must satisfy 0 < min <= max");
  }
  if (shape.eeg_channels == 0 || shape.eeg_length == 0 || shape.nirs_channels == 0 || shape.nirs_length == 0) {
    problems.push_back("segment shape must be positive");
  }
  if (!problems.empty()) {
    std::string msg = "invalid synthetic spec:";
    for (const auto& p : problems) msg += " " + p + ";";
    throw std::invalid_argument(msg);
  }
}

namespace {

struct Planted {
  std::vector<TrialInfo> trials;
  std::vector<std::array<double, 3>> amplitudes;  // per segment
};

Planted plant(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> magnitude(spec.amplitude_min, spec.amplitude_max);
  std::bernoulli_distribution coin(0.5);
  Planted p;
  for (std::size_t s = 0; s < spec.subjects; ++s) {
    const std::size_t n = spec.trials / spec.subjects + (s < spec.trials % spec.subjects ? 1 : 0);
    char subject[32];
    std::snprintf(subject, sizeof subject, "s%02zu", s + 1);
    for (std::size_t t = 0; t < n; ++t) {
      char id[64];
      std::snprintf(id, sizeof id, "%s-t%03zu", subject, t + 1);
      const int label = static_cast<int>(t % 2);
      p.trials.push_back({id, subject, spec.task, label});
      const double sign = label == 1 ? 1.0 : -1.0;
      for (std::size_t k = 0; k < kSegmentsPerTrial; ++k) {
        std::array<double, 3> a{magnitude(rng), magnitude(rng), magnitude(rng)};
        if (spec.generator == Generator::Additive) {
          for (double& v : a) v *= sign;
        } else {
          const double s1 = coin(rng) ? 1.0 : -1.0, s2 = coin(rng) ? 1.0 : -1.0;
          a[0] *= s1;
          a[1] *= s2;
          a[2] *= sign * s1 * s2;
        }
        p.amplitudes.push_back(a);
      }
    }
  }
  return p;
}

}  // namespace

std::vector<std::array<double, 3>> synth_amplitudes(const SyntheticSpec& spec, std::uint64_t seed) {
  return plant(spec, seed).amplitudes;
}

SegmentDataset synth_dataset(const SyntheticSpec& spec, std::uint64_t seed) {
  const Planted planted = plant(spec, seed);
  const SegmentShape& sh = spec.shape;
  // Separate streams for the fixed channel patterns and the noise.
  std::mt19937_64 pattern_rng(seed ^ 0x5bd1e995a3c1f00dULL);
  std::mt19937_64 noise_rng(seed ^ 0x2545f4914f6cdd1dULL);
  std::uniform_real_distribution<double> level(0.5, 1.0);
  std::bernoulli_distribution coin(0.5);
  auto pattern = [&](std::size_t channels) {
    std::vector<double> v(channels);
    for (double& x : v) x = (coin(pattern_rng) ? 1.0 : -1.0) * level(pattern_rng);
    return v;
  };
  const std::vector<double> patterns[3] = {pattern(sh.eeg_channels), pattern(sh.nirs_channels), pattern(sh.nirs_channels)};
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto fill = [&](Tensor& x, const std::vector<double>& pat, double amplitude) {
    const std::size_t T = x.dim(1);
    for (std::size_t c = 0; c < x.dim(0); ++c)
      for (std::size_t t = 0; t < T; ++t) {
        double v = amplitude * pat[c];
        if (spec.noise > 0.0) v += spec.noise * gauss(noise_rng);
        x[c * T + t] = v;
      }
  };

  SegmentDataset data(sh);
  data.reserve(planted.amplitudes.size());
  ModalSegment seg{Tensor(Shape{sh.eeg_channels, sh.eeg_length}), Tensor(Shape{sh.nirs_channels, sh.nirs_length}),
                   Tensor(Shape{sh.nirs_channels, sh.nirs_length}), 0, 0};
  std::size_t next = 0;
  for (const auto& info : planted.trials) {
    const std::size_t trial = data.add_trial(info);
    for (int offset = kFirstOffset; offset <= kLastOffset; ++offset) {
      const auto& a = planted.amplitudes[next++];
      fill(seg.eeg, patterns[0], a[0]);
      fill(seg.oxy, patterns[1], a[1]);
      fill(seg.deoxy, patterns[2], a[2]);
      seg.label = info.label;
      seg.offset = offset;
      data.add_segment(trial, seg);
    }
  }
  return data;
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> FoldPlan::test_segments(const SegmentDataset& data, std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (fold_of_trial.at(data.trial_of(i)) == fold) out.push_back(i);
  return out;
}

std::vector<std::size_t> FoldPlan::train_segments(const SegmentDataset& data, std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (fold_of_trial.at(data.trial_of(i)) != fold) out.push_back(i);
  return out;
}

FoldPlan make_folds(const SegmentDataset& data, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("fold count must be >= 2");
  std::map<std::pair<std::string, int>, std::vector<std::size_t>> groups;
  std::map<int, std::size_t> per_class;
  for (std::size_t t = 0; t < data.trials().size(); ++t) {
    const auto& info = data.trials()[t];
    groups[{info.subject, info.label}].push_back(t);
    ++per_class[info.label];
  }
  for (int label : {0, 1}) {
    if (per_class[label] < k) {
      throw DataError("make_folds: class " + std::to_string(label) + " has " + std::to_string(per_class[label]) +
                      " trials, fewer than k = " + std::to_string(k));
    }
  }
  std::mt19937_64 rng(seed);
  FoldPlan plan;
  plan.k = k;
  plan.fold_of_trial.assign(data.trials().size(), 0);
  std::size_t next = 0;  // continues across groups so fold sizes differ by at most one trial
  for (auto& [key, trials] : groups) {
    std::shuffle(trials.begin(), trials.end(), rng);
    for (std::size_t t : trials) plan.fold_of_trial[t] = next++ % k;
  }
  return plan;
}

// ---------------------------------------------------------------------------

ManifestError::ManifestError(std::vector<std::string> problems)
    : DataError([&] {
        std::string msg = "manifest has " + std::to_string(problems.size()) + " problem(s):";
        for (const auto& p : problems) msg += "\n  - " + p;
        return msg;
      }()),
      problems_(std::move(problems)) {}

namespace {

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError({"cannot open manifest " + path.string()});
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw ManifestError({"manifest " + path.string() + " is not valid JSON: " + e.what()});
  }
}

// Shared per-trial field checks; returns false when the entry is unusable.
bool check_trial_fields(const Json& entry, std::size_t index, const std::set<std::string>& allowed,
                        std::set<std::string>& seen_ids, std::vector<std::string>& problems, TrialInfo& info) {
  const std::string where = "trials[" + std::to_string(index) + "]";
  if (!entry.is_object()) {
    problems.push_back(where + ": not an object");
    return false;
  }
  bool ok = true;
  for (const auto& [key, value] : entry.items())
    if (!allowed.count(key)) problems.push_back(where + ": unknown key '" + key + "'");
  for (const char* key : {"id", "subject", "task", "label", "eeg", "oxy", "deoxy"}) {
    if (!entry.contains(key)) {
      problems.push_back(where + ": missing '" + key + "'");
      ok = false;
    }
  }
  if (!ok) return false;
  try {
    info.id = entry.at("id").get<std::string>();
    info.subject = entry.at("subject").get<std::string>();
  } catch (const Json::exception&) {
    problems.push_back(where + ": id and subject must be strings");
    return false;
  }
  // Field-value problems are recorded but the entry's files are still checked.
  if (!seen_ids.insert(info.id).second) problems.push_back(where + ": duplicate trial id '" + info.id + "'");
  try {
    info.task = parse_task(entry.at("task").get<std::string>());
  } catch (const std::exception&) {
    problems.push_back(where + " (" + info.id + "): unknown task " + entry.at("task").dump());
  }
  const Json& label = entry.at("label");
  if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1)) {
    problems.push_back(where + " (" + info.id + "): unknown label " + label.dump() + " (expected 0 or 1)");
  } else {
    info.label = label.get<int>();
  }
  return true;
}

// Loads a tensor file relative to `base`, recording problems instead of throwing.
bool load_checked(const fs::path& base, const Json& file, const std::string& what, const Shape* expected,
                  std::size_t expected_order, std::vector<std::string>& problems, Tensor& out) {
  if (!file.is_string()) {
    problems.push_back(what + ": file path must be a string");
    return false;
  }
  const fs::path path = base / file.get<std::string>();
  if (!fs::exists(path)) {
    problems.push_back(what + ": missing file " + path.string());
    return false;
  }
  try {
    out = load_tensor(path);
  } catch (const std::exception& e) {
    problems.push_back(what + ": " + e.what());
    return false;
  }
  if ((expected && out.shape() != *expected) || (!expected && out.order() != expected_order)) {
    problems.push_back(what + ": shape mismatch, got " + shape_string(out.shape()) +
                       (expected ? ", expected " + shape_string(*expected) : ""));
    return false;
  }
  return true;
}

void check_top_level(const Json& m, const std::string& kind, const std::set<std::string>& allowed,
                     std::vector<std::string>& problems) {
  if (!m.is_object()) throw ManifestError({"manifest root must be an object"});
  for (const auto& [key, value] : m.items())
    if (!allowed.count(key)) problems.push_back("unknown top-level key '" + key + "'");
  if (m.value("format", "") != "polyfuse-manifest") problems.push_back("'format' must be \"polyfuse-manifest\"");
  if (m.value("kind", "") != kind) problems.push_back("'kind' must be \"" + kind + "\"");
  if (!m.contains("trials") || !m.at("trials").is_array()) {
    problems.push_back("'trials' must be an array");
    throw ManifestError(problems);
  }
}

SegmentShape shape_from_json(const Json& m, std::vector<std::string>& problems) {
  SegmentShape sh;
  if (!m.contains("segment_shape")) return sh;
  try {
    const auto eeg = m.at("segment_shape").at("eeg").get<std::vector<std::size_t>>();
    const auto nirs = m.at("segment_shape").at("nirs").get<std::vector<std::size_t>>();
    if (eeg.size() != 2 || nirs.size() != 2) throw std::invalid_argument("rank");
    sh = {eeg[0], eeg[1], nirs[0], nirs[1]};
  } catch (const std::exception&) {
    problems.push_back("'segment_shape' must be {\"eeg\": [C, T], \"nirs\": [C, T]}");
  }
  return sh;
}

SegmentDataset load_segments(const Json& m, const fs::path& base) {
  std::vector<std::string> problems;
  check_top_level(m, "segments", {"format", "kind", "version", "segment_shape", "trials"}, problems);
  const SegmentShape sh = shape_from_json(m, problems);
  SegmentDataset data(sh);
  std::set<std::string> ids;
  const std::set<std::string> allowed{"id", "subject", "task", "label", "offsets", "eeg", "oxy", "deoxy"};
  std::size_t index = 0;
  for (const auto& entry : m.at("trials")) {
    TrialInfo info;
    const std::size_t i = index++;
    if (!check_trial_fields(entry, i, allowed, ids, problems, info)) continue;
    const std::string where = "trials[" + std::to_string(i) + "] (" + info.id + ")";
    std::vector<int> offsets;
    try {
      offsets = entry.at("offsets").get<std::vector<int>>();
    } catch (const Json::exception&) {
      problems.push_back(where + ": 'offsets' must be an integer array");
      continue;
    }
    const std::size_t S = offsets.size();
    const Shape eeg_shape{S, sh.eeg_channels, sh.eeg_length}, nirs_shape{S, sh.nirs_channels, sh.nirs_length};
    Tensor eeg, oxy, deoxy;
    bool ok = load_checked(base, entry.at("eeg"), where + " eeg", &eeg_shape, 3, problems, eeg);
    ok = load_checked(base, entry.at("oxy"), where + " oxy", &nirs_shape, 3, problems, oxy) && ok;
    ok = load_checked(base, entry.at("deoxy"), where + " deoxy", &nirs_shape, 3, problems, deoxy) && ok;
    if (!ok || !problems.empty()) continue;
    const std::size_t trial = data.add_trial(info);
    const std::size_t es = sh.eeg_channels * sh.eeg_length, ns = sh.nirs_channels * sh.nirs_length;
    for (std::size_t s = 0; s < S; ++s) {
      ModalSegment seg{Tensor(Shape{sh.eeg_channels, sh.eeg_length},
                              std::vector<double>(eeg.raw() + s * es, eeg.raw() + (s + 1) * es)),
                       Tensor(Shape{sh.nirs_channels, sh.nirs_length},
                              std::vector<double>(oxy.raw() + s * ns, oxy.raw() + (s + 1) * ns)),
                       Tensor(Shape{sh.nirs_channels, sh.nirs_length},
                              std::vector<double>(deoxy.raw() + s * ns, deoxy.raw() + (s + 1) * ns)),
                       info.label, offsets[s]};
      data.add_segment(trial, seg);
    }
  }
  if (!problems.empty()) throw ManifestError(problems);
  return data;
}

std::vector<TrialRecording> load_trials(const Json& m, const fs::path& base) {
  std::vector<std::string> problems;
  check_top_level(m, "trials", {"format", "kind", "version", "eeg_rate", "nirs_rate", "trials"}, problems);
  if (m.value("eeg_rate", kEegRate) != kEegRate || m.value("nirs_rate", kNirsRate) != kNirsRate) {
    problems.push_back("sampling rates must be eeg_rate " + std::to_string(kEegRate) + " and nirs_rate " +
                       std::to_string(kNirsRate) + "; resample upstream");
  }
  std::vector<TrialRecording> out;
  std::set<std::string> ids;
  const std::set<std::string> allowed{"id", "subject", "task", "label", "onset", "eeg", "oxy", "deoxy"};
  std::size_t index = 0;
  for (const auto& entry : m.at("trials")) {
    TrialInfo info;
    const std::size_t i = index++;
    if (!check_trial_fields(entry, i, allowed, ids, problems, info)) continue;
    const std::string where = "trials[" + std::to_string(i) + "] (" + info.id + ")";
    if (!entry.contains("onset") || !entry.at("onset").is_number_unsigned()) {
      problems.push_back(where + ": 'onset' must be a non-negative integer sample index");
      continue;
    }
    TrialRecording rec{info.id, info.subject, info.task, info.label, {}, {}, {}, entry.at("onset").get<std::size_t>()};
    bool ok = load_checked(base, entry.at("eeg"), where + " eeg", nullptr, 2, problems, rec.eeg);
    ok = load_checked(base, entry.at("oxy"), where + " oxy", nullptr, 2, problems, rec.oxy) && ok;
    ok = load_checked(base, entry.at("deoxy"), where + " deoxy", nullptr, 2, problems, rec.deoxy) && ok;
    if (!ok) continue;
    if (!out.empty() && (rec.eeg.dim(0) != out.front().eeg.dim(0) || rec.oxy.dim(0) != out.front().oxy.dim(0))) {
      problems.push_back(where + ": channel counts differ from the first trial");
      continue;
    }
    try {
      segment_trial(rec);  // span check only
    } catch (const DataError& e) {
      problems.push_back(where + ": " + e.what());
      continue;
    }
    out.push_back(std::move(rec));
  }
  if (!problems.empty()) throw ManifestError(problems);
  return out;
}

std::string safe_file_stem(const std::string& id) {
  std::string out = id;
  for (char& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
  return out;
}

void save_atomic(const fs::path& path, const Tensor& t) {
  std::ostringstream bytes;
  write_tensor(bytes, t);
  write_file_atomic(path, bytes.str());
}

}  // namespace

std::vector<TrialRecording> load_trial_manifest(const fs::path& path) {
  return load_trials(read_json(path), path.parent_path());
}

SegmentDataset load_manifest(const fs::path& path) {
  const Json m = read_json(path);
  const std::string kind = m.is_object() ? m.value("kind", "") : "";
  if (kind == "segments") return load_segments(m, path.parent_path());
  if (kind == "trials") {
    const auto trials = load_trials(m, path.parent_path());
    if (trials.empty()) throw ManifestError({"manifest lists no trials"});
    SegmentShape sh{trials.front().eeg.dim(0), kWindowSeconds * kEegRate, trials.front().oxy.dim(0),
                    kWindowSeconds * kNirsRate};
    SegmentDataset data(sh);
    data.reserve(trials.size() * kSegmentsPerTrial);
    for (const auto& rec : trials) {
      const std::size_t t = data.add_trial({rec.id, rec.subject, rec.task, rec.label});
      for (const auto& seg : segment_trial(rec)) data.add_segment(t, seg);
    }
    return data;
  }
  throw ManifestError({"'kind' must be \"segments\" or \"trials\""});
}

void write_segment_manifest(const SegmentDataset& data, const fs::path& dir) {
  fs::create_directories(dir / "trials");
  const SegmentShape& sh = data.shape();
  Json m;
  m["format"] = "polyfuse-manifest";
  m["kind"] = "segments";
  m["version"] = 1;
  m["segment_shape"] = {{"eeg", {sh.eeg_channels, sh.eeg_length}}, {"nirs", {sh.nirs_channels, sh.nirs_length}}};
  Json trials = Json::array();
  const auto groups = data.segments_by_trial();
  for (std::size_t t = 0; t < groups.size(); ++t) {
    const auto& info = data.trials()[t];
    const auto& segs = groups[t];
    Batch b = data.batch(segs);
    std::vector<int> offsets;
    for (std::size_t s : segs) offsets.push_back(data.offset(s));
    const std::string stem = "trials/" + safe_file_stem(info.id);
    save_atomic(dir / (stem + ".eeg.bin"), b.eeg);
    save_atomic(dir / (stem + ".oxy.bin"), b.oxy);
    save_atomic(dir / (stem + ".deoxy.bin"), b.deoxy);
    trials.push_back({{"id", info.id}, {"subject", info.subject}, {"task", to_string(info.task)},
                      {"label", info.label}, {"offsets", offsets}, {"eeg", stem + ".eeg.bin"},
                      {"oxy", stem + ".oxy.bin"}, {"deoxy", stem + ".deoxy.bin"}});
  }
  m["trials"] = trials;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

void write_trial_manifest(std::span<const TrialRecording> recs, const fs::path& dir) {
  fs::create_directories(dir / "trials");
  Json m;
  m["format"] = "polyfuse-manifest";
  m["kind"] = "trials";
  m["version"] = 1;
  m["eeg_rate"] = kEegRate;
  m["nirs_rate"] = kNirsRate;
  Json trials = Json::array();
  for (const auto& rec : recs) {
    const std::string stem = "trials/" + safe_file_stem(rec.id);
    save_atomic(dir / (stem + ".eeg.bin"), rec.eeg);
    save_atomic(dir / (stem + ".oxy.bin"), rec.oxy);
    save_atomic(dir / (stem + ".deoxy.bin"), rec.deoxy);
    trials.push_back({{"id", rec.id}, {"subject", rec.subject}, {"task", to_string(rec.task)}, {"label", rec.label},
                      {"onset", rec.onset}, {"eeg", stem + ".eeg.bin"}, {"oxy", stem + ".oxy.bin"},
                      {"deoxy", stem + ".deoxy.bin"}});
  }
  m["trials"] = trials;
  write_file_atomic(dir / "manifest.json", m.dump(2) + "\n");
}

}  // namespace polyfuse
