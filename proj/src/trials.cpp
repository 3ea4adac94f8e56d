#include "xsmap/trials.hpp"

#include <algorithm>

namespace xsmap::data {

void TrialSet::validate() const {
  if (n_channels < 1) throw DataError("TrialSet: n_channels must be positive");
  if (n_samples < 2) throw DataError("TrialSet: n_samples must be at least 2");
  if (n_classes < 1) throw DataError("TrialSet: n_classes must be positive");
  if (sample_rate_hz <= 0.0) throw DataError("TrialSet: sample_rate_hz must be positive");
  for (size_t i = 0; i < trials.size(); ++i) {
    const Trial& t = trials[i];
    if (t.signal.rows() != n_channels || t.signal.cols() != n_samples)
      throw DataError("TrialSet: trial " + std::to_string(i) + " has shape " +
                      std::to_string(t.signal.rows()) + "x" + std::to_string(t.signal.cols()) +
                      ", expected " + std::to_string(n_channels) + "x" + std::to_string(n_samples));
    if (t.label < 1 || t.label > n_classes)
      throw DataError("TrialSet: trial " + std::to_string(i) + " label " +
                      std::to_string(t.label) + " outside 1.." + std::to_string(n_classes));
  }
}

void SynthConfig::validate() const {
  if (n_classes < 1) throw ConfigError("SynthConfig: n_classes must be positive");
  if (n_channels < 1) throw ConfigError("SynthConfig: n_channels must be positive");
  if (n_samples < 2) throw ConfigError("SynthConfig: n_samples must be at least 2");
  if (sample_rate_hz <= 0.0) throw ConfigError("SynthConfig: sample_rate_hz must be positive");
  if (noise_sigma < 0.0) throw ConfigError("SynthConfig: noise_sigma must be nonnegative");
  if (n_trials_per_subject < 1)
    throw ConfigError("SynthConfig: n_trials_per_subject must be positive");
  if (n_trials_per_subject < n_classes)
    throw ConfigError("SynthConfig: need at least one trial per class");
  if (template_harmonics < 1)
    throw ConfigError("SynthConfig: template_harmonics must be positive");
  if (2 * template_harmonics >= n_samples)
    throw ConfigError("SynthConfig: template_harmonics must be below n_samples/2");
}

Split split_trials(const TrialSet& ts, int n_train, int n_test, uint64_t seed) {
  const int n = static_cast<int>(ts.trials.size());
  if (n_train < 1 || n_test < 1)
    throw ConfigError("split_trials: train and test sizes must be positive");
  if (n_train + n_test > n)
    throw ConfigError("split_trials: requested " + std::to_string(n_train + n_test) +
                      " trials but only " + std::to_string(n) + " available");
  Rng rng(seed);
  std::vector<int> perm = rng.permutation(n);
  Split s;
  s.train_indices.assign(perm.begin(), perm.begin() + n_train);
  s.test_indices.assign(perm.begin() + n_train, perm.begin() + n_train + n_test);
  std::sort(s.train_indices.begin(), s.train_indices.end());
  std::sort(s.test_indices.begin(), s.test_indices.end());
  return s;
}

namespace {
constexpr char kTrialMagic[4] = {'X', 'S', 'T', 'R'};
constexpr uint32_t kTrialVersion = 1;
}  // namespace

void write_trials(const std::string& path, const TrialSet& ts) {
  ts.validate();
  BinaryWriter w(path);
  w.magic(kTrialMagic);
  w.u32(kTrialVersion);
  w.u32(static_cast<uint32_t>(ts.n_channels));
  w.u32(static_cast<uint32_t>(ts.n_samples));
  w.u32(static_cast<uint32_t>(ts.n_classes));
  w.f64(ts.sample_rate_hz);
  w.u64(ts.trials.size());
  std::vector<float> row_major(static_cast<size_t>(ts.n_channels) * ts.n_samples);
  for (const Trial& t : ts.trials) {
    w.u8(static_cast<uint8_t>(t.label));
    for (int r = 0; r < ts.n_channels; ++r)
      for (int c = 0; c < ts.n_samples; ++c)
        row_major[static_cast<size_t>(r) * ts.n_samples + c] = t.signal(r, c);
    w.f32_array(row_major.data(), row_major.size());
  }
  w.close();
}

TrialSet read_trials(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kTrialMagic, "trial");
  const uint32_t version = r.u32("version");
  if (version != kTrialVersion)
    throw DataError("unsupported trial file version " + std::to_string(version));
  TrialSet ts;
  ts.n_channels = static_cast<int>(r.u32("n_channels"));
  ts.n_samples = static_cast<int>(r.u32("n_samples"));
  ts.n_classes = static_cast<int>(r.u32("n_classes"));
  ts.sample_rate_hz = r.f64("sample_rate_hz");
  if (ts.n_channels < 1) throw DataError("trial file: field 'n_channels' must be positive");
  if (ts.n_samples < 2) throw DataError("trial file: field 'n_samples' must be at least 2");
  if (ts.n_classes < 1) throw DataError("trial file: field 'n_classes' must be positive");
  if (!(ts.sample_rate_hz > 0.0))
    throw DataError("trial file: field 'sample_rate_hz' must be positive");
  const uint64_t count = r.u64("trial_count");
  ts.trials.resize(count);
  std::vector<float> row_major(static_cast<size_t>(ts.n_channels) * ts.n_samples);
  for (uint64_t i = 0; i < count; ++i) {
    Trial& t = ts.trials[i];
    t.label = r.u8("label");
    if (t.label < 1 || t.label > ts.n_classes)
      throw DataError("trial file: field 'label' of trial " + std::to_string(i) + " is " +
                      std::to_string(t.label) + ", outside 1.." + std::to_string(ts.n_classes));
    r.f32_array(row_major.data(), row_major.size(), "samples");
    t.signal.resize(ts.n_channels, ts.n_samples);
    for (int rr = 0; rr < ts.n_channels; ++rr)
      for (int cc = 0; cc < ts.n_samples; ++cc)
        t.signal(rr, cc) = row_major[static_cast<size_t>(rr) * ts.n_samples + cc];
  }
  if (!r.at_eof()) throw DataError("trial file: trailing bytes after last trial");
  return ts;
}

}  // namespace xsmap::data
