#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "xsmap/common.hpp"

namespace xsmap::data {

// One task execution: an N x T multichannel recording plus its class label.
// Samples are stored as float32 so the on-disk format round-trips bit-exactly.
struct Trial {
  int label = 0;  // 1..K
  Eigen::MatrixXf signal;  // n_channels x n_samples

  bool operator==(const Trial& o) const {
    return label == o.label && signal.rows() == o.signal.rows() &&
           signal.cols() == o.signal.cols() && signal == o.signal;
  }
};

struct TrialSet {
  int n_channels = 0;       // N
  int n_samples = 0;        // T
  double sample_rate_hz = 0.0;
  int n_classes = 0;        // K
  std::vector<Trial> trials;

  void validate() const;

  bool operator==(const TrialSet& o) const {
    return n_channels == o.n_channels && n_samples == o.n_samples &&
           sample_rate_hz == o.sample_rate_hz && n_classes == o.n_classes &&
           trials == o.trials;
  }
};

struct SynthConfig {
  int n_classes = 8;
  int n_channels = 8;
  int n_samples = 256;
  double sample_rate_hz = 1000.0;
  double noise_sigma = 1.0;
  int n_trials_per_subject = 1400;
  int template_harmonics = 2;
  double transfer_warp_gain = 4.0;
  uint64_t seed = 1;

  void validate() const;
  bool operator==(const SynthConfig&) const = default;
};

struct Split {
  std::vector<int> train_indices;
  std::vector<int> test_indices;
};

// Uniformly random disjoint index sets of the requested sizes.
Split split_trials(const TrialSet& ts, int n_train, int n_test, uint64_t seed);

// Trial file format, little-endian:
//   magic "XSTR" | u32 version | u32 N | u32 T | u32 K | f64 sample_rate
//   | u64 trial count | per trial: u8 label, N*T float32 row-major.
void write_trials(const std::string& path, const TrialSet& ts);
TrialSet read_trials(const std::string& path);

}  // namespace xsmap::data
