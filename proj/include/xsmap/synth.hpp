#pragma once

#include <vector>

#include <Eigen/Core>

#include "xsmap/trials.hpp"

namespace xsmap::data {

// Recorded generator internals so tests can query ground truth.
struct GroundTruth {
  std::vector<Eigen::MatrixXd> source_templates;  // per class, N x T
  std::vector<Eigen::MatrixXd> dest_templates;    // per class, N x T
  Eigen::MatrixXd mixing;                         // N x N rotation
  double warp_gain = 0.0;
  double warp_scale = 0.0;    // tanh knee of the odd nonlinearity
  double jitter_amp = 0.0;    // per-harmonic jitter component std
};

struct SyntheticPair {
  TrialSet source;
  TrialSet destination;
  GroundTruth truth;
};

// Paired-subject generator. Both subjects share the per-class smooth
// templates; the destination observes them through a fixed invertible warp
// (channel rotation followed by an elementwise odd nonlinearity). Labels are
// drawn independently per subject and balanced to within one trial.
SyntheticPair generate_synthetic_pair(const SynthConfig& config);

// The ground-truth warp applied to an N x T smooth signal.
Eigen::MatrixXd apply_warp(const GroundTruth& truth, const Eigen::MatrixXd& signal);

}  // namespace xsmap::data
