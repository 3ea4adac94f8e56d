#include "xsmap/synth.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace xsmap::data {

namespace {

// Trial-to-trial variability of the smooth signal component: multiplicative
// amplitude wobble and phase (latency) wobble per harmonic around the class
// template, plus a small additive in-band component. The phase wobble is
// wide, so a good part of the class information sits in oscillation
// amplitudes rather than in the (shrunken) feature means. All three scales
// are relative to noise_sigma, so the zero-noise limit degenerates to exact
// class templates.
constexpr double kAmpJitter = 0.08;
constexpr double kPhaseJitter = 1.10;
constexpr double kAddJitter = 0.10;

// Per-class template parameters: amplitude and phase per channel and
// harmonic.
struct TemplateParams {
  Eigen::MatrixXd amp;    // N x H
  Eigen::MatrixXd phase;  // N x H
};

Eigen::MatrixXd render_template(const TemplateParams& p, int n_samples) {
  const int n_channels = static_cast<int>(p.amp.rows());
  const int harmonics = static_cast<int>(p.amp.cols());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_channels, n_samples);
  for (int n = 0; n < n_channels; ++n)
    for (int h = 1; h <= harmonics; ++h)
      for (int t = 0; t < n_samples; ++t)
        out(n, t) +=
            p.amp(n, h - 1) * std::cos(2.0 * M_PI * h * t / n_samples + p.phase(n, h - 1));
  return out;
}

// Template plus per-trial smooth jitter, at variability level sigma.
Eigen::MatrixXd render_smooth_trial(const TemplateParams& p, int n_samples, double sigma,
                                    Rng& rng) {
  const int n_channels = static_cast<int>(p.amp.rows());
  const int harmonics = static_cast<int>(p.amp.cols());
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_channels, n_samples);
  for (int n = 0; n < n_channels; ++n) {
    for (int h = 1; h <= harmonics; ++h) {
      const double amp = p.amp(n, h - 1) * (1.0 + sigma * kAmpJitter * rng.normal());
      const double phase = p.phase(n, h - 1) + sigma * kPhaseJitter * rng.normal();
      const double add_c = sigma * kAddJitter * rng.normal();
      const double add_s = sigma * kAddJitter * rng.normal();
      for (int t = 0; t < n_samples; ++t) {
        const double arg = 2.0 * M_PI * h * t / n_samples;
        out(n, t) += amp * std::cos(arg + phase) + add_c * std::cos(arg) + add_s * std::sin(arg);
      }
    }
  }
  return out;
}

// Balanced labels (counts differ by at most one), shuffled per subject.
std::vector<int> balanced_labels(Rng& rng, int n_trials, int n_classes) {
  std::vector<int> labels;
  labels.reserve(n_trials);
  const int base = n_trials / n_classes;
  const int extra = n_trials % n_classes;
  for (int k = 0; k < n_classes; ++k)
    for (int i = 0; i < base + (k < extra ? 1 : 0); ++i) labels.push_back(k + 1);
  const std::vector<int> perm = rng.permutation(n_trials);
  std::vector<int> shuffled(n_trials);
  for (int i = 0; i < n_trials; ++i) shuffled[i] = labels[perm[i]];
  return shuffled;
}

Trial make_trial(Rng& rng, int label, const Eigen::MatrixXd& smooth, double sigma) {
  Trial t;
  t.label = label;
  Eigen::MatrixXd sig = smooth;
  if (sigma > 0.0) {
    for (Eigen::Index r = 0; r < sig.rows(); ++r)
      for (Eigen::Index c = 0; c < sig.cols(); ++c) sig(r, c) += sigma * rng.normal();
  }
  t.signal = sig.cast<float>();
  return t;
}

}  // namespace

Eigen::MatrixXd apply_warp(const GroundTruth& truth, const Eigen::MatrixXd& signal) {
  if (truth.warp_gain == 0.0) return signal;
  Eigen::MatrixXd mixed = truth.mixing * signal;
  const double g = truth.warp_gain;
  const double c = truth.warp_scale;
  return mixed.unaryExpr([g, c](double u) { return u + g * c * std::tanh(u / c); });
}

SyntheticPair generate_synthetic_pair(const SynthConfig& config) {
  config.validate();
  const int K = config.n_classes;
  const int N = config.n_channels;
  const int T = config.n_samples;
  const int H = config.template_harmonics;

  Rng tmpl_rng(derive_seed(config.seed, 0));
  Rng warp_rng(derive_seed(config.seed, 1));
  Rng src_rng(derive_seed(config.seed, 2));
  Rng dst_rng(derive_seed(config.seed, 3));

  SyntheticPair pair;
  GroundTruth& truth = pair.truth;
  truth.warp_gain = config.transfer_warp_gain;
  truth.warp_scale = 0.5;
  truth.jitter_amp = kAddJitter;

  // Class templates share a per-channel base waveform; classes deviate from
  // it in amplitude and phase. The spread of base amplitudes puts channels
  // on both sides of the warp nonlinearity's knee.
  constexpr double kAmpDev = 0.90;
  constexpr double kPhaseDev = 0.60;
  Eigen::MatrixXd base_amp(N, H), base_phase(N, H);
  for (int n = 0; n < N; ++n) {
    const double channel_scale = 0.6 + 1.0 * tmpl_rng.uniform();
    for (int h = 0; h < H; ++h) {
      base_amp(n, h) = channel_scale * (0.7 + 0.6 * tmpl_rng.uniform());
      base_phase(n, h) = 2.0 * M_PI * tmpl_rng.uniform();
    }
  }

  std::vector<TemplateParams> class_params;
  class_params.reserve(K);
  truth.source_templates.reserve(K);
  for (int k = 0; k < K; ++k) {
    TemplateParams p;
    p.amp.resize(N, H);
    p.phase.resize(N, H);
    for (int n = 0; n < N; ++n) {
      for (int h = 0; h < H; ++h) {
        p.amp(n, h) = base_amp(n, h) * (1.0 + kAmpDev * (2.0 * tmpl_rng.uniform() - 1.0));
        p.phase(n, h) = base_phase(n, h) + kPhaseDev * (2.0 * tmpl_rng.uniform() - 1.0);
      }
    }
    truth.source_templates.push_back(render_template(p, T));
    class_params.push_back(std::move(p));
  }

  // Channel mixing: Cayley transform of a scaled random skew-symmetric
  // matrix. Orthogonal for every gain, exactly the identity at gain zero.
  if (config.transfer_warp_gain == 0.0 || N == 1) {
    truth.mixing = Eigen::MatrixXd::Identity(N, N);
  } else {
    const Eigen::MatrixXd g_mat = warp_rng.normal_matrix(N, N);
    const Eigen::MatrixXd skew =
        (g_mat - g_mat.transpose()) * (config.transfer_warp_gain / (2.0 * std::sqrt(double(N))));
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(N, N);
    truth.mixing = (eye - skew).partialPivLu().solve(eye + skew);
  }

  truth.dest_templates.reserve(K);
  for (int k = 0; k < K; ++k)
    truth.dest_templates.push_back(apply_warp(truth, truth.source_templates[k]));

  auto& src = pair.source;
  auto& dst = pair.destination;
  for (TrialSet* ts : {&src, &dst}) {
    ts->n_channels = N;
    ts->n_samples = T;
    ts->n_classes = K;
    ts->sample_rate_hz = config.sample_rate_hz;
    ts->trials.reserve(config.n_trials_per_subject);
  }

  const std::vector<int> src_labels = balanced_labels(src_rng, config.n_trials_per_subject, K);
  for (int label : src_labels) {
    const Eigen::MatrixXd smooth = render_smooth_trial(class_params[label - 1], T, config.noise_sigma, src_rng);
    src.trials.push_back(make_trial(src_rng, label, smooth, config.noise_sigma));
  }

  // Destination trials: the warp acts on the whole smooth component
  // (template plus jitter); measurement noise stays additive on top.
  const std::vector<int> dst_labels = balanced_labels(dst_rng, config.n_trials_per_subject, K);
  for (int label : dst_labels) {
    const Eigen::MatrixXd smooth =
        apply_warp(truth, render_smooth_trial(class_params[label - 1], T, config.noise_sigma, dst_rng));
    dst.trials.push_back(make_trial(dst_rng, label, smooth, config.noise_sigma));
  }

  return pair;
}

}  // namespace xsmap::data
