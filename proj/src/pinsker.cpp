#include "xsmap/pinsker.hpp"

#include <cmath>
#include <limits>

namespace xsmap::pinsker {

void PinskerConfig::validate() const {
  if (!(alpha > 0.0)) throw ConfigError("PinskerConfig: alpha must be positive");
  const bool has_l = l_coeffs >= 1;
  const bool has_mu = mu > 0.0;
  if (l_coeffs < 0) throw ConfigError("PinskerConfig: l_coeffs must be positive when given");
  if (mu < 0.0) throw ConfigError("PinskerConfig: mu must be positive when given");
  if (has_l == has_mu)
    throw ConfigError("PinskerConfig: exactly one of mu and l_coeffs must be set");
}

int PinskerConfig::effective_l() const {
  validate();
  return l_is_primary() ? l_coeffs : select_l(alpha, mu);
}

double PinskerConfig::effective_mu() const {
  validate();
  return l_is_primary() ? std::pow(2.0 * l_coeffs, alpha) : mu;
}

std::vector<std::complex<double>> fourier_project(const Eigen::VectorXd& signal, int l_coeffs) {
  const int n = static_cast<int>(signal.size());
  if (n < 1) throw DataError("fourier_project: empty signal");
  const int l_max = n / 2 + 1;
  if (l_coeffs < 1 || l_coeffs > l_max)
    throw ConfigError("fourier_project: L=" + std::to_string(l_coeffs) + " outside 1.." +
                      std::to_string(l_max) + " for T=" + std::to_string(n));
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<std::complex<double>> coeffs(l_coeffs);
  for (int l = 0; l < l_coeffs; ++l) {
    double re = 0.0, im = 0.0;
    for (int t = 0; t < n; ++t) {
      const double arg = 2.0 * M_PI * l * t / n;
      re += signal(t) * std::cos(arg);
      im -= signal(t) * std::sin(arg);
    }
    coeffs[l] = {re * norm, im * norm};
  }
  return coeffs;
}

namespace {

// a_1 = 0, a_{2m} = a_{2m+1} = (2m)^alpha, 1-indexed.
double ellipsoid_weight(double alpha, int l_one_based) {
  if (l_one_based <= 1) return 0.0;
  const int m = l_one_based / 2;
  return std::pow(2.0 * m, alpha);
}

}  // namespace

Eigen::VectorXd pinsker_weights(double alpha, double mu, int count) {
  if (!(alpha > 0.0)) throw ConfigError("pinsker_weights: alpha must be positive");
  if (!(mu > 0.0)) throw ConfigError("pinsker_weights: mu must be positive");
  if (count < 1) throw ConfigError("pinsker_weights: count must be positive");
  Eigen::VectorXd w(count);
  for (int i = 0; i < count; ++i)
    w(i) = std::max(0.0, 1.0 - ellipsoid_weight(alpha, i + 1) / mu);
  return w;
}

int select_l(double alpha, double mu) {
  if (!(alpha > 0.0)) throw ConfigError("select_l: alpha must be positive");
  if (!(mu > 0.0)) throw ConfigError("select_l: mu must be positive");
  // Count m >= 1 with (2m)^alpha < mu; DC is always kept since a_1 = 0.
  // Closed-form estimate first, then settle the boundary with the exact
  // comparison so results match pinsker_weights bit for bit.
  const double r = std::pow(mu, 1.0 / alpha) / 2.0;
  long long m = static_cast<long long>(std::max(0.0, std::floor(r) - 2.0));
  while (std::pow(2.0 * static_cast<double>(m + 1), alpha) < mu) ++m;
  while (m > 0 && !(std::pow(2.0 * static_cast<double>(m), alpha) < mu)) --m;
  const long long l = 1 + m;
  if (l > static_cast<long long>(std::numeric_limits<int>::max()))
    return std::numeric_limits<int>::max();
  return static_cast<int>(l);
}

double min_mu_for_l(double alpha, int l_coeffs) {
  if (!(alpha > 0.0)) throw ConfigError("min_mu_for_l: alpha must be positive");
  if (l_coeffs < 1) throw ConfigError("min_mu_for_l: l_coeffs must be positive");
  const double boundary = l_coeffs == 1 ? 0.0 : std::pow(2.0 * (l_coeffs - 1), alpha);
  return std::nextafter(boundary, std::numeric_limits<double>::infinity());
}

Eigen::VectorXd channel_features(const Eigen::VectorXd& signal, int l_coeffs,
                                 const Eigen::VectorXd& weights) {
  if (weights.size() < 2 * l_coeffs - 1)
    throw DataError("channel_features: need " + std::to_string(2 * l_coeffs - 1) + " weights");
  const std::vector<std::complex<double>> coeffs = fourier_project(signal, l_coeffs);
  Eigen::VectorXd out(2 * l_coeffs - 1);
  out(0) = weights(0) * coeffs[0].real();
  for (int m = 1; m < l_coeffs; ++m) {
    out(2 * m - 1) = weights(2 * m - 1) * coeffs[m].real();
    out(2 * m) = weights(2 * m) * coeffs[m].imag();
  }
  return out;
}

FeatureMatrix extract_features(const data::TrialSet& ts, const PinskerConfig& cfg) {
  ts.validate();
  const int l = cfg.effective_l();
  const int l_max = ts.n_samples / 2 + 1;
  if (l > l_max)
    throw ConfigError("extract_features: L=" + std::to_string(l) + " exceeds floor(T/2)+1=" +
                      std::to_string(l_max) + " for T=" + std::to_string(ts.n_samples));
  const Eigen::VectorXd weights = pinsker_weights(cfg.alpha, cfg.effective_mu(), 2 * l - 1);
  const int per_channel = 2 * l - 1;
  const Eigen::Index dim = static_cast<Eigen::Index>(ts.n_channels) * per_channel;

  FeatureMatrix fm;
  fm.n_classes = ts.n_classes;
  fm.rows.resize(static_cast<Eigen::Index>(ts.trials.size()), dim);
  fm.labels.reserve(ts.trials.size());
  for (size_t i = 0; i < ts.trials.size(); ++i) {
    const data::Trial& trial = ts.trials[i];
    fm.labels.push_back(trial.label);
    for (int ch = 0; ch < ts.n_channels; ++ch) {
      const Eigen::VectorXd row = trial.signal.row(ch).cast<double>();
      fm.rows.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(ch) * per_channel, 1,
                    per_channel) = channel_features(row, l, weights).transpose();
    }
  }
  return fm;
}

}  // namespace xsmap::pinsker
