#pragma once

#include <complex>
#include <vector>

#include <Eigen/Core>

#include "xsmap/features.hpp"
#include "xsmap/trials.hpp"

namespace xsmap::pinsker {

// Either L (retained complex coefficients, DC included) or mu drives the
// cutoff. With L given, mu is implied as (2L)^alpha: the largest threshold
// that keeps exactly L complex frequencies.
struct PinskerConfig {
  double alpha = 1.0;
  double mu = 0.0;   // > 0 when mu is primary
  int l_coeffs = 0;  // >= 1 when L is primary

  bool l_is_primary() const { return l_coeffs >= 1; }
  void validate() const;
  int effective_l() const;
  double effective_mu() const;
  bool operator==(const PinskerConfig&) const = default;
};

// Projection onto the orthonormal discrete Fourier basis for frequencies
// 0..L-1: coefficient l = (1/sqrt(T)) * sum_t x[t] exp(-2*pi*i*l*t/T).
std::vector<std::complex<double>> fourier_project(const Eigen::VectorXd& signal, int l_coeffs);

// Ellipsoid weights a_1 = 0, a_{2m} = a_{2m+1} = (2m)^alpha and shrinkage
// w_l = max(0, 1 - a_l/mu), l = 1..count in the real-basis ordering.
Eigen::VectorXd pinsker_weights(double alpha, double mu, int count);

// Number of complex frequencies with a nonzero real-basis weight (DC always
// counts since a_1 = 0).
int select_l(double alpha, double mu);

// Smallest mu for which select_l returns l_coeffs (the threshold is open, so
// this is the next representable double above the boundary).
double min_mu_for_l(double alpha, int l_coeffs);

// Per channel: L complex coefficients, Pinsker-weighted real/imaginary parts
// in the order DC, Re_1, Im_1, Re_2, Im_2, ...; channels concatenated.
FeatureMatrix extract_features(const data::TrialSet& ts, const PinskerConfig& cfg);

// Single-channel feature row (2L-1 values) for one signal; building block of
// extract_features, exposed for tests.
Eigen::VectorXd channel_features(const Eigen::VectorXd& signal, int l_coeffs,
                                 const Eigen::VectorXd& weights);

}  // namespace xsmap::pinsker
