#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "xsmap/features.hpp"
#include "xsmap/nn.hpp"

namespace xsmap::cvae {

enum class CorrespondenceMode { RandomPerEpoch, ClassMean };

// Log-variances are clamped to this range before exponentiation.
constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

// Zero-mean, identity-covariance transform fitted by eigendecomposition of
// the sample covariance. Eigenvalues below 1e-8 times the largest are raised
// to that floor; apply and invert stay exact mutual inverses either way.
struct Whitening {
  Eigen::VectorXd mean;
  Eigen::MatrixXd transform;  // rows_out = (rows - mean) * transform
  Eigen::MatrixXd inverse;    // rows = rows_out * inverse + mean
  int floored = 0;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& rows) const;
};

Whitening whiten_fit(const Eigen::MatrixXd& rows);

// KL(N(mu_r, diag var_r) || N(mu_p, diag var_p)), closed form.
double gaussian_kl(const Eigen::VectorXd& mu_r, const Eigen::VectorXd& var_r,
                   const Eigen::VectorXd& mu_p, const Eigen::VectorXd& var_p);

// Z = mu + exp(clamp(log_var)/2) .* eps, batched row-wise.
Eigen::MatrixXd reparam_sample(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_var,
                               const Eigen::MatrixXd& eps);

struct CvaeConfig {
  int latent_dim = 50;     // M
  int hidden_prior = 350;  // H_p
  int hidden_recog = 350;  // H_r
  int hidden_gen = 350;    // H_g
  int minibatch = 75;
  int epochs = 150;
  double lr1 = 0.125;
  double lr_decay = 0.99;
  CorrespondenceMode correspondence = CorrespondenceMode::ClassMean;
  bool batch_norm = true;
  uint64_t seed = 1;

  void validate(int feature_dim) const;
  bool operator==(const CvaeConfig&) const = default;
};

// Prior p(Z|X), recognition q(Z|X,Y) and generation p(Y|X,Z) heads, each a
// single-hidden-layer MLP whose output splits into mean and log-variance.
// The generation side works in the whitened destination space.
struct CvaeModel {
  CvaeConfig config;
  int feature_dim = 0;  // D
  nn::Mlp prior;        // D -> 2M
  nn::Mlp recog;        // 2D -> 2M
  nn::Mlp gen;          // D+M -> 2D
  Whitening whitening;
  std::vector<double> loss_history;  // mean train loss per epoch
  bool trained = false;

  Eigen::Index param_count() const;
  Eigen::VectorXd params() const;
  void set_params(const Eigen::VectorXd& flat);
};

CvaeModel make_cvae(int feature_dim, const CvaeConfig& cfg);

struct ElboResult {
  double loss = 0.0;       // minus the batch-mean objective
  Eigen::VectorXd grad;    // w.r.t. concat(prior, recog, gen) parameters
};

// The Gaussian objective with a one-sample latent estimate: per row,
//   sum_m (1 + ln(vr/vp) - (vr + (mu_r-mu_p)^2)/vp)
//   - sum_d (ln vg + (y - mu_g)^2/vg),
// averaged over the batch and negated. eps is supplied so the value is a
// deterministic function of the parameters.
ElboResult elbo_loss(CvaeModel& model, const Eigen::MatrixXd& x,
                     const Eigen::MatrixXd& y_white, const Eigen::MatrixXd& eps,
                     nn::Mode mode);

CvaeModel train_cvae(const pinsker::FeatureMatrix& source, const pinsker::FeatureMatrix& dest,
                     const CvaeConfig& cfg);

struct MapOptions {
  bool generative = false;
  int samples = 1;
  uint64_t seed = 0;
};

struct Mapped {
  Eigen::MatrixXd whitened;  // generator output space
  Eigen::MatrixXd restored;  // whitening inverted
};

// Deterministic mode: Z = prior mean, Y = generation mean. Generative mode
// averages the generation mean over prior samples.
Mapped map_features(const CvaeModel& model, const Eigen::MatrixXd& x,
                    const MapOptions& opts = {});

void save_cvae(const std::string& path, const CvaeModel& model);
CvaeModel load_cvae(const std::string& path);

}  // namespace xsmap::cvae
