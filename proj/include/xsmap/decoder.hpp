#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "xsmap/features.hpp"
#include "xsmap/nn.hpp"

namespace xsmap::decoder {

struct MlpDecoderConfig {
  int hidden = 350;
  bool batch_norm = true;
  int minibatch = 75;
  int epochs = 100;
  double lr1 = 0.125;
  double lr_decay = 0.99;
  uint64_t seed = 1;

  void validate() const;
  bool operator==(const MlpDecoderConfig&) const = default;
};

// Either a softmax MLP or closed-form LDA over the same feature space.
struct DecoderModel {
  enum class Kind { Mlp, Lda };
  Kind kind = Kind::Mlp;
  int n_classes = 0;
  int feature_dim = 0;

  nn::Mlp mlp;  // Kind::Mlp

  Eigen::MatrixXd lda_means;      // K x D
  Eigen::MatrixXd lda_precision;  // D x D, inverse of ridged pooled covariance
  Eigen::VectorXd lda_log_prior;  // K

  // Per-row discriminant scores, K columns.
  Eigen::MatrixXd scores(const Eigen::MatrixXd& rows) const;
};

DecoderModel train_mlp_decoder(const pinsker::FeatureMatrix& fm, const MlpDecoderConfig& cfg);

// Closed-form LDA: class means, ridged pooled within-class covariance,
// empirical priors.
DecoderModel train_lda(const pinsker::FeatureMatrix& fm, double ridge);

// Argmax of the discriminant; ties break toward the smallest class index.
std::vector<int> predict(const DecoderModel& model, const Eigen::MatrixXd& rows);

// Fraction of rows whose predicted label matches.
double accuracy(const DecoderModel& model, const pinsker::FeatureMatrix& fm);

void save_decoder(const std::string& path, const DecoderModel& model);
DecoderModel load_decoder(const std::string& path);

}  // namespace xsmap::decoder
