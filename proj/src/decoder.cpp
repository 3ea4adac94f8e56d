#include "xsmap/decoder.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace xsmap::decoder {

void MlpDecoderConfig::validate() const {
  if (hidden < 1) throw ConfigError("MlpDecoderConfig: hidden must be positive");
  if (minibatch < (batch_norm ? 2 : 1)) throw ConfigError("MlpDecoderConfig: minibatch too small");
  if (epochs < 0) throw ConfigError("MlpDecoderConfig: epochs must be nonnegative");
  if (lr1 < 0.0) throw ConfigError("MlpDecoderConfig: lr1 must be nonnegative");
  if (!(lr_decay > 0.0) || lr_decay > 1.0)
    throw ConfigError("MlpDecoderConfig: lr_decay must be in (0,1]");
}

namespace {

std::vector<int> class_counts(const pinsker::FeatureMatrix& fm) {
  std::vector<int> counts(static_cast<size_t>(fm.n_classes), 0);
  for (int label : fm.labels) ++counts[static_cast<size_t>(label - 1)];
  for (int k = 0; k < fm.n_classes; ++k)
    if (counts[static_cast<size_t>(k)] == 0)
      throw DataError("decoder: class " + std::to_string(k + 1) + " has no training rows");
  return counts;
}

std::vector<std::pair<int, int>> batch_ranges(int n, int batch) {
  std::vector<std::pair<int, int>> ranges;
  for (int start = 0; start < n; start += batch)
    ranges.emplace_back(start, std::min(n, start + batch));
  if (ranges.size() >= 2 && ranges.back().second - ranges.back().first < 2) {
    ranges[ranges.size() - 2].second = ranges.back().second;
    ranges.pop_back();
  }
  return ranges;
}

}  // namespace

DecoderModel train_mlp_decoder(const pinsker::FeatureMatrix& fm, const MlpDecoderConfig& cfg) {
  fm.validate();
  cfg.validate();
  class_counts(fm);
  if (fm.n_classes < 2) throw DataError("train_mlp_decoder: need at least 2 classes");

  const int d = static_cast<int>(fm.dim());
  const int k = fm.n_classes;
  const int n = static_cast<int>(fm.count());

  DecoderModel model;
  model.kind = DecoderModel::Kind::Mlp;
  model.n_classes = k;
  model.feature_dim = d;

  Rng rng(derive_seed(cfg.seed, 303));
  using nn::Activation;
  model.mlp = nn::Mlp({{d, cfg.hidden, Activation::Relu, cfg.batch_norm},
                       {cfg.hidden, k, Activation::Identity, false}},
                      rng);

  nn::Adadelta opt(model.mlp.param_count(), cfg.lr1, cfg.lr_decay);
  Eigen::VectorXd params = model.mlp.params();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const std::vector<int> order = rng.permutation(n);
    for (const auto& [begin, end] : batch_ranges(n, cfg.minibatch)) {
      const int bs = end - begin;
      Eigen::MatrixXd xb(bs, d);
      std::vector<int> yb(static_cast<size_t>(bs));
      for (int i = 0; i < bs; ++i) {
        const int idx = order[static_cast<size_t>(begin + i)];
        xb.row(i) = fm.rows.row(idx);
        yb[static_cast<size_t>(i)] = fm.labels[static_cast<size_t>(idx)];
      }
      nn::Cache cache;
      const Eigen::MatrixXd logits = model.mlp.forward(xb, nn::Mode::Train, &cache);
      const nn::XentResult xent = nn::softmax_xent(logits, yb);
      const Eigen::VectorXd grad = model.mlp.backward(cache, xent.grad_logits);
      opt.step(params, grad);
      model.mlp.set_params(params);
    }
    opt.end_epoch();
  }
  return model;
}

DecoderModel train_lda(const pinsker::FeatureMatrix& fm, double ridge) {
  fm.validate();
  if (ridge < 0.0) throw ConfigError("train_lda: ridge must be nonnegative");
  if (fm.n_classes < 2) throw DataError("train_lda: need at least 2 classes");
  const std::vector<int> counts = class_counts(fm);

  const int d = static_cast<int>(fm.dim());
  const int k = fm.n_classes;
  const Eigen::Index n = fm.count();

  DecoderModel model;
  model.kind = DecoderModel::Kind::Lda;
  model.n_classes = k;
  model.feature_dim = d;
  model.lda_means = Eigen::MatrixXd::Zero(k, d);
  for (Eigen::Index i = 0; i < n; ++i)
    model.lda_means.row(fm.labels[static_cast<size_t>(i)] - 1) += fm.rows.row(i);
  for (int c = 0; c < k; ++c) model.lda_means.row(c) /= counts[static_cast<size_t>(c)];

  // Pooled within-class covariance with n - K degrees of freedom.
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::RowVectorXd centered =
        fm.rows.row(i) - model.lda_means.row(fm.labels[static_cast<size_t>(i)] - 1);
    pooled.noalias() += centered.transpose() * centered;
  }
  const double dof = std::max<double>(1.0, static_cast<double>(n) - k);
  pooled /= dof;
  pooled += ridge * Eigen::MatrixXd::Identity(d, d);

  Eigen::LDLT<Eigen::MatrixXd> ldlt(pooled);
  const double pivot_min = ldlt.vectorD().minCoeff();
  const double pivot_max = ldlt.vectorD().maxCoeff();
  if (ldlt.info() != Eigen::Success || !(pivot_min > 0.0) || pivot_min < pivot_max * 1e-15)
    throw NumericError("train_lda: pooled covariance is singular even after ridge");
  model.lda_precision = ldlt.solve(Eigen::MatrixXd::Identity(d, d));
  if (!model.lda_precision.allFinite())
    throw NumericError("train_lda: pooled covariance is singular even after ridge");

  model.lda_log_prior.resize(k);
  for (int c = 0; c < k; ++c)
    model.lda_log_prior(c) =
        std::log(static_cast<double>(counts[static_cast<size_t>(c)]) / static_cast<double>(n));
  return model;
}

Eigen::MatrixXd DecoderModel::scores(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != feature_dim)
    throw DataError("decoder: row width " + std::to_string(rows.cols()) +
                    " does not match feature dim " + std::to_string(feature_dim));
  if (kind == Kind::Mlp) return mlp.infer(rows);
  // Linear discriminant: x P m_k' - m_k P m_k'/2 + log pi_k.
  const Eigen::MatrixXd pm = lda_means * lda_precision;  // K x D
  const Eigen::VectorXd quad = (pm.array() * lda_means.array()).rowwise().sum();
  Eigen::MatrixXd s = rows * pm.transpose();
  s.rowwise() -= (0.5 * quad - lda_log_prior).transpose();
  return s;
}

std::vector<int> predict(const DecoderModel& model, const Eigen::MatrixXd& rows) {
  const Eigen::MatrixXd s = model.scores(rows);
  std::vector<int> labels(static_cast<size_t>(rows.rows()));
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    int best = 0;
    for (int c = 1; c < model.n_classes; ++c)
      if (s(i, c) > s(i, best)) best = c;  // strict: ties keep the smaller index
    labels[static_cast<size_t>(i)] = best + 1;
  }
  return labels;
}

double accuracy(const DecoderModel& model, const pinsker::FeatureMatrix& fm) {
  fm.validate();
  if (fm.count() == 0) throw DataError("accuracy: empty feature matrix");
  const std::vector<int> predicted = predict(model, fm.rows);
  Eigen::Index correct = 0;
  for (size_t i = 0; i < predicted.size(); ++i)
    if (predicted[i] == fm.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(fm.count());
}

namespace {
constexpr char kDecoderMagic[4] = {'X', 'S', 'D', 'C'};
constexpr uint32_t kDecoderVersion = 1;
}  // namespace

void save_decoder(const std::string& path, const DecoderModel& model) {
  BinaryWriter w(path);
  w.magic(kDecoderMagic);
  w.u32(kDecoderVersion);
  w.u8(model.kind == DecoderModel::Kind::Mlp ? 0 : 1);
  w.u32(static_cast<uint32_t>(model.n_classes));
  w.u32(static_cast<uint32_t>(model.feature_dim));
  if (model.kind == DecoderModel::Kind::Mlp) {
    nn::write_mlp(w, model.mlp);
  } else {
    w.f64_array(model.lda_means.data(), static_cast<size_t>(model.lda_means.size()));
    w.f64_array(model.lda_precision.data(), static_cast<size_t>(model.lda_precision.size()));
    w.f64_array(model.lda_log_prior.data(), static_cast<size_t>(model.lda_log_prior.size()));
  }
  w.close();
}

DecoderModel load_decoder(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kDecoderMagic, "decoder checkpoint");
  const uint32_t version = r.u32("version");
  if (version != kDecoderVersion)
    throw DataError("unsupported decoder checkpoint version " + std::to_string(version));
  DecoderModel model;
  model.kind = r.u8("kind") == 0 ? DecoderModel::Kind::Mlp : DecoderModel::Kind::Lda;
  model.n_classes = static_cast<int>(r.u32("n_classes"));
  model.feature_dim = static_cast<int>(r.u32("feature_dim"));
  if (model.n_classes < 2) throw DataError("decoder checkpoint: field 'n_classes' below 2");
  if (model.feature_dim < 1)
    throw DataError("decoder checkpoint: field 'feature_dim' must be positive");
  if (model.kind == DecoderModel::Kind::Mlp) {
    model.mlp = nn::read_mlp(r);
  } else {
    const int k = model.n_classes, d = model.feature_dim;
    model.lda_means.resize(k, d);
    model.lda_precision.resize(d, d);
    model.lda_log_prior.resize(k);
    r.f64_array(model.lda_means.data(), static_cast<size_t>(model.lda_means.size()), "lda means");
    r.f64_array(model.lda_precision.data(), static_cast<size_t>(model.lda_precision.size()),
                "lda precision");
    r.f64_array(model.lda_log_prior.data(), static_cast<size_t>(model.lda_log_prior.size()),
                "lda priors");
  }
  if (!r.at_eof()) throw DataError("decoder checkpoint: trailing bytes");
  return model;
}

}  // namespace xsmap::decoder
