#include "xsmap/cvae.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace xsmap::cvae {

namespace {

Eigen::MatrixXd hconcat(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

Eigen::MatrixXd clamp_log_var(const Eigen::MatrixXd& raw) {
  return raw.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax);
}

// 1 inside the clamp range, 0 where the clamp is active.
Eigen::ArrayXXd clamp_gate(const Eigen::MatrixXd& raw) {
  return (raw.array() > kLogVarMin && raw.array() < kLogVarMax).cast<double>();
}

}  // namespace

Eigen::MatrixXd Whitening::apply(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != mean.size())
    throw DataError("Whitening::apply: row width " + std::to_string(rows.cols()) +
                    " does not match dimension " + std::to_string(mean.size()));
  return (rows.rowwise() - mean.transpose()) * transform;
}

Eigen::MatrixXd Whitening::invert(const Eigen::MatrixXd& rows) const {
  if (rows.cols() != mean.size())
    throw DataError("Whitening::invert: row width " + std::to_string(rows.cols()) +
                    " does not match dimension " + std::to_string(mean.size()));
  return (rows * inverse).rowwise() + mean.transpose();
}

Whitening whiten_fit(const Eigen::MatrixXd& rows) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index d = rows.cols();
  if (n < 2) throw DataError("whiten_fit: need at least 2 rows");
  Whitening w;
  w.mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - w.mean.transpose();
  const Eigen::MatrixXd cov =
      centered.transpose() * centered / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success)
    throw NumericError("whiten_fit: eigendecomposition failed");
  Eigen::VectorXd vals = eig.eigenvalues();
  const double top = vals.maxCoeff();
  const double floor = top > 0.0 ? 1e-8 * top : 1e-12;
  for (Eigen::Index i = 0; i < d; ++i) {
    if (vals(i) < floor) {
      vals(i) = floor;
      ++w.floored;
    }
  }
  const Eigen::MatrixXd v = eig.eigenvectors();
  w.transform = v * vals.array().rsqrt().matrix().asDiagonal() * v.transpose();
  w.inverse = v * vals.array().sqrt().matrix().asDiagonal() * v.transpose();
  return w;
}

double gaussian_kl(const Eigen::VectorXd& mu_r, const Eigen::VectorXd& var_r,
                   const Eigen::VectorXd& mu_p, const Eigen::VectorXd& var_p) {
  const Eigen::Index m = mu_r.size();
  if (var_r.size() != m || mu_p.size() != m || var_p.size() != m)
    throw DataError("gaussian_kl: dimension mismatch");
  if ((var_r.array() <= 0.0).any() || (var_p.array() <= 0.0).any())
    throw NumericError("gaussian_kl: variances must be positive");
  const Eigen::ArrayXd ratio = var_r.array() / var_p.array();
  const Eigen::ArrayXd shift = (mu_r - mu_p).array().square() / var_p.array();
  return 0.5 * ((var_p.array() / var_r.array()).log() + ratio + shift - 1.0).sum();
}

Eigen::MatrixXd reparam_sample(const Eigen::MatrixXd& mu, const Eigen::MatrixXd& log_var,
                               const Eigen::MatrixXd& eps) {
  if (mu.rows() != log_var.rows() || mu.cols() != log_var.cols() || mu.rows() != eps.rows() ||
      mu.cols() != eps.cols())
    throw DataError("reparam_sample: shape mismatch");
  return mu.array() + (clamp_log_var(log_var).array() * 0.5).exp() * eps.array();
}

void CvaeConfig::validate(int feature_dim) const {
  if (feature_dim < 2) throw ConfigError("CvaeConfig: feature dimension must be at least 2");
  if (latent_dim < 1) throw ConfigError("CvaeConfig: latent_dim must be positive");
  if (latent_dim >= feature_dim)
    throw ConfigError("CvaeConfig: latent_dim " + std::to_string(latent_dim) +
                      " must be below feature dimension " + std::to_string(feature_dim));
  if (hidden_prior < 1 || hidden_recog < 1 || hidden_gen < 1)
    throw ConfigError("CvaeConfig: hidden sizes must be positive");
  if (minibatch < (batch_norm ? 2 : 1))
    throw ConfigError("CvaeConfig: minibatch too small");
  if (epochs < 0) throw ConfigError("CvaeConfig: epochs must be nonnegative");
  if (lr1 < 0.0) throw ConfigError("CvaeConfig: lr1 must be nonnegative");
  if (!(lr_decay > 0.0) || lr_decay > 1.0)
    throw ConfigError("CvaeConfig: lr_decay must be in (0,1]");
}

Eigen::Index CvaeModel::param_count() const {
  return prior.param_count() + recog.param_count() + gen.param_count();
}

Eigen::VectorXd CvaeModel::params() const {
  Eigen::VectorXd flat(param_count());
  flat << prior.params(), recog.params(), gen.params();
  return flat;
}

void CvaeModel::set_params(const Eigen::VectorXd& flat) {
  if (flat.size() != param_count())
    throw DataError("CvaeModel::set_params: size mismatch");
  Eigen::Index at = 0;
  prior.set_params(flat.segment(at, prior.param_count()));
  at += prior.param_count();
  recog.set_params(flat.segment(at, recog.param_count()));
  at += recog.param_count();
  gen.set_params(flat.segment(at, gen.param_count()));
}

CvaeModel make_cvae(int feature_dim, const CvaeConfig& cfg) {
  cfg.validate(feature_dim);
  CvaeModel model;
  model.config = cfg;
  model.feature_dim = feature_dim;
  const int d = feature_dim;
  const int m = cfg.latent_dim;
  Rng rng(derive_seed(cfg.seed, 101));
  using nn::Activation;
  model.prior = nn::Mlp({{d, cfg.hidden_prior, Activation::Relu, cfg.batch_norm},
                         {cfg.hidden_prior, 2 * m, Activation::Identity, false}},
                        rng);
  model.recog = nn::Mlp({{2 * d, cfg.hidden_recog, Activation::Relu, cfg.batch_norm},
                         {cfg.hidden_recog, 2 * m, Activation::Identity, false}},
                        rng);
  model.gen = nn::Mlp({{d + m, cfg.hidden_gen, Activation::Relu, cfg.batch_norm},
                       {cfg.hidden_gen, 2 * d, Activation::Identity, false}},
                      rng);
  return model;
}

ElboResult elbo_loss(CvaeModel& model, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y_white,
                     const Eigen::MatrixXd& eps, nn::Mode mode) {
  const Eigen::Index b = x.rows();
  const int d = model.feature_dim;
  const int m = model.config.latent_dim;
  if (x.cols() != d) throw DataError("elbo_loss: x width does not match feature dim");
  if (y_white.rows() != b || y_white.cols() != d)
    throw DataError("elbo_loss: y batch shape mismatch");
  if (eps.rows() != b || eps.cols() != m) throw DataError("elbo_loss: eps shape mismatch");

  nn::Cache cache_p, cache_r, cache_g;
  const Eigen::MatrixXd p_out = model.prior.forward(x, mode, &cache_p);
  if (!p_out.allFinite()) throw NumericError("elbo_loss: non-finite output of the prior head");
  const Eigen::MatrixXd r_out = model.recog.forward(hconcat(x, y_white), mode, &cache_r);
  if (!r_out.allFinite())
    throw NumericError("elbo_loss: non-finite output of the recognition head");

  const Eigen::MatrixXd mu_p = p_out.leftCols(m);
  const Eigen::MatrixXd lp_raw = p_out.rightCols(m);
  const Eigen::MatrixXd lp = clamp_log_var(lp_raw);
  const Eigen::ArrayXXd var_p = lp.array().exp();

  const Eigen::MatrixXd mu_r = r_out.leftCols(m);
  const Eigen::MatrixXd lr_raw = r_out.rightCols(m);
  const Eigen::MatrixXd lr = clamp_log_var(lr_raw);
  const Eigen::ArrayXXd var_r = lr.array().exp();
  const Eigen::ArrayXXd sigma_r = (lr.array() * 0.5).exp();

  const Eigen::MatrixXd z = mu_r.array() + sigma_r * eps.array();
  const Eigen::MatrixXd g_out = model.gen.forward(hconcat(x, z), mode, &cache_g);
  if (!g_out.allFinite())
    throw NumericError("elbo_loss: non-finite output of the generation head");

  const Eigen::MatrixXd mu_g = g_out.leftCols(d);
  const Eigen::MatrixXd lg_raw = g_out.rightCols(d);
  const Eigen::MatrixXd lg = clamp_log_var(lg_raw);
  const Eigen::ArrayXXd var_g = lg.array().exp();

  const Eigen::ArrayXXd mu_diff = (mu_r - mu_p).array();
  const Eigen::ArrayXXd latent_term =
      1.0 + (lr - lp).array() - (var_r + mu_diff.square()) / var_p;
  const Eigen::ArrayXXd res = (y_white - mu_g).array();
  const Eigen::ArrayXXd recon_term = lg.array() + res.square() / var_g;
  const double objective =
      (latent_term.rowwise().sum() - recon_term.rowwise().sum()).mean();

  ElboResult out;
  out.loss = -objective;
  if (!std::isfinite(out.loss)) throw NumericError("elbo_loss: non-finite loss");

  const double s = -1.0 / static_cast<double>(b);

  // Generation head.
  Eigen::MatrixXd d_gen(b, 2 * d);
  d_gen.leftCols(d) = s * (2.0 * res / var_g).matrix();
  d_gen.rightCols(d) = s * (clamp_gate(lg_raw) * (-1.0 + res.square() / var_g)).matrix();
  Eigen::MatrixXd d_gen_in;
  const Eigen::VectorXd grad_gen = model.gen.backward(cache_g, d_gen, &d_gen_in);
  const Eigen::MatrixXd dz = d_gen_in.rightCols(m);

  // Recognition head: direct terms plus the reparameterized path through Z.
  Eigen::MatrixXd d_recog(b, 2 * m);
  d_recog.leftCols(m) = (s * (-2.0 * mu_diff / var_p)).matrix() + dz;
  d_recog.rightCols(m) =
      (clamp_gate(lr_raw) *
       (s * (1.0 - var_r / var_p) + dz.array() * (0.5 * sigma_r * eps.array())))
          .matrix();
  const Eigen::VectorXd grad_recog = model.recog.backward(cache_r, d_recog);

  // Prior head.
  Eigen::MatrixXd d_prior(b, 2 * m);
  d_prior.leftCols(m) = (s * (2.0 * mu_diff / var_p)).matrix();
  d_prior.rightCols(m) =
      (s * (clamp_gate(lp_raw) * (-1.0 + (var_r + mu_diff.square()) / var_p))).matrix();
  const Eigen::VectorXd grad_prior = model.prior.backward(cache_p, d_prior);

  out.grad.resize(model.param_count());
  out.grad << grad_prior, grad_recog, grad_gen;
  return out;
}

namespace {

std::vector<std::vector<int>> indices_by_class(const pinsker::FeatureMatrix& fm) {
  std::vector<std::vector<int>> by_class(fm.n_classes);
  for (Eigen::Index i = 0; i < fm.count(); ++i)
    by_class[static_cast<size_t>(fm.labels[static_cast<size_t>(i)] - 1)].push_back(
        static_cast<int>(i));
  return by_class;
}

// Minibatch boundaries; a trailing singleton is merged into the previous
// batch so batch norm always sees at least two rows.
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

CvaeModel train_cvae(const pinsker::FeatureMatrix& source, const pinsker::FeatureMatrix& dest,
                     const CvaeConfig& cfg) {
  source.validate();
  dest.validate();
  if (source.dim() != dest.dim())
    throw DataError("train_cvae: feature dimensions differ between subjects");
  if (source.n_classes != dest.n_classes)
    throw DataError("train_cvae: class counts differ between subjects");

  const auto src_by_class = indices_by_class(source);
  const auto dst_by_class = indices_by_class(dest);
  for (int k = 0; k < source.n_classes; ++k) {
    if (src_by_class[static_cast<size_t>(k)].empty())
      throw DataError("train_cvae: class " + std::to_string(k + 1) + " missing in source");
    if (dst_by_class[static_cast<size_t>(k)].empty())
      throw DataError("train_cvae: class " + std::to_string(k + 1) + " missing in destination");
  }

  const int d = static_cast<int>(source.dim());
  CvaeModel model = make_cvae(d, cfg);
  model.whitening = whiten_fit(dest.rows);
  const Eigen::MatrixXd dest_white = model.whitening.apply(dest.rows);

  // Whitened class-conditional destination means.
  Eigen::MatrixXd class_means = Eigen::MatrixXd::Zero(dest.n_classes, d);
  for (int k = 0; k < dest.n_classes; ++k) {
    const auto& idx = dst_by_class[static_cast<size_t>(k)];
    for (int i : idx) class_means.row(k) += dest_white.row(i);
    class_means.row(k) /= static_cast<double>(idx.size());
  }

  const int n = static_cast<int>(source.count());
  const int m = cfg.latent_dim;
  Rng rng(derive_seed(cfg.seed, 202));
  nn::Adadelta opt(model.param_count(), cfg.lr1, cfg.lr_decay);
  Eigen::VectorXd params = model.params();

  Eigen::MatrixXd targets(n, d);
  if (cfg.correspondence == CorrespondenceMode::ClassMean) {
    for (int i = 0; i < n; ++i)
      targets.row(i) = class_means.row(source.labels[static_cast<size_t>(i)] - 1);
  }

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.correspondence == CorrespondenceMode::RandomPerEpoch) {
      for (int i = 0; i < n; ++i) {
        const auto& idx = dst_by_class[static_cast<size_t>(source.labels[static_cast<size_t>(i)] - 1)];
        targets.row(i) = dest_white.row(idx[static_cast<size_t>(rng.uniform_int(
            static_cast<int>(idx.size())))]);
      }
    }
    const std::vector<int> order = rng.permutation(n);
    double epoch_loss = 0.0;
    for (const auto& [begin, end] : batch_ranges(n, cfg.minibatch)) {
      const int bs = end - begin;
      Eigen::MatrixXd xb(bs, d), yb(bs, d);
      for (int i = 0; i < bs; ++i) {
        xb.row(i) = source.rows.row(order[static_cast<size_t>(begin + i)]);
        yb.row(i) = targets.row(order[static_cast<size_t>(begin + i)]);
      }
      const Eigen::MatrixXd eps = rng.normal_matrix(bs, m);
      const ElboResult res = elbo_loss(model, xb, yb, eps, nn::Mode::Train);
      opt.step(params, res.grad);
      model.set_params(params);
      epoch_loss += res.loss * bs;
    }
    opt.end_epoch();
    model.loss_history.push_back(epoch_loss / n);
  }

  model.trained = true;
  return model;
}

Mapped map_features(const CvaeModel& model, const Eigen::MatrixXd& x, const MapOptions& opts) {
  if (!model.trained) throw DataError("map_features: model is not trained");
  if (x.cols() != model.feature_dim)
    throw DataError("map_features: row width " + std::to_string(x.cols()) +
                    " does not match feature dim " + std::to_string(model.feature_dim));
  const int d = model.feature_dim;
  const int m = model.config.latent_dim;
  const Eigen::MatrixXd p_out = model.prior.infer(x);
  const Eigen::MatrixXd mu_p = p_out.leftCols(m);

  Mapped out;
  if (!opts.generative) {
    out.whitened = model.gen.infer(hconcat(x, mu_p)).leftCols(d);
  } else {
    if (opts.samples < 1) throw ConfigError("map_features: samples must be positive");
    const Eigen::MatrixXd lp = p_out.rightCols(m);
    Rng rng(opts.seed);
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(x.rows(), d);
    for (int s = 0; s < opts.samples; ++s) {
      const Eigen::MatrixXd z = reparam_sample(mu_p, lp, rng.normal_matrix(x.rows(), m));
      acc += model.gen.infer(hconcat(x, z)).leftCols(d);
    }
    out.whitened = acc / static_cast<double>(opts.samples);
  }
  out.restored = model.whitening.invert(out.whitened);
  return out;
}

namespace {
constexpr char kCvaeMagic[4] = {'X', 'S', 'C', 'V'};
constexpr uint32_t kCvaeVersion = 1;
}  // namespace

void save_cvae(const std::string& path, const CvaeModel& model) {
  BinaryWriter w(path);
  w.magic(kCvaeMagic);
  w.u32(kCvaeVersion);
  const CvaeConfig& c = model.config;
  w.u32(static_cast<uint32_t>(c.latent_dim));
  w.u32(static_cast<uint32_t>(c.hidden_prior));
  w.u32(static_cast<uint32_t>(c.hidden_recog));
  w.u32(static_cast<uint32_t>(c.hidden_gen));
  w.u32(static_cast<uint32_t>(c.minibatch));
  w.u32(static_cast<uint32_t>(c.epochs));
  w.f64(c.lr1);
  w.f64(c.lr_decay);
  w.u8(c.correspondence == CorrespondenceMode::ClassMean ? 1 : 0);
  w.u8(c.batch_norm ? 1 : 0);
  w.u64(c.seed);
  w.u32(static_cast<uint32_t>(model.feature_dim));
  w.u8(model.trained ? 1 : 0);
  const Eigen::Index d = model.feature_dim;
  w.f64_array(model.whitening.mean.data(), static_cast<size_t>(d));
  w.f64_array(model.whitening.transform.data(), static_cast<size_t>(d * d));
  w.f64_array(model.whitening.inverse.data(), static_cast<size_t>(d * d));
  w.u32(static_cast<uint32_t>(model.whitening.floored));
  nn::write_mlp(w, model.prior);
  nn::write_mlp(w, model.recog);
  nn::write_mlp(w, model.gen);
  w.u64(model.loss_history.size());
  if (!model.loss_history.empty())
    w.f64_array(model.loss_history.data(), model.loss_history.size());
  w.close();
}

CvaeModel load_cvae(const std::string& path) {
  BinaryReader r(path);
  r.expect_magic(kCvaeMagic, "cvae checkpoint");
  const uint32_t version = r.u32("version");
  if (version != kCvaeVersion)
    throw DataError("unsupported cvae checkpoint version " + std::to_string(version));
  CvaeModel model;
  CvaeConfig& c = model.config;
  c.latent_dim = static_cast<int>(r.u32("latent_dim"));
  c.hidden_prior = static_cast<int>(r.u32("hidden_prior"));
  c.hidden_recog = static_cast<int>(r.u32("hidden_recog"));
  c.hidden_gen = static_cast<int>(r.u32("hidden_gen"));
  c.minibatch = static_cast<int>(r.u32("minibatch"));
  c.epochs = static_cast<int>(r.u32("epochs"));
  c.lr1 = r.f64("lr1");
  c.lr_decay = r.f64("lr_decay");
  c.correspondence =
      r.u8("correspondence") ? CorrespondenceMode::ClassMean : CorrespondenceMode::RandomPerEpoch;
  c.batch_norm = r.u8("batch_norm") != 0;
  c.seed = r.u64("seed");
  model.feature_dim = static_cast<int>(r.u32("feature_dim"));
  model.trained = r.u8("trained") != 0;
  const Eigen::Index d = model.feature_dim;
  if (d < 2) throw DataError("cvae checkpoint: field 'feature_dim' must be at least 2");
  model.whitening.mean.resize(d);
  model.whitening.transform.resize(d, d);
  model.whitening.inverse.resize(d, d);
  r.f64_array(model.whitening.mean.data(), static_cast<size_t>(d), "whitening mean");
  r.f64_array(model.whitening.transform.data(), static_cast<size_t>(d * d), "whitening transform");
  r.f64_array(model.whitening.inverse.data(), static_cast<size_t>(d * d), "whitening inverse");
  model.whitening.floored = static_cast<int>(r.u32("whitening floored"));
  model.prior = nn::read_mlp(r);
  model.recog = nn::read_mlp(r);
  model.gen = nn::read_mlp(r);
  const uint64_t hist = r.u64("loss history length");
  model.loss_history.resize(hist);
  if (hist > 0) r.f64_array(model.loss_history.data(), hist, "loss history");
  if (!r.at_eof()) throw DataError("cvae checkpoint: trailing bytes");
  return model;
}

}  // namespace xsmap::cvae
