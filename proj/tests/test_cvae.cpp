#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "xsmap/cvae.hpp"
#include "xsmap/pinsker.hpp"
#include "xsmap/synth.hpp"

using namespace xsmap;

namespace {

// Eq-style latent term evaluated straight from the formula; the independent
// algebraic route against the closed-form KL.
double latent_term(const Eigen::VectorXd& mu_r, const Eigen::VectorXd& var_r,
                   const Eigen::VectorXd& mu_p, const Eigen::VectorXd& var_p) {
  double acc = 0.0;
  for (Eigen::Index m = 0; m < mu_r.size(); ++m)
    acc += 1.0 + std::log(var_r(m) / var_p(m)) -
           (var_r(m) + (mu_r(m) - mu_p(m)) * (mu_r(m) - mu_p(m))) / var_p(m);
  return acc;
}

pinsker::FeatureMatrix desk_mini_features(uint64_t seed, double warp_gain, double sigma,
                                          bool destination) {
  data::SynthConfig cfg;
  cfg.n_classes = 4;
  cfg.n_channels = 2;
  cfg.n_samples = 32;
  cfg.noise_sigma = sigma;
  cfg.n_trials_per_subject = 240;
  cfg.template_harmonics = 2;
  cfg.transfer_warp_gain = warp_gain;
  cfg.seed = seed;
  const data::SyntheticPair pair = data::generate_synthetic_pair(cfg);
  return pinsker::extract_features(destination ? pair.destination : pair.source,
                                   pinsker::PinskerConfig{1.0, 0.0, 3});
}

cvae::CvaeConfig mini_cvae_config() {
  cvae::CvaeConfig cfg;
  cfg.latent_dim = 3;
  cfg.hidden_prior = 24;
  cfg.hidden_recog = 24;
  cfg.hidden_gen = 24;
  cfg.minibatch = 40;
  cfg.epochs = 40;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_SUITE("cvae") {

TEST_CASE("whitening of near-white data and round trip") {
  Rng rng(1);
  const Eigen::MatrixXd rows = rng.normal_matrix(2000, 4);
  const cvae::Whitening w = cvae::whiten_fit(rows);
  const Eigen::MatrixXd out = w.apply(rows);
  const Eigen::VectorXd mean = out.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 1e-10);
  const Eigen::MatrixXd cov =
      (out.rowwise() - mean.transpose()).transpose() * (out.rowwise() - mean.transpose()) /
      (out.rows() - 1.0);
  CHECK((cov - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
  CHECK((w.invert(out) - rows).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(w.floored == 0);
}

TEST_CASE("whitening floors rank-deficient directions") {
  Eigen::MatrixXd rows(2, 2);
  rows << 0.0, 0.0, 2.0, 2.0;
  const cvae::Whitening w = cvae::whiten_fit(rows);
  CHECK(w.floored == 1);
  const Eigen::MatrixXd back = w.invert(w.apply(rows));
  CHECK((back - rows).cwiseAbs().maxCoeff() < 1e-9);

  Rng rng(2);
  Eigen::MatrixXd with_constant = rng.normal_matrix(50, 3);
  with_constant.col(1).setConstant(7.0);
  const cvae::Whitening w2 = cvae::whiten_fit(with_constant);
  CHECK(w2.floored >= 1);
  CHECK(w2.apply(with_constant).allFinite());
}

TEST_CASE("closed-form KL basics") {
  Eigen::VectorXd zero = Eigen::VectorXd::Zero(3);
  Eigen::VectorXd one = Eigen::VectorXd::Ones(3);
  CHECK(cvae::gaussian_kl(zero, one, zero, one) == 0.0);
  Eigen::VectorXd shifted = Eigen::VectorXd::Ones(1);
  CHECK(cvae::gaussian_kl(shifted, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1),
                          Eigen::VectorXd::Ones(1)) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(cvae::gaussian_kl(zero, -one, zero, one), NumericError);
}

TEST_CASE("closed-form KL matches a Monte-Carlo estimate") {
  Rng rng(3);
  Eigen::VectorXd mu_r(3), mu_p(3), var_r(3), var_p(3);
  for (int i = 0; i < 3; ++i) {
    mu_r(i) = rng.normal();
    mu_p(i) = rng.normal();
    var_r(i) = 0.3 + rng.uniform();
    var_p(i) = 0.3 + rng.uniform();
  }
  const double closed = cvae::gaussian_kl(mu_r, var_r, mu_p, var_p);

  const int n = 1000000;
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < n; ++s) {
    double log_ratio = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double z = mu_r(i) + std::sqrt(var_r(i)) * rng.normal();
      const double lq = -0.5 * std::log(2.0 * M_PI * var_r(i)) -
                        (z - mu_r(i)) * (z - mu_r(i)) / (2.0 * var_r(i));
      const double lp = -0.5 * std::log(2.0 * M_PI * var_p(i)) -
                        (z - mu_p(i)) * (z - mu_p(i)) / (2.0 * var_p(i));
      log_ratio += lq - lp;
    }
    sum += log_ratio;
    sum_sq += log_ratio * log_ratio;
  }
  const double mc = sum / n;
  const double se = std::sqrt((sum_sq / n - mc * mc) / n);
  CHECK(std::abs(closed - mc) < 3.0 * se);
}

TEST_CASE("KL stays nonnegative and vanishes only at equality") {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd mu_r(2), mu_p(2), var_r(2), var_p(2);
    for (int i = 0; i < 2; ++i) {
      mu_r(i) = rng.normal();
      mu_p(i) = rng.normal();
      var_r(i) = 0.1 + rng.uniform();
      var_p(i) = 0.1 + rng.uniform();
    }
    CHECK(cvae::gaussian_kl(mu_r, var_r, mu_p, var_p) >= 0.0);
  }
  Eigen::VectorXd mu(2), var(2);
  mu << 0.3, -1.2;
  var << 0.7, 2.0;
  CHECK(cvae::gaussian_kl(mu, var, mu, var) == 0.0);
  Eigen::VectorXd mu2 = mu;
  mu2(0) += 1e-3;
  CHECK(cvae::gaussian_kl(mu, var, mu2, var) > 0.0);
}

TEST_CASE("the latent term equals minus twice the KL") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd mu_r(4), mu_p(4), var_r(4), var_p(4);
    for (int i = 0; i < 4; ++i) {
      mu_r(i) = 2.0 * rng.normal();
      mu_p(i) = 2.0 * rng.normal();
      var_r(i) = std::exp(rng.normal());
      var_p(i) = std::exp(rng.normal());
    }
    const double lhs = latent_term(mu_r, var_r, mu_p, var_p);
    const double rhs = -2.0 * cvae::gaussian_kl(mu_r, var_r, mu_p, var_p);
    CHECK(std::abs(lhs - rhs) < 1e-12 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("reparameterization") {
  Eigen::MatrixXd mu(1, 3), log_var(1, 3), eps(1, 3);
  mu << 1.0, -2.0, 0.5;
  log_var.setZero();
  eps.setZero();
  CHECK(cvae::reparam_sample(mu, log_var, eps) == mu);

  log_var.setConstant(-1e9);  // clamps to -10
  eps.setConstant(1.0);
  const Eigen::MatrixXd z = cvae::reparam_sample(mu, log_var, eps);
  for (int i = 0; i < 3; ++i)
    CHECK(z(0, i) == doctest::Approx(mu(0, i) + std::exp(-5.0)).epsilon(1e-12));

  log_var.setConstant(0.3);
  Rng rng(6);
  const Eigen::MatrixXd e = rng.normal_matrix(1, 3);
  const Eigen::MatrixXd base = cvae::reparam_sample(mu, log_var, e);
  const Eigen::MatrixXd shifted =
      cvae::reparam_sample((mu.array() + 2.5).matrix(), log_var, e);
  CHECK((shifted.array() - base.array() - 2.5).abs().maxCoeff() < 1e-12);
}

TEST_CASE("objective vanishes when every head is centered") {
  cvae::CvaeConfig cfg;
  cfg.latent_dim = 1;
  cfg.hidden_prior = 3;
  cfg.hidden_recog = 3;
  cfg.hidden_gen = 3;
  cfg.batch_norm = false;
  cfg.seed = 7;
  cvae::CvaeModel model = cvae::make_cvae(2, cfg);
  model.set_params(Eigen::VectorXd::Zero(model.param_count()));
  const Eigen::MatrixXd x = Rng(8).normal_matrix(4, 2);
  const Eigen::MatrixXd y = Eigen::MatrixXd::Zero(4, 2);
  const Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(4, 1);
  const cvae::ElboResult res = cvae::elbo_loss(model, x, y, eps, nn::Mode::Train);
  CHECK(std::abs(res.loss) < 1e-14);
}

TEST_CASE("elbo loss equals twice the KL when reconstruction is exact") {
  // Zero weights leave only the biases; pick head biases with distinct
  // prior/recognition statistics and a generator centered on Y = 0.
  cvae::CvaeConfig cfg;
  cfg.latent_dim = 2;
  cfg.hidden_prior = 3;
  cfg.hidden_recog = 3;
  cfg.hidden_gen = 3;
  cfg.batch_norm = false;
  cfg.seed = 9;
  cvae::CvaeModel model = cvae::make_cvae(3, cfg);
  Eigen::VectorXd flat = Eigen::VectorXd::Zero(model.param_count());
  model.set_params(flat);
  Eigen::VectorXd mu_p(2), lp(2), mu_r(2), lr(2);
  mu_p << 0.4, -0.3;
  lp << 0.2, -0.5;
  mu_r << -0.1, 0.8;
  lr << -0.2, 0.1;
  {
    auto& prior_out = model.prior.layers()[1];
    prior_out.bias << mu_p(0), mu_p(1), lp(0), lp(1);
    auto& recog_out = model.recog.layers()[1];
    recog_out.bias << mu_r(0), mu_r(1), lr(0), lr(1);
    // generator bias stays zero: mu_g = 0, log var_g = 0
  }
  const Eigen::MatrixXd x = Rng(10).normal_matrix(5, 3);
  const Eigen::MatrixXd y = Eigen::MatrixXd::Zero(5, 3);
  const Eigen::MatrixXd eps = Eigen::MatrixXd::Zero(5, 2);
  const cvae::ElboResult res = cvae::elbo_loss(model, x, y, eps, nn::Mode::Train);
  const double kl = cvae::gaussian_kl(mu_r, lr.array().exp(), mu_p, lp.array().exp());
  CHECK(res.loss == doctest::Approx(2.0 * kl).epsilon(1e-12));
}

TEST_CASE("finite differences confirm the elbo gradients") {
  cvae::CvaeConfig cfg;
  cfg.latent_dim = 2;
  cfg.hidden_prior = 5;
  cfg.hidden_recog = 4;
  cfg.hidden_gen = 6;
  cfg.batch_norm = false;
  cfg.seed = 11;
  cvae::CvaeModel model = cvae::make_cvae(4, cfg);
  Rng rng(12);
  const Eigen::MatrixXd x = rng.normal_matrix(6, 4);
  const Eigen::MatrixXd y = rng.normal_matrix(6, 4);
  const Eigen::MatrixXd eps = rng.normal_matrix(6, 2);
  auto loss_at = [&](const Eigen::VectorXd& p) {
    cvae::CvaeModel probe = model;
    probe.set_params(p);
    return cvae::elbo_loss(probe, x, y, eps, nn::Mode::Train).loss;
  };
  const cvae::ElboResult res = cvae::elbo_loss(model, x, y, eps, nn::Mode::Train);
  CHECK(nn::grad_check(loss_at, model.params(), res.grad, 1e-5) < 1e-5);
}

TEST_CASE("training on an identity task converges and maps near class means") {
  const pinsker::FeatureMatrix src = desk_mini_features(20, 0.0, 0.5, false);
  const pinsker::FeatureMatrix dst = desk_mini_features(20, 0.0, 0.5, true);
  const cvae::CvaeConfig cfg = mini_cvae_config();
  const cvae::CvaeModel model = cvae::train_cvae(src, dst, cfg);
  REQUIRE(model.trained);
  REQUIRE(static_cast<int>(model.loss_history.size()) == cfg.epochs);

  // Smoothed loss over the last ten epochs decreases.
  const auto& h = model.loss_history;
  auto smooth = [&](size_t i) { return (h[i] + h[i - 1] + h[i - 2]) / 3.0; };
  CHECK(smooth(h.size() - 1) < smooth(h.size() - 10));

  // Mapped class means land near the whitened destination class means.
  const Eigen::MatrixXd mapped = cvae::map_features(model, src.rows).whitened;
  const Eigen::MatrixXd dst_white = model.whitening.apply(dst.rows);
  Eigen::MatrixXd mapped_means = Eigen::MatrixXd::Zero(4, src.dim());
  Eigen::MatrixXd dest_means = Eigen::MatrixXd::Zero(4, src.dim());
  Eigen::VectorXd n_src = Eigen::VectorXd::Zero(4), n_dst = Eigen::VectorXd::Zero(4);
  for (Eigen::Index i = 0; i < src.count(); ++i) {
    mapped_means.row(src.labels[i] - 1) += mapped.row(i);
    n_src(src.labels[i] - 1) += 1.0;
  }
  for (Eigen::Index i = 0; i < dst.count(); ++i) {
    dest_means.row(dst.labels[i] - 1) += dst_white.row(i);
    n_dst(dst.labels[i] - 1) += 1.0;
  }
  for (int k = 0; k < 4; ++k) {
    mapped_means.row(k) /= n_src(k);
    dest_means.row(k) /= n_dst(k);
    CHECK((mapped_means.row(k) - dest_means.row(k)).norm() < 3.0);
  }
}

TEST_CASE("training with a zero learning rate leaves parameters at their init") {
  const pinsker::FeatureMatrix src = desk_mini_features(21, 0.5, 0.5, false);
  const pinsker::FeatureMatrix dst = desk_mini_features(21, 0.5, 0.5, true);
  cvae::CvaeConfig cfg = mini_cvae_config();
  cfg.epochs = 1;
  cfg.lr1 = 0.0;
  const cvae::CvaeModel trained = cvae::train_cvae(src, dst, cfg);
  const cvae::CvaeModel fresh = cvae::make_cvae(static_cast<int>(src.dim()), cfg);
  CHECK(trained.params() == fresh.params());
}

TEST_CASE("deterministic mapping is pure; generative mapping is seed-fixed") {
  const pinsker::FeatureMatrix src = desk_mini_features(22, 1.0, 0.5, false);
  const pinsker::FeatureMatrix dst = desk_mini_features(22, 1.0, 0.5, true);
  cvae::CvaeConfig cfg = mini_cvae_config();
  cfg.epochs = 5;
  const cvae::CvaeModel model = cvae::train_cvae(src, dst, cfg);
  const Eigen::MatrixXd probe = src.rows.topRows(10);

  const cvae::Mapped a = cvae::map_features(model, probe);
  const cvae::Mapped b = cvae::map_features(model, probe);
  CHECK(a.whitened == b.whitened);
  CHECK(a.restored == b.restored);

  cvae::MapOptions gen;
  gen.generative = true;
  gen.samples = 3;
  gen.seed = 77;
  const cvae::Mapped g1 = cvae::map_features(model, probe, gen);
  const cvae::Mapped g2 = cvae::map_features(model, probe, gen);
  CHECK(g1.whitened == g2.whitened);

  // Whitening round trip through the mapping output.
  CHECK((model.whitening.apply(a.restored) - a.whitened).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("non-finite head outputs are reported by name") {
  cvae::CvaeConfig cfg = mini_cvae_config();
  cfg.batch_norm = false;
  cvae::CvaeModel model = cvae::make_cvae(6, cfg);
  Eigen::VectorXd params = model.params();
  params.head(10).setConstant(1e308);  // overflow the prior head's affine
  model.set_params(params);
  Rng rng(30);
  const Eigen::MatrixXd x = rng.normal_matrix(4, 6);
  const Eigen::MatrixXd y = rng.normal_matrix(4, 6);
  const Eigen::MatrixXd eps = rng.normal_matrix(4, cfg.latent_dim);
  CHECK_THROWS_WITH_AS(cvae::elbo_loss(model, x, y, eps, nn::Mode::Train),
                       doctest::Contains("prior"), NumericError);
}

TEST_CASE("untrained models refuse to map") {
  cvae::CvaeConfig cfg = mini_cvae_config();
  cvae::CvaeModel model = cvae::make_cvae(10, cfg);
  CHECK_THROWS_AS(cvae::map_features(model, Eigen::MatrixXd::Zero(1, 10)), DataError);
}

TEST_CASE("latent bottleneck is enforced") {
  cvae::CvaeConfig cfg = mini_cvae_config();
  cfg.latent_dim = 10;
  CHECK_THROWS_AS(cvae::make_cvae(10, cfg), ConfigError);
  cfg.latent_dim = 12;
  CHECK_THROWS_AS(cvae::make_cvae(10, cfg), ConfigError);
}

TEST_CASE("checkpoint round trip preserves the model") {
  const pinsker::FeatureMatrix src = desk_mini_features(23, 1.0, 0.5, false);
  const pinsker::FeatureMatrix dst = desk_mini_features(23, 1.0, 0.5, true);
  cvae::CvaeConfig cfg = mini_cvae_config();
  cfg.epochs = 3;
  const cvae::CvaeModel model = cvae::train_cvae(src, dst, cfg);
  const std::string path =
      (std::filesystem::temp_directory_path() / "xsmap_cvae_rt.bin").string();
  cvae::save_cvae(path, model);
  const cvae::CvaeModel back = cvae::load_cvae(path);
  CHECK(back.config == model.config);
  CHECK(back.params() == model.params());
  CHECK(back.whitening.mean == model.whitening.mean);
  CHECK(back.whitening.transform == model.whitening.transform);
  CHECK(back.loss_history == model.loss_history);
  const Eigen::MatrixXd probe = src.rows.topRows(5);
  CHECK(cvae::map_features(back, probe).whitened == cvae::map_features(model, probe).whitened);
  std::remove(path.c_str());
}

}  // TEST_SUITE
