// Command-line front end: dataset synthesis, feature extraction, model
// training, cross-subject mapping and the repeated-split experiment.

#include <cstdio>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "xsmap/harness.hpp"

namespace {

using namespace xsmap;

harness::MapSpec parse_map_spec(const std::string& text) {
  if (text == "det") return {};
  if (text.rfind("gen", 0) == 0) {
    harness::MapSpec spec;
    spec.generative = true;
    spec.samples = 1;
    if (text.size() > 3) {
      if (text[3] != ':') throw ConfigError("--map expects det or gen:S");
      try {
        spec.samples = std::stoi(text.substr(4));
      } catch (const std::exception&) {
        throw ConfigError("--map expects det or gen:S with integer S");
      }
    }
    if (spec.samples < 1) throw ConfigError("--map gen:S needs S >= 1");
    return spec;
  }
  throw ConfigError("--map expects det or gen:S");
}

pinsker::PinskerConfig parse_pinsker(int l_coeffs, double alpha, double mu) {
  pinsker::PinskerConfig cfg;
  cfg.alpha = alpha;
  if (mu > 0.0 && l_coeffs > 0)
    throw ConfigError("give either --l-coeffs or --mu, not both");
  if (mu > 0.0) {
    cfg.mu = mu;
    cfg.l_coeffs = 0;
  } else {
    cfg.l_coeffs = l_coeffs > 0 ? l_coeffs : 3;
  }
  return cfg;
}

int cmd_synth(const data::SynthConfig& synth, const std::string& out_base) {
  const data::SyntheticPair pair = data::generate_synthetic_pair(synth);
  data::write_trials(out_base + "_source.trials", pair.source);
  data::write_trials(out_base + "_dest.trials", pair.destination);
  std::printf("wrote %s_source.trials and %s_dest.trials (%d trials each)\n", out_base.c_str(),
              out_base.c_str(), synth.n_trials_per_subject);
  return 0;
}

int cmd_features(const std::string& in_path, const std::string& out_path,
                 const pinsker::PinskerConfig& cfg) {
  const data::TrialSet ts = data::read_trials(in_path);
  const pinsker::FeatureMatrix fm = pinsker::extract_features(ts, cfg);
  pinsker::write_features(out_path, fm);
  std::printf("wrote %s: %lld rows, D=%lld (L=%d)\n", out_path.c_str(),
              static_cast<long long>(fm.count()), static_cast<long long>(fm.dim()),
              cfg.effective_l());
  return 0;
}

int cmd_train_cvae(const std::string& src_path, const std::string& dst_path,
                   const std::string& out_path, const cvae::CvaeConfig& cfg) {
  const pinsker::FeatureMatrix src = pinsker::read_features(src_path);
  const pinsker::FeatureMatrix dst = pinsker::read_features(dst_path);
  const cvae::CvaeModel model = cvae::train_cvae(src, dst, cfg);
  cvae::save_cvae(out_path, model);
  std::printf("trained CVAE (D=%d, M=%d, %d epochs), final loss %.6f -> %s\n", model.feature_dim,
              cfg.latent_dim, cfg.epochs,
              model.loss_history.empty() ? 0.0 : model.loss_history.back(), out_path.c_str());
  return 0;
}

int cmd_train_decoder(const std::string& in_path, const std::string& out_path, bool use_lda,
                      const decoder::MlpDecoderConfig& cfg, double ridge) {
  const pinsker::FeatureMatrix fm = pinsker::read_features(in_path);
  const decoder::DecoderModel model =
      use_lda ? decoder::train_lda(fm, ridge) : decoder::train_mlp_decoder(fm, cfg);
  decoder::save_decoder(out_path, model);
  std::printf("trained %s decoder on %lld rows, training accuracy %.3f -> %s\n",
              use_lda ? "lda" : "mlp", static_cast<long long>(fm.count()),
              decoder::accuracy(model, fm), out_path.c_str());
  return 0;
}

int cmd_map(const std::string& model_path, const std::string& in_path,
            const std::string& out_path, const harness::MapSpec& spec, uint64_t seed,
            bool whitened) {
  const cvae::CvaeModel model = cvae::load_cvae(model_path);
  const pinsker::FeatureMatrix fm = pinsker::read_features(in_path);
  cvae::MapOptions opts;
  opts.generative = spec.generative;
  opts.samples = spec.samples;
  opts.seed = seed;
  const cvae::Mapped mapped = cvae::map_features(model, fm.rows, opts);
  pinsker::FeatureMatrix out;
  out.rows = whitened ? mapped.whitened : mapped.restored;
  out.labels = fm.labels;
  out.n_classes = fm.n_classes;
  pinsker::write_features(out_path, out);
  std::printf("mapped %lld rows (%s, %s space) -> %s\n", static_cast<long long>(fm.count()),
              spec.generative ? "generative" : "deterministic",
              whitened ? "whitened" : "restored", out_path.c_str());
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& in_path) {
  const decoder::DecoderModel model = decoder::load_decoder(model_path);
  const pinsker::FeatureMatrix fm = pinsker::read_features(in_path);
  std::printf("accuracy: %.4f (%lld rows)\n", decoder::accuracy(model, fm),
              static_cast<long long>(fm.count()));
  return 0;
}

int cmd_experiment(const harness::ExperimentConfig& cfg, const std::string& out_base,
                   harness::ReportFormat format) {
  const harness::ExperimentReport report = harness::run_experiment(cfg);
  for (const char* cond : harness::kConditions) {
    const harness::ConditionStats s = report.condition_stats(cond);
    std::printf("%-18s %5.1f +/- %.1f %%\n", cond, 100.0 * s.mean, 100.0 * s.stddev);
  }
  for (const char* base : {"src_local_test", "direct_test"}) {
    const harness::ConditionStats s = harness::mean_std(report.relative_gains_vs(base));
    std::printf("gain vs %-10s %5.1f +/- %.1f %%\n", base, s.mean, s.stddev);
  }
  if (report.failed_count() > 0)
    std::printf("failed repetitions: %d\n", report.failed_count());
  for (const std::string& path : harness::emit_report(report, out_base, format))
    std::printf("wrote %s\n", path.c_str());
  return 0;
}

// Gradient verification suite: quadratic sanity, plain and batch-norm MLPs,
// and the full objective with frozen reparameterization noise.
int cmd_gradcheck() {
  struct Check {
    const char* name;
    double err;
    double tol;
  };
  std::vector<Check> checks;

  {
    Eigen::VectorXd p(2);
    p << 3.0, -4.0;
    auto loss = [](const Eigen::VectorXd& q) { return 0.5 * q.squaredNorm(); };
    checks.push_back({"quadratic", nn::grad_check(loss, p, p, 1e-5), 1e-9});
  }
  {
    Rng rng(1);
    nn::Mlp mlp({{6, 16, nn::Activation::Relu, false}, {16, 4, nn::Activation::Identity, false}},
                rng);
    const Eigen::MatrixXd x = rng.normal_matrix(7, 6);
    auto loss = [&](const Eigen::VectorXd& p) {
      nn::Mlp probe = mlp;
      probe.set_params(p);
      return 0.5 * probe.forward(x, nn::Mode::Train).squaredNorm();
    };
    nn::Cache cache;
    const Eigen::MatrixXd y = mlp.forward(x, nn::Mode::Train, &cache);
    checks.push_back({"mlp", nn::grad_check(loss, mlp.params(), mlp.backward(cache, y), 1e-5),
                      1e-5});
  }
  {
    Rng rng(2);
    nn::Mlp mlp({{5, 8, nn::Activation::Relu, true}, {8, 3, nn::Activation::Identity, false}},
                rng);
    const Eigen::MatrixXd x = rng.normal_matrix(9, 5);
    auto loss = [&](const Eigen::VectorXd& p) {
      nn::Mlp probe = mlp;
      probe.set_params(p);
      return 0.5 * probe.forward(x, nn::Mode::Train).squaredNorm();
    };
    nn::Cache cache;
    const Eigen::MatrixXd y = mlp.forward(x, nn::Mode::Train, &cache);
    checks.push_back(
        {"mlp+batchnorm", nn::grad_check(loss, mlp.params(), mlp.backward(cache, y), 1e-5), 1e-5});
  }
  {
    cvae::CvaeConfig cfg;
    cfg.latent_dim = 3;
    cfg.hidden_prior = 8;
    cfg.hidden_recog = 7;
    cfg.hidden_gen = 9;
    cfg.batch_norm = false;
    cfg.seed = 3;
    cvae::CvaeModel model = cvae::make_cvae(5, cfg);
    Rng rng(4);
    const Eigen::MatrixXd x = rng.normal_matrix(8, 5);
    const Eigen::MatrixXd y = rng.normal_matrix(8, 5);
    const Eigen::MatrixXd eps = rng.normal_matrix(8, 3);
    auto loss = [&](const Eigen::VectorXd& p) {
      cvae::CvaeModel probe = model;
      probe.set_params(p);
      return cvae::elbo_loss(probe, x, y, eps, nn::Mode::Train).loss;
    };
    const cvae::ElboResult res = cvae::elbo_loss(model, x, y, eps, nn::Mode::Train);
    checks.push_back({"elbo", nn::grad_check(loss, model.params(), res.grad, 1e-5), 1e-5});
  }

  bool ok = true;
  for (const Check& c : checks) {
    const bool pass = c.err < c.tol;
    ok = ok && pass;
    std::printf("%-14s max rel err %.3e  (tol %.0e)  %s\n", c.name, c.err, c.tol,
                pass ? "PASS" : "FAIL");
  }
  if (!ok) throw NumericError("gradient verification failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-subject neural decoding with Pinsker features and a conditional VAE"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "Generate a paired-subject synthetic dataset");
  data::SynthConfig synth;
  std::string synth_out = "synthetic";
  synth_cmd->add_option("--classes", synth.n_classes, "Task classes K");
  synth_cmd->add_option("--channels", synth.n_channels, "Channels N");
  synth_cmd->add_option("--samples", synth.n_samples, "Samples per trial T");
  synth_cmd->add_option("--rate", synth.sample_rate_hz, "Sample rate in Hz");
  synth_cmd->add_option("--sigma", synth.noise_sigma, "Noise standard deviation");
  synth_cmd->add_option("--trials", synth.n_trials_per_subject, "Trials per subject");
  synth_cmd->add_option("--harmonics", synth.template_harmonics, "Template harmonics");
  synth_cmd->add_option("--warp-gain", synth.transfer_warp_gain, "Transfer warp strength");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--out", synth_out, "Output base path");

  // ---- features ----
  auto* feat_cmd = app.add_subcommand("features", "Extract Pinsker features from a trial file");
  std::string feat_in, feat_out = "features.bin";
  int feat_l = 0;
  double feat_alpha = 1.0, feat_mu = 0.0;
  feat_cmd->add_option("--in", feat_in, "Input trial file")->required();
  feat_cmd->add_option("--out", feat_out, "Output feature file");
  feat_cmd->add_option("--l-coeffs", feat_l, "Retained complex coefficients per channel");
  feat_cmd->add_option("--alpha", feat_alpha, "Smoothness parameter");
  feat_cmd->add_option("--mu", feat_mu, "Shrinkage threshold (alternative to --l-coeffs)");

  // ---- train-cvae ----
  auto* cvae_cmd = app.add_subcommand("train-cvae", "Train the cross-subject feature map");
  std::string cvae_src, cvae_dst, cvae_out = "cvae.model", cvae_mode = "classmean";
  cvae::CvaeConfig cvae_cfg = harness::ExperimentConfig::desk_scale().cvae;
  bool cvae_no_bn = false;
  cvae_cmd->add_option("--source", cvae_src, "Source-subject feature file")->required();
  cvae_cmd->add_option("--dest", cvae_dst, "Destination-subject feature file")->required();
  cvae_cmd->add_option("--out", cvae_out, "Output model path");
  cvae_cmd->add_option("--mode", cvae_mode, "Correspondence mode: classmean or random")
      ->check(CLI::IsMember({"classmean", "random"}));
  cvae_cmd->add_option("--latent", cvae_cfg.latent_dim, "Latent dimension M");
  cvae_cmd->add_option("--hidden", cvae_cfg.hidden_prior, "Hidden width for all heads");
  cvae_cmd->add_option("--minibatch", cvae_cfg.minibatch, "Minibatch size");
  cvae_cmd->add_option("--epochs", cvae_cfg.epochs, "Training epochs");
  cvae_cmd->add_option("--lr", cvae_cfg.lr1, "Initial learning rate");
  cvae_cmd->add_option("--lr-decay", cvae_cfg.lr_decay, "Per-epoch learning-rate decay");
  cvae_cmd->add_option("--seed", cvae_cfg.seed, "Training seed");
  cvae_cmd->add_flag("--no-batch-norm", cvae_no_bn, "Disable batch normalization");

  // ---- train-decoder ----
  auto* dec_cmd = app.add_subcommand("train-decoder", "Train a classifier on a feature file");
  std::string dec_in, dec_out = "decoder.model", dec_kind = "mlp";
  decoder::MlpDecoderConfig dec_cfg = harness::ExperimentConfig::desk_scale().decoder_mlp;
  double dec_ridge = 1e-6;
  dec_cmd->add_option("--in", dec_in, "Training feature file")->required();
  dec_cmd->add_option("--out", dec_out, "Output model path");
  dec_cmd->add_option("--decoder", dec_kind, "Decoder kind")
      ->check(CLI::IsMember({"mlp", "lda"}));
  dec_cmd->add_option("--hidden", dec_cfg.hidden, "Hidden width (mlp)");
  dec_cmd->add_option("--epochs", dec_cfg.epochs, "Training epochs (mlp)");
  dec_cmd->add_option("--minibatch", dec_cfg.minibatch, "Minibatch size (mlp)");
  dec_cmd->add_option("--seed", dec_cfg.seed, "Training seed (mlp)");
  dec_cmd->add_option("--ridge", dec_ridge, "Covariance ridge (lda)");

  // ---- map ----
  auto* map_cmd = app.add_subcommand("map", "Map source features through a trained CVAE");
  std::string map_model, map_in, map_out = "mapped.bin", map_mode = "det";
  uint64_t map_seed = 1;
  bool map_whitened = false;
  map_cmd->add_option("--model", map_model, "CVAE model path")->required();
  map_cmd->add_option("--in", map_in, "Input feature file")->required();
  map_cmd->add_option("--out", map_out, "Output feature file");
  map_cmd->add_option("--map", map_mode, "det or gen:S");
  map_cmd->add_option("--seed", map_seed, "Sampling seed for gen mode");
  map_cmd->add_flag("--whitened", map_whitened, "Emit whitened-space features");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a decoder on a feature file");
  std::string eval_model, eval_in;
  eval_cmd->add_option("--model", eval_model, "Decoder model path")->required();
  eval_cmd->add_option("--in", eval_in, "Feature file with labels")->required();

  // ---- experiment ----
  auto* exp_cmd = app.add_subcommand("experiment", "Run the repeated-split experiment");
  std::string exp_config, exp_out = "experiment", exp_format = "json", exp_mode, exp_map,
              exp_decoder;
  bool full_scale = false;
  uint64_t exp_seed = 0;
  int exp_reps = 0, exp_n_train = 0, exp_n_test = 0, exp_l = 0;
  double exp_alpha = 0.0, exp_mu = 0.0, exp_warp = -1.0, exp_sigma = -1.0;
  exp_cmd->add_option("--config", exp_config, "JSON config file (flags override)");
  exp_cmd->add_flag("--full-scale", full_scale, "Full-scale defaults (N=32, T=650, R=100)");
  exp_cmd->add_option("--seed", exp_seed, "Master seed");
  exp_cmd->add_option("--reps", exp_reps, "Repetitions");
  exp_cmd->add_option("--n-train", exp_n_train, "Training trials per split");
  exp_cmd->add_option("--n-test", exp_n_test, "Test trials per split");
  exp_cmd->add_option("--l-coeffs", exp_l, "Retained complex coefficients per channel");
  exp_cmd->add_option("--alpha", exp_alpha, "Smoothness parameter");
  exp_cmd->add_option("--mu", exp_mu, "Shrinkage threshold");
  exp_cmd->add_option("--warp-gain", exp_warp, "Synthetic transfer warp strength");
  exp_cmd->add_option("--sigma", exp_sigma, "Synthetic noise level");
  exp_cmd->add_option("--mode", exp_mode, "Correspondence mode: classmean or random")
      ->check(CLI::IsMember({"classmean", "random"}));
  exp_cmd->add_option("--map", exp_map, "Mapping mode: det or gen:S");
  exp_cmd->add_option("--decoder", exp_decoder, "Decoder kind: mlp or lda")
      ->check(CLI::IsMember({"mlp", "lda"}));
  exp_cmd->add_option("--out", exp_out, "Output base path");
  exp_cmd->add_option("--format", exp_format, "Report format")
      ->check(CLI::IsMember({"csv", "json"}));

  // ---- gradcheck ----
  app.add_subcommand("gradcheck", "Run the gradient verification suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth, synth_out);
    if (feat_cmd->parsed())
      return cmd_features(feat_in, feat_out, parse_pinsker(feat_l, feat_alpha, feat_mu));
    if (cvae_cmd->parsed()) {
      cvae_cfg.hidden_recog = cvae_cfg.hidden_gen = cvae_cfg.hidden_prior;
      cvae_cfg.batch_norm = !cvae_no_bn;
      cvae_cfg.correspondence = cvae_mode == "classmean" ? cvae::CorrespondenceMode::ClassMean
                                                         : cvae::CorrespondenceMode::RandomPerEpoch;
      return cmd_train_cvae(cvae_src, cvae_dst, cvae_out, cvae_cfg);
    }
    if (dec_cmd->parsed())
      return cmd_train_decoder(dec_in, dec_out, dec_kind == "lda", dec_cfg, dec_ridge);
    if (map_cmd->parsed())
      return cmd_map(map_model, map_in, map_out, parse_map_spec(map_mode), map_seed, map_whitened);
    if (eval_cmd->parsed()) return cmd_eval(eval_model, eval_in);
    if (exp_cmd->parsed()) {
      harness::ExperimentConfig cfg;
      if (!exp_config.empty())
        cfg = harness::load_config_file(exp_config);
      else if (full_scale)
        cfg = harness::ExperimentConfig::full_scale();
      else
        cfg = harness::ExperimentConfig::desk_scale();
      if (exp_cmd->count("--seed")) cfg.master_seed = exp_seed;
      if (exp_cmd->count("--reps")) cfg.repetitions = exp_reps;
      if (exp_cmd->count("--n-train")) cfg.n_train = exp_n_train;
      if (exp_cmd->count("--n-test")) cfg.n_test = exp_n_test;
      if (exp_cmd->count("--l-coeffs") || exp_cmd->count("--mu") || exp_cmd->count("--alpha")) {
        const double alpha = exp_cmd->count("--alpha") ? exp_alpha : cfg.pinsker.alpha;
        cfg.pinsker = parse_pinsker(exp_cmd->count("--l-coeffs") ? exp_l : 0, alpha,
                                    exp_cmd->count("--mu") ? exp_mu : 0.0);
      }
      if (exp_cmd->count("--warp-gain")) cfg.synth.transfer_warp_gain = exp_warp;
      if (exp_cmd->count("--sigma")) cfg.synth.noise_sigma = exp_sigma;
      if (!exp_mode.empty())
        cfg.cvae.correspondence = exp_mode == "classmean"
                                      ? cvae::CorrespondenceMode::ClassMean
                                      : cvae::CorrespondenceMode::RandomPerEpoch;
      if (!exp_map.empty()) cfg.map = parse_map_spec(exp_map);
      if (!exp_decoder.empty())
        cfg.decoder_kind =
            exp_decoder == "lda" ? harness::DecoderKind::Lda : harness::DecoderKind::Mlp;
      return cmd_experiment(cfg, exp_out, exp_format == "csv" ? harness::ReportFormat::Csv
                                                              : harness::ReportFormat::Json);
    }
    return cmd_gradcheck();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
