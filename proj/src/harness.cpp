#include "xsmap/harness.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace xsmap::harness {

using ordered_json = nlohmann::ordered_json;

ExperimentConfig::ExperimentConfig() {
  // Full-scale geometry so the published hyperparameters (M=50, H=350) are
  // consistent with D = N*(2L-1) out of the box.
  synth.n_channels = 32;
  synth.n_samples = 650;
}

ExperimentConfig ExperimentConfig::desk_scale() {
  ExperimentConfig cfg;
  cfg.synth = data::SynthConfig{};  // K=8, N=8, T=256, 1400 trials
  cfg.pinsker = pinsker::PinskerConfig{1.0, 0.0, 3};
  cfg.repetitions = 20;
  cfg.cvae.latent_dim = 16;
  cfg.cvae.hidden_prior = 256;
  cfg.cvae.hidden_recog = 256;
  cfg.cvae.hidden_gen = 256;
  cfg.cvae.epochs = 150;
  cfg.decoder_mlp.hidden = 320;
  cfg.decoder_mlp.epochs = 200;
  return cfg;
}

ExperimentConfig ExperimentConfig::full_scale() { return ExperimentConfig{}; }

void ExperimentConfig::validate() const {
  if (source_trials.empty() != dest_trials.empty())
    throw ConfigError("ExperimentConfig: source and destination trial files must be given together");
  if (source_trials.empty()) {
    synth.validate();
    if (n_train + n_test > synth.n_trials_per_subject)
      throw ConfigError("ExperimentConfig: n_train + n_test exceeds trials per subject");
    const int d = synth.n_channels * (2 * pinsker.effective_l() - 1);
    cvae.validate(d);
  }
  pinsker.validate();
  if (repetitions < 1) throw ConfigError("ExperimentConfig: repetitions must be positive");
  if (n_train < 1 || n_test < 1)
    throw ConfigError("ExperimentConfig: split sizes must be positive");
  decoder_mlp.validate();
  if (lda_ridge < 0.0) throw ConfigError("ExperimentConfig: lda_ridge must be nonnegative");
  if (map.samples < 1) throw ConfigError("ExperimentConfig: map samples must be positive");
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.synth == b.synth && a.source_trials == b.source_trials &&
         a.dest_trials == b.dest_trials && a.pinsker == b.pinsker &&
         a.repetitions == b.repetitions && a.n_train == b.n_train && a.n_test == b.n_test &&
         a.cvae == b.cvae && a.decoder_mlp == b.decoder_mlp && a.lda_ridge == b.lda_ridge &&
         a.decoder_kind == b.decoder_kind && a.map == b.map && a.master_seed == b.master_seed;
}

bool operator==(const ExperimentReport& a, const ExperimentReport& b) {
  return a.config == b.config && a.repetitions == b.repetitions;
}

ConditionStats mean_std(const std::vector<double>& values) {
  ConditionStats s;
  const size_t n = values.size();
  if (n == 0) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(n);
  if (n > 1) {
    double sq = 0.0;
    for (double v : values) sq += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(sq / static_cast<double>(n - 1));
  }
  return s;
}

namespace {

int condition_index(const std::string& condition) {
  for (size_t i = 0; i < kConditions.size(); ++i)
    if (condition == kConditions[i]) return static_cast<int>(i);
  throw ConfigError("unknown condition '" + condition + "'");
}

}  // namespace

std::vector<double> ExperimentReport::condition_values(const std::string& condition) const {
  const int idx = condition_index(condition);
  std::vector<double> out;
  out.reserve(repetitions.size());
  for (const RepetitionResult& r : repetitions)
    if (!r.failed) out.push_back(r.accuracy[static_cast<size_t>(idx)]);
  return out;
}

ConditionStats ExperimentReport::condition_stats(const std::string& condition) const {
  return mean_std(condition_values(condition));
}

std::vector<double> ExperimentReport::relative_gains_vs(const std::string& baseline) const {
  const int base_idx = condition_index(baseline);
  const int mapped_idx = condition_index("mapped_test");
  std::vector<double> out;
  for (const RepetitionResult& r : repetitions) {
    if (r.failed) continue;
    const double b = r.accuracy[static_cast<size_t>(base_idx)];
    if (b <= 0.0) continue;
    out.push_back(100.0 * (r.accuracy[static_cast<size_t>(mapped_idx)] - b) / b);
  }
  return out;
}

int ExperimentReport::failed_count() const {
  int n = 0;
  for (const RepetitionResult& r : repetitions) n += r.failed ? 1 : 0;
  return n;
}

namespace {

pinsker::FeatureMatrix with_whitening(const cvae::Whitening& w,
                                      const pinsker::FeatureMatrix& fm) {
  pinsker::FeatureMatrix out;
  out.rows = w.apply(fm.rows);
  out.labels = fm.labels;
  out.n_classes = fm.n_classes;
  return out;
}

bool disjoint_split(const data::Split& s) {
  for (int a : s.train_indices)
    for (int b : s.test_indices)
      if (a == b) return false;
  return true;
}

decoder::DecoderModel train_decoder(const ExperimentConfig& cfg,
                                    const pinsker::FeatureMatrix& fm, uint64_t seed) {
  if (cfg.decoder_kind == DecoderKind::Lda) return decoder::train_lda(fm, cfg.lda_ridge);
  decoder::MlpDecoderConfig dc = cfg.decoder_mlp;
  dc.seed = seed;
  return decoder::train_mlp_decoder(fm, dc);
}

void run_repetition(const ExperimentConfig& cfg, const data::TrialSet& src_ts,
                    const data::TrialSet& dst_ts, const pinsker::FeatureMatrix& src_fm,
                    const pinsker::FeatureMatrix& dst_fm, RepetitionResult& rr) {
  const data::Split src_split = data::split_trials(src_ts, cfg.n_train, cfg.n_test,
                                                   derive_seed(rr.seed, 1));
  const data::Split dst_split = data::split_trials(dst_ts, cfg.n_train, cfg.n_test,
                                                   derive_seed(rr.seed, 2));
  rr.disjoint = disjoint_split(src_split) && disjoint_split(dst_split);
  if (!rr.disjoint) throw DataError("repetition: train/test overlap detected");

  const pinsker::FeatureMatrix src_train = src_fm.select(src_split.train_indices);
  const pinsker::FeatureMatrix src_test = src_fm.select(src_split.test_indices);
  const pinsker::FeatureMatrix dst_train = dst_fm.select(dst_split.train_indices);
  const pinsker::FeatureMatrix dst_test = dst_fm.select(dst_split.test_indices);

  // Destination decoder in the whitened destination space; the same
  // transform the CVAE fits on the destination training features.
  const cvae::Whitening wht = cvae::whiten_fit(dst_train.rows);
  const decoder::DecoderModel dec_dst =
      train_decoder(cfg, with_whitening(wht, dst_train), derive_seed(rr.seed, 3));
  rr.accuracy[0] = decoder::accuracy(dec_dst, with_whitening(wht, dst_train));
  rr.accuracy[1] = decoder::accuracy(dec_dst, with_whitening(wht, dst_test));

  // Source-local decoder, reported only; it never feeds the mapping.
  const cvae::Whitening wht_src = cvae::whiten_fit(src_train.rows);
  const decoder::DecoderModel dec_src =
      train_decoder(cfg, with_whitening(wht_src, src_train), derive_seed(rr.seed, 4));
  rr.accuracy[2] = decoder::accuracy(dec_src, with_whitening(wht_src, src_test));

  // Direct cross-subject decoding: unmapped source features through the
  // destination decoder's preprocessing.
  rr.accuracy[3] = decoder::accuracy(dec_dst, with_whitening(wht, src_test));

  cvae::CvaeConfig cvae_cfg = cfg.cvae;
  cvae_cfg.seed = derive_seed(rr.seed, 5);
  const cvae::CvaeModel model = cvae::train_cvae(src_train, dst_train, cvae_cfg);

  cvae::MapOptions map_opts;
  map_opts.generative = cfg.map.generative;
  map_opts.samples = cfg.map.samples;
  map_opts.seed = derive_seed(rr.seed, 6);

  pinsker::FeatureMatrix mapped_train;
  mapped_train.rows = cvae::map_features(model, src_train.rows, map_opts).whitened;
  mapped_train.labels = src_train.labels;
  mapped_train.n_classes = src_train.n_classes;
  rr.accuracy[4] = decoder::accuracy(dec_dst, mapped_train);

  pinsker::FeatureMatrix mapped_test;
  mapped_test.rows = cvae::map_features(model, src_test.rows, map_opts).whitened;
  mapped_test.labels = src_test.labels;
  mapped_test.n_classes = src_test.n_classes;
  rr.accuracy[5] = decoder::accuracy(dec_dst, mapped_test);
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  data::TrialSet src_ts, dst_ts;
  if (cfg.source_trials.empty()) {
    data::SyntheticPair pair = data::generate_synthetic_pair(cfg.synth);
    src_ts = std::move(pair.source);
    dst_ts = std::move(pair.destination);
  } else {
    src_ts = data::read_trials(cfg.source_trials);
    dst_ts = data::read_trials(cfg.dest_trials);
  }
  if (cfg.n_train + cfg.n_test > static_cast<int>(src_ts.trials.size()) ||
      cfg.n_train + cfg.n_test > static_cast<int>(dst_ts.trials.size()))
    throw ConfigError("run_experiment: split sizes exceed available trials");

  const pinsker::FeatureMatrix src_fm = pinsker::extract_features(src_ts, cfg.pinsker);
  const pinsker::FeatureMatrix dst_fm = pinsker::extract_features(dst_ts, cfg.pinsker);
  cfg.cvae.validate(static_cast<int>(src_fm.dim()));

  ExperimentReport report;
  report.config = cfg;
  int failures = 0;
  for (int r = 0; r < cfg.repetitions; ++r) {
    RepetitionResult rr;
    rr.index = r;
    rr.seed = derive_seed(cfg.master_seed, 1000 + static_cast<uint64_t>(r));
    try {
      run_repetition(cfg, src_ts, dst_ts, src_fm, dst_fm, rr);
    } catch (const std::exception& e) {
      rr.failed = true;
      rr.error = e.what();
      ++failures;
    }
    report.repetitions.push_back(std::move(rr));
    if (10 * failures > cfg.repetitions)
      throw DataError("run_experiment: aborted, more than 10% of repetitions failed (last: " +
                      report.repetitions.back().error + ")");
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON serialization
// ---------------------------------------------------------------------------

namespace {

ordered_json synth_to_json(const data::SynthConfig& s) {
  return ordered_json{{"n_classes", s.n_classes},
                      {"n_channels", s.n_channels},
                      {"n_samples", s.n_samples},
                      {"sample_rate_hz", s.sample_rate_hz},
                      {"noise_sigma", s.noise_sigma},
                      {"n_trials_per_subject", s.n_trials_per_subject},
                      {"template_harmonics", s.template_harmonics},
                      {"transfer_warp_gain", s.transfer_warp_gain},
                      {"seed", s.seed}};
}

void synth_from_json(const ordered_json& j, data::SynthConfig& s) {
  s.n_classes = j.value("n_classes", s.n_classes);
  s.n_channels = j.value("n_channels", s.n_channels);
  s.n_samples = j.value("n_samples", s.n_samples);
  s.sample_rate_hz = j.value("sample_rate_hz", s.sample_rate_hz);
  s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
  s.n_trials_per_subject = j.value("n_trials_per_subject", s.n_trials_per_subject);
  s.template_harmonics = j.value("template_harmonics", s.template_harmonics);
  s.transfer_warp_gain = j.value("transfer_warp_gain", s.transfer_warp_gain);
  s.seed = j.value("seed", s.seed);
}

ordered_json cvae_to_json(const cvae::CvaeConfig& c) {
  return ordered_json{
      {"latent_dim", c.latent_dim},
      {"hidden_prior", c.hidden_prior},
      {"hidden_recog", c.hidden_recog},
      {"hidden_gen", c.hidden_gen},
      {"minibatch", c.minibatch},
      {"epochs", c.epochs},
      {"lr1", c.lr1},
      {"lr_decay", c.lr_decay},
      {"correspondence",
       c.correspondence == cvae::CorrespondenceMode::ClassMean ? "classmean" : "random"},
      {"batch_norm", c.batch_norm},
      {"seed", c.seed}};
}

void cvae_from_json(const ordered_json& j, cvae::CvaeConfig& c) {
  c.latent_dim = j.value("latent_dim", c.latent_dim);
  c.hidden_prior = j.value("hidden_prior", c.hidden_prior);
  c.hidden_recog = j.value("hidden_recog", c.hidden_recog);
  c.hidden_gen = j.value("hidden_gen", c.hidden_gen);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.epochs = j.value("epochs", c.epochs);
  c.lr1 = j.value("lr1", c.lr1);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  if (j.contains("correspondence")) {
    const std::string mode = j.at("correspondence").get<std::string>();
    if (mode == "classmean")
      c.correspondence = cvae::CorrespondenceMode::ClassMean;
    else if (mode == "random")
      c.correspondence = cvae::CorrespondenceMode::RandomPerEpoch;
    else
      throw ConfigError("config: correspondence must be 'classmean' or 'random'");
  }
  c.batch_norm = j.value("batch_norm", c.batch_norm);
  c.seed = j.value("seed", c.seed);
}

ordered_json config_to_json_obj(const ExperimentConfig& cfg) {
  ordered_json j;
  j["synth"] = synth_to_json(cfg.synth);
  j["source_trials"] = cfg.source_trials;
  j["dest_trials"] = cfg.dest_trials;
  j["pinsker"] = ordered_json{
      {"alpha", cfg.pinsker.alpha}, {"mu", cfg.pinsker.mu}, {"l_coeffs", cfg.pinsker.l_coeffs}};
  j["repetitions"] = cfg.repetitions;
  j["n_train"] = cfg.n_train;
  j["n_test"] = cfg.n_test;
  j["cvae"] = cvae_to_json(cfg.cvae);
  j["decoder"] = ordered_json{{"hidden", cfg.decoder_mlp.hidden},
                              {"batch_norm", cfg.decoder_mlp.batch_norm},
                              {"minibatch", cfg.decoder_mlp.minibatch},
                              {"epochs", cfg.decoder_mlp.epochs},
                              {"lr1", cfg.decoder_mlp.lr1},
                              {"lr_decay", cfg.decoder_mlp.lr_decay},
                              {"seed", cfg.decoder_mlp.seed}};
  j["lda_ridge"] = cfg.lda_ridge;
  j["decoder_kind"] = cfg.decoder_kind == DecoderKind::Mlp ? "mlp" : "lda";
  j["map"] = ordered_json{{"mode", cfg.map.generative ? "gen" : "det"},
                          {"samples", cfg.map.samples}};
  j["master_seed"] = cfg.master_seed;
  return j;
}

ExperimentConfig config_from_json_obj(const ordered_json& j) {
  ExperimentConfig cfg;
  if (j.contains("synth")) synth_from_json(j.at("synth"), cfg.synth);
  cfg.source_trials = j.value("source_trials", cfg.source_trials);
  cfg.dest_trials = j.value("dest_trials", cfg.dest_trials);
  if (j.contains("pinsker")) {
    const ordered_json& p = j.at("pinsker");
    cfg.pinsker.alpha = p.value("alpha", cfg.pinsker.alpha);
    cfg.pinsker.mu = p.value("mu", cfg.pinsker.mu);
    cfg.pinsker.l_coeffs = p.value("l_coeffs", cfg.pinsker.l_coeffs);
  }
  cfg.repetitions = j.value("repetitions", cfg.repetitions);
  cfg.n_train = j.value("n_train", cfg.n_train);
  cfg.n_test = j.value("n_test", cfg.n_test);
  if (j.contains("cvae")) cvae_from_json(j.at("cvae"), cfg.cvae);
  if (j.contains("decoder")) {
    const ordered_json& d = j.at("decoder");
    cfg.decoder_mlp.hidden = d.value("hidden", cfg.decoder_mlp.hidden);
    cfg.decoder_mlp.batch_norm = d.value("batch_norm", cfg.decoder_mlp.batch_norm);
    cfg.decoder_mlp.minibatch = d.value("minibatch", cfg.decoder_mlp.minibatch);
    cfg.decoder_mlp.epochs = d.value("epochs", cfg.decoder_mlp.epochs);
    cfg.decoder_mlp.lr1 = d.value("lr1", cfg.decoder_mlp.lr1);
    cfg.decoder_mlp.lr_decay = d.value("lr_decay", cfg.decoder_mlp.lr_decay);
    cfg.decoder_mlp.seed = d.value("seed", cfg.decoder_mlp.seed);
  }
  cfg.lda_ridge = j.value("lda_ridge", cfg.lda_ridge);
  if (j.contains("decoder_kind")) {
    const std::string kind = j.at("decoder_kind").get<std::string>();
    if (kind == "mlp")
      cfg.decoder_kind = DecoderKind::Mlp;
    else if (kind == "lda")
      cfg.decoder_kind = DecoderKind::Lda;
    else
      throw ConfigError("config: decoder_kind must be 'mlp' or 'lda'");
  }
  if (j.contains("map")) {
    const ordered_json& m = j.at("map");
    if (m.contains("mode")) {
      const std::string mode = m.at("mode").get<std::string>();
      if (mode == "det")
        cfg.map.generative = false;
      else if (mode == "gen")
        cfg.map.generative = true;
      else
        throw ConfigError("config: map mode must be 'det' or 'gen'");
    }
    cfg.map.samples = m.value("samples", cfg.map.samples);
  }
  cfg.master_seed = j.value("master_seed", cfg.master_seed);
  return cfg;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) {
  return config_to_json_obj(cfg).dump(2);
}

ExperimentConfig config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw DataError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json_obj(j);
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config file '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

namespace {

ordered_json report_to_json_obj(const ExperimentReport& report) {
  ordered_json j;
  j["config"] = config_to_json_obj(report.config);
  ordered_json reps = ordered_json::array();
  for (const RepetitionResult& r : report.repetitions) {
    ordered_json jr;
    jr["index"] = r.index;
    jr["seed"] = r.seed;
    jr["failed"] = r.failed;
    jr["error"] = r.error;
    jr["disjoint"] = r.disjoint;
    for (size_t c = 0; c < kConditions.size(); ++c) jr[kConditions[c]] = r.accuracy[c];
    reps.push_back(std::move(jr));
  }
  j["repetitions"] = std::move(reps);
  ordered_json agg;
  for (const char* cond : kConditions) {
    const ConditionStats s = report.condition_stats(cond);
    agg[cond] = ordered_json{{"mean", s.mean}, {"stddev", s.stddev}};
  }
  for (const char* base : {"src_local_test", "direct_test"}) {
    const ConditionStats s = mean_std(report.relative_gains_vs(base));
    agg[std::string("relative_gain_vs_") + base + "_pct"] =
        ordered_json{{"mean", s.mean}, {"stddev", s.stddev}};
  }
  j["aggregates"] = std::move(agg);
  j["failed_repetitions"] = report.failed_count();
  return j;
}

std::string pct(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", 100.0 * fraction);
  return buf;
}

std::string one_decimal(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.1f", v);
  return buf;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

}  // namespace

std::vector<std::string> emit_report(const ExperimentReport& report, const std::string& out_base,
                                     ReportFormat format) {
  if (report.repetitions.empty())
    throw DataError("emit_report: report has no repetitions");
  std::vector<std::string> written;
  if (format == ReportFormat::Json) {
    const std::string path = out_base + ".json";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << report_to_json_obj(report).dump(2) << "\n";
    if (!out) throw DataError("write to '" + path + "' failed");
    written.push_back(path);
    return written;
  }

  const std::string summary_path = out_base + "_summary.csv";
  {
    std::ofstream out(summary_path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + summary_path + "' for writing");
    out << "condition,mean_pct,std_pct\n";
    for (const char* cond : kConditions) {
      const ConditionStats s = report.condition_stats(cond);
      out << cond << "," << pct(s.mean) << "," << pct(s.stddev) << "\n";
    }
    for (const char* base : {"src_local_test", "direct_test"}) {
      const ConditionStats s = mean_std(report.relative_gains_vs(base));
      out << "relative_gain_vs_" << base << "," << one_decimal(s.mean) << ","
          << one_decimal(s.stddev) << "\n";
    }
    if (!out) throw DataError("write to '" + summary_path + "' failed");
  }
  written.push_back(summary_path);

  const std::string reps_path = out_base + "_repetitions.csv";
  {
    std::ofstream out(reps_path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + reps_path + "' for writing");
    out << "repetition,seed,failed,disjoint";
    for (const char* cond : kConditions) out << "," << cond << "_pct";
    out << ",error\n";
    for (const RepetitionResult& r : report.repetitions) {
      out << r.index << "," << r.seed << "," << (r.failed ? 1 : 0) << "," << (r.disjoint ? 1 : 0);
      for (size_t c = 0; c < kConditions.size(); ++c)
        out << "," << (r.failed ? std::string("") : pct(r.accuracy[c]));
      out << "," << csv_escape(r.error) << "\n";
    }
    if (!out) throw DataError("write to '" + reps_path + "' failed");
  }
  written.push_back(reps_path);
  return written;
}

ExperimentReport parse_report_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open report '" + path + "'");
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw DataError(std::string("report: invalid JSON: ") + e.what());
  }
  ExperimentReport report;
  report.config = config_from_json_obj(j.at("config"));
  for (const ordered_json& jr : j.at("repetitions")) {
    RepetitionResult r;
    r.index = jr.at("index").get<int>();
    r.seed = jr.at("seed").get<uint64_t>();
    r.failed = jr.at("failed").get<bool>();
    r.error = jr.at("error").get<std::string>();
    r.disjoint = jr.at("disjoint").get<bool>();
    for (size_t c = 0; c < kConditions.size(); ++c)
      r.accuracy[c] = jr.at(kConditions[c]).get<double>();
    report.repetitions.push_back(std::move(r));
  }
  return report;
}

}  // namespace xsmap::harness
