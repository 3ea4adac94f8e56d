#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "xsmap/harness.hpp"

using namespace xsmap;
using harness::ExperimentConfig;
using harness::ExperimentReport;

namespace {

std::string temp_base(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg = ExperimentConfig::desk_scale();
  cfg.synth.n_classes = 4;
  cfg.synth.n_channels = 2;
  cfg.synth.n_samples = 32;
  cfg.synth.n_trials_per_subject = 160;
  cfg.synth.noise_sigma = 0.5;
  cfg.repetitions = 2;
  cfg.n_train = 120;
  cfg.n_test = 40;
  cfg.cvae.latent_dim = 3;
  cfg.cvae.hidden_prior = 16;
  cfg.cvae.hidden_recog = 16;
  cfg.cvae.hidden_gen = 16;
  cfg.cvae.minibatch = 40;
  cfg.cvae.epochs = 8;
  cfg.decoder_mlp.hidden = 16;
  cfg.decoder_mlp.minibatch = 40;
  cfg.decoder_mlp.epochs = 10;
  cfg.master_seed = 42;
  return cfg;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("struct defaults follow the full-scale protocol") {
  const ExperimentConfig cfg;
  CHECK(cfg.repetitions == 100);
  CHECK(cfg.n_train == 1200);
  CHECK(cfg.n_test == 200);
  CHECK(cfg.cvae.latent_dim == 50);
  CHECK(cfg.cvae.hidden_prior == 350);
  CHECK(cfg.cvae.hidden_recog == 350);
  CHECK(cfg.cvae.hidden_gen == 350);
  CHECK(cfg.cvae.minibatch == 75);
  CHECK(cfg.cvae.lr1 == 0.125);
  CHECK(cfg.cvae.lr_decay == 0.99);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("a tiny experiment reports two repetitions with recomputable aggregates") {
  const ExperimentConfig cfg = tiny_config();
  const ExperimentReport report = harness::run_experiment(cfg);
  REQUIRE(report.repetitions.size() == 2);
  CHECK(report.failed_count() == 0);
  for (const auto& rep : report.repetitions) {
    CHECK(rep.disjoint);
    for (double acc : rep.accuracy) {
      CHECK(acc >= 0.0);
      CHECK(acc <= 1.0);
    }
  }
  for (const char* cond : harness::kConditions) {
    const std::vector<double> vals = report.condition_values(cond);
    REQUIRE(vals.size() == 2);
    const harness::ConditionStats s = report.condition_stats(cond);
    const double mean = (vals[0] + vals[1]) / 2.0;
    const double sd = std::sqrt((vals[0] - mean) * (vals[0] - mean) +
                                (vals[1] - mean) * (vals[1] - mean));
    CHECK(std::abs(s.mean - mean) < 1e-12);
    CHECK(std::abs(s.stddev - sd) < 1e-12);
  }
  // mapped_train and mapped_test are tracked separately.
  CHECK(harness::kConditions[4] != harness::kConditions[5]);
}

TEST_CASE("report emission round-trips through JSON and is reproducible") {
  const ExperimentConfig cfg = tiny_config();
  const ExperimentReport a = harness::run_experiment(cfg);
  const ExperimentReport b = harness::run_experiment(cfg);
  CHECK(a == b);

  const std::string base_a = temp_base("xsmap_report_a");
  const std::string base_b = temp_base("xsmap_report_b");
  const auto files_a = harness::emit_report(a, base_a, harness::ReportFormat::Json);
  const auto files_b = harness::emit_report(b, base_b, harness::ReportFormat::Json);
  REQUIRE(files_a.size() == 1);
  CHECK(slurp(files_a[0]) == slurp(files_b[0]));

  const ExperimentReport parsed = harness::parse_report_json(files_a[0]);
  CHECK(parsed == a);
  std::remove(files_a[0].c_str());
  std::remove(files_b[0].c_str());
}

TEST_CASE("CSV emission writes a summary and a long-form table") {
  const ExperimentConfig cfg = tiny_config();
  const ExperimentReport report = harness::run_experiment(cfg);
  const std::string base = temp_base("xsmap_report_csv");
  const auto files = harness::emit_report(report, base, harness::ReportFormat::Csv);
  REQUIRE(files.size() == 2);
  const std::string summary = slurp(files[0]);
  CHECK(summary.rfind("condition,mean_pct,std_pct\n", 0) == 0);
  CHECK(summary.find("mapped_test,") != std::string::npos);
  CHECK(summary.find("relative_gain_vs_direct") != std::string::npos);
  const std::string reps = slurp(files[1]);
  CHECK(reps.find("repetition,seed,failed,disjoint") == 0);
  CHECK(reps.find("mapped_test_pct") != std::string::npos);
  for (const auto& f : files) std::remove(f.c_str());
}

TEST_CASE("empty reports are rejected") {
  ExperimentReport report;
  report.config = tiny_config();
  CHECK_THROWS_AS(harness::emit_report(report, temp_base("xsmap_empty"), harness::ReportFormat::Json),
                  DataError);
}

TEST_CASE("config JSON round trip and partial overrides") {
  ExperimentConfig cfg = tiny_config();
  cfg.decoder_kind = harness::DecoderKind::Lda;
  cfg.map.generative = true;
  cfg.map.samples = 4;
  const ExperimentConfig back = harness::config_from_json(harness::config_to_json(cfg));
  CHECK(back == cfg);

  const std::string path = temp_base("xsmap_partial_config.json");
  {
    std::ofstream out(path);
    out << R"({"repetitions": 5, "cvae": {"epochs": 3}})";
  }
  const ExperimentConfig partial = harness::load_config_file(path);
  CHECK(partial.repetitions == 5);
  CHECK(partial.cvae.epochs == 3);
  CHECK(partial.n_train == 1200);  // untouched default
  std::remove(path.c_str());
}

TEST_CASE("an experiment aborts when too many repetitions fail") {
  // sigma = 0 makes every class cloud a single point; the LDA pooled
  // covariance is then singular at zero ridge and each repetition fails.
  ExperimentConfig cfg = tiny_config();
  cfg.synth.noise_sigma = 0.0;
  cfg.decoder_kind = harness::DecoderKind::Lda;
  cfg.lda_ridge = 0.0;
  CHECK_THROWS_AS(harness::run_experiment(cfg), DataError);
}

TEST_CASE("invalid configurations are rejected") {
  ExperimentConfig cfg = tiny_config();
  cfg.n_train = 1000;  // exceeds 160 trials
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.cvae.latent_dim = 50;  // >= D = 2*(2*3-1) = 10
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = tiny_config();
  cfg.source_trials = "only_one_side.bin";
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  CHECK_THROWS_AS(harness::config_from_json("{not json"), DataError);
}

}  // TEST_SUITE
