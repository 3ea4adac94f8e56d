#pragma once

#include <array>
#include <string>
#include <vector>

#include "xsmap/cvae.hpp"
#include "xsmap/decoder.hpp"
#include "xsmap/pinsker.hpp"
#include "xsmap/synth.hpp"

namespace xsmap::harness {

enum class DecoderKind { Mlp, Lda };
enum class ReportFormat { Csv, Json };

struct MapSpec {
  bool generative = false;
  int samples = 1;

  bool operator==(const MapSpec&) const = default;
};

// Full experiment description. Struct defaults follow the full-scale
// protocol (1200/200 splits, 100 repetitions, the published CVAE
// hyperparameters); desk_scale() is a small synthetic preset with the same
// structure.
struct ExperimentConfig {
  data::SynthConfig synth;
  std::string source_trials;  // optional input files; both set or both empty
  std::string dest_trials;
  pinsker::PinskerConfig pinsker{1.0, 0.0, 3};
  int repetitions = 100;
  int n_train = 1200;
  int n_test = 200;
  cvae::CvaeConfig cvae;
  decoder::MlpDecoderConfig decoder_mlp;
  double lda_ridge = 1e-6;
  DecoderKind decoder_kind = DecoderKind::Mlp;
  MapSpec map;
  uint64_t master_seed = 1;

  ExperimentConfig();

  static ExperimentConfig desk_scale();
  static ExperimentConfig full_scale();

  void validate() const;
};

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

inline constexpr std::array<const char*, 6> kConditions = {
    "dest_local_train", "dest_local_test", "src_local_test",
    "direct_test",      "mapped_train",    "mapped_test"};

struct RepetitionResult {
  int index = 0;
  uint64_t seed = 0;
  bool failed = false;
  std::string error;
  bool disjoint = false;  // audited train/test disjointness, both subjects
  // Accuracies in [0,1], in kConditions order.
  std::array<double, 6> accuracy{};

  bool operator==(const RepetitionResult&) const = default;
};

struct ConditionStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation
};

struct ExperimentReport {
  ExperimentConfig config;
  std::vector<RepetitionResult> repetitions;

  std::vector<double> condition_values(const std::string& condition) const;
  ConditionStats condition_stats(const std::string& condition) const;
  // Per-repetition relative gains of mapped_test in percent.
  std::vector<double> relative_gains_vs(const std::string& baseline_condition) const;
  int failed_count() const;
};

bool operator==(const ExperimentReport& a, const ExperimentReport& b);

// For each repetition: split both subjects, train the destination decoder,
// record local/direct accuracies, train the CVAE on the training halves and
// record mapped accuracies. Deterministic in the master seed; a failing
// repetition is recorded, and more than 10% failures aborts.
ExperimentReport run_experiment(const ExperimentConfig& cfg);

// Writes <base>.json, or <base>_summary.csv plus <base>_repetitions.csv.
// Returns the written paths. Accuracies in CSV are percentages with one
// decimal; JSON keeps full precision and round-trips exactly.
std::vector<std::string> emit_report(const ExperimentReport& report, const std::string& out_base,
                                     ReportFormat format);

ExperimentReport parse_report_json(const std::string& path);

std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig config_from_json(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

ConditionStats mean_std(const std::vector<double>& values);

}  // namespace xsmap::harness
