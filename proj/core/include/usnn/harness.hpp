#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "usnn/model_io.hpp"
#include "usnn/stacking.hpp"

namespace usnn {

struct DatasetSource {
  std::optional<std::string> path;
  std::optional<SyntheticSpec> synthetic;
  std::string label_column = "label";

  void validate() const;
  Dataset resolve() const;
};

struct UqSpec {
  UqKind kind = UqKind::mcd;
  int mcd_passes = 100;
  int ensemble_size = 30;
};

/// The repeated-split protocol, fully seeded: repetition r derives every
/// seed (split, architectures, inits, shuffles, dropout, stochastic passes)
/// from (master_seed, r), so reports are bit-identical across runs and
/// across thread counts.
struct ExperimentConfig {
  DatasetSource dataset;
  UqSpec uq;
  double tau = 0.1;  // threshold for single runs; also the sweep's tuning anchor
  std::vector<double> taus = {0.05, 0.1, 0.2, 0.3, 0.4};
  int repetitions = 30;
  std::pair<double, double> test_fraction_range = {0.20, 0.40};
  bool include_pe = true;
  bool append_mean_probs = false;
  bool standardize_meta_features = false;
  std::uint64_t master_seed = 1;
  TrainConfig base_train;
  TrainConfig meta_train;
  int arch_search_budget = 8;
  int tune_epochs = 12;
  bool retune_per_repetition = false;
  /// 0 = build the meta-train set from base predictions on the base model's
  /// own training data. A positive fraction carves that share out of
  /// D_train: the base model never trains on it and the meta set is built
  /// there instead.
  double meta_holdout_fraction = 0.0;

  MetaFeatureLayout layout() const {
    return {include_pe, append_mean_probs, standardize_meta_features};
  }
  void validate() const;
};

ExperimentConfig config_from_json_text(const std::string& text);
ExperimentConfig config_from_json_file(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

struct RepetitionResult {
  int index = 0;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;
  double base_f1 = 0.0;
  std::optional<double> base_auc;
  double meta_f1 = 0.0;
  std::optional<double> meta_auc;
  TrustConfusionMatrix matrix;
  TrustReport trust;
  std::optional<double> pe_mean_correct;
  std::optional<double> pe_mean_incorrect;
};

struct SkippedRepetition {
  int index = 0;
  std::string reason;
};

struct MetricSummary {
  double mean = 0.0;
  std::optional<double> stddev;  // sample (n-1); absent when count < 2
  int count = 0;
};

struct ExperimentReport {
  ExperimentConfig config;
  double tau = 0.1;
  std::vector<RepetitionResult> repetitions;
  std::vector<SkippedRepetition> skipped;
  std::map<std::string, MetricSummary> aggregate;
};

struct SweepReport {
  ExperimentConfig config;
  std::vector<ExperimentReport> per_tau;
};

struct AblationReport {
  ExperimentConfig config;
  ExperimentReport with_pe;
  ExperimentReport without_pe;
};

/// Budgeted random search standing in for an external tuner: samples
/// `budget` architectures from the 1..4 x [16,512] space, trains each
/// briefly on a 70/30 sub-split of `train`, returns the best validation F1
/// (ties -> first). `proto` supplies optimizer settings; its epoch count is
/// replaced by tune_epochs.
ArchSpec tune_architecture(const Dataset& train, int budget, std::uint64_t seed,
                           const TrainConfig& proto, int tune_epochs);

/// Same evaluation over an explicit candidate list.
ArchSpec tune_architecture_over(const Dataset& train,
                                const std::vector<ArchSpec>& candidates,
                                std::uint64_t seed, const TrainConfig& proto,
                                int tune_epochs);

ExperimentReport run_experiment(const ExperimentConfig& cfg, int threads = 1);

/// One report per tau, sharing split seeds and base-model training across
/// the sweep (paired design): the base tier does not depend on tau, so it is
/// computed once per repetition and reused.
SweepReport threshold_sweep(const ExperimentConfig& cfg,
                            const std::vector<double>& taus, int threads = 1);

/// Two arms sharing all seeds and splits, differing only in include_pe.
AblationReport ablation_pe(const ExperimentConfig& cfg, int threads = 1);

/// Trains one base tier + meta tier the same way repetition 0 of
/// run_experiment would, and packages it for standalone evaluation.
struct TrainedBundle {
  UsnnModel model;
  Dataset test_split;
  RepetitionResult metrics;
};
TrainedBundle train_usnn(const ExperimentConfig& cfg, int threads = 1);

enum class ReportFormat { json, csv };

void emit_report(const ExperimentReport& report, ReportFormat fmt,
                 const std::string& path);
void emit_report(const SweepReport& report, ReportFormat fmt,
                 const std::string& path);
void emit_report(const AblationReport& report, ReportFormat fmt,
                 const std::string& path);

/// Reads back any JSON emitted by emit_report; the "schema" field selects
/// the shape. Used by the CLI's `report` subcommand.
struct ParsedReport {
  std::optional<ExperimentReport> experiment;
  std::optional<SweepReport> sweep;
  std::optional<AblationReport> ablation;
};
ParsedReport parse_report_json(const std::string& path);

/// CSV re-emission of a parsed report (same rows as emit_report csv).
void report_json_to_csv(const std::string& json_path, const std::string& csv_path);

}  // namespace usnn
