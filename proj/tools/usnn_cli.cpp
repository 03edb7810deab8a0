// usnn command-line front end: data synthesis, training, evaluation,
// threshold sweeps, PE ablations, and report conversion.
//
// Exit codes: 0 success, 1 usage error, 2 data/config error.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "usnn/harness.hpp"
#include "usnn/model_io.hpp"
#include "usnn/version.hpp"

namespace {

using namespace usnn;

struct ConfigCli {
  std::string config_path;
  // Flag overrides; unset optionals leave the config file value in place.
  std::optional<std::string> dataset_path;
  std::optional<std::string> label_column;
  std::optional<long long> synth_n, synth_d;
  std::optional<double> synth_balance, synth_separation;
  std::optional<std::uint64_t> synth_seed;
  std::optional<std::string> uq_setting;
  std::optional<int> mcd_passes, ensemble_size;
  std::optional<double> tau;
  std::optional<std::vector<double>> taus;
  std::optional<int> repetitions;
  std::optional<std::vector<double>> test_fraction_range;
  std::optional<bool> include_pe, append_mean_probs, standardize_meta_features;
  std::optional<std::uint64_t> master_seed;
  std::optional<int> base_epochs, base_batch_size;
  std::optional<double> base_learning_rate;
  std::optional<int> meta_epochs, meta_batch_size;
  std::optional<double> meta_learning_rate;
  std::optional<int> arch_search_budget, tune_epochs;
  std::optional<bool> retune_per_repetition;
  std::optional<double> meta_holdout_fraction;
};

// Registers the override flags shared by train/sweep/ablate. Names mirror the
// JSON config keys; the config file is authoritative and flags override it.
void add_config_options(CLI::App* cmd, ConfigCli& c) {
  cmd->add_option("--config", c.config_path, "Experiment config JSON file");
  cmd->add_option("--dataset.path", c.dataset_path, "Dataset CSV path");
  cmd->add_option("--dataset.label_column", c.label_column, "Label column name");
  cmd->add_option("--dataset.synthetic.n_samples", c.synth_n);
  cmd->add_option("--dataset.synthetic.n_features", c.synth_d);
  cmd->add_option("--dataset.synthetic.class_balance", c.synth_balance);
  cmd->add_option("--dataset.synthetic.separation", c.synth_separation);
  cmd->add_option("--dataset.synthetic.seed", c.synth_seed);
  cmd->add_option("--uq.setting", c.uq_setting, "mcd | ensemble | emcd");
  cmd->add_option("--uq.mcd_passes", c.mcd_passes);
  cmd->add_option("--uq.ensemble_size", c.ensemble_size);
  cmd->add_option("--tau", c.tau, "Confidence threshold for single runs");
  cmd->add_option("--taus", c.taus, "Sweep thresholds (strictly increasing)");
  cmd->add_option("--repetitions", c.repetitions);
  cmd->add_option("--test_fraction_range", c.test_fraction_range)->expected(2);
  cmd->add_option("--include_pe", c.include_pe);
  cmd->add_option("--append_mean_probs", c.append_mean_probs);
  cmd->add_option("--standardize_meta_features", c.standardize_meta_features);
  cmd->add_option("--master_seed", c.master_seed);
  cmd->add_option("--base_train.epochs", c.base_epochs);
  cmd->add_option("--base_train.batch_size", c.base_batch_size);
  cmd->add_option("--base_train.learning_rate", c.base_learning_rate);
  cmd->add_option("--meta_train.epochs", c.meta_epochs);
  cmd->add_option("--meta_train.batch_size", c.meta_batch_size);
  cmd->add_option("--meta_train.learning_rate", c.meta_learning_rate);
  cmd->add_option("--arch_search_budget", c.arch_search_budget);
  cmd->add_option("--tune_epochs", c.tune_epochs);
  cmd->add_option("--retune_per_repetition", c.retune_per_repetition);
  cmd->add_option("--meta_holdout_fraction", c.meta_holdout_fraction);
}

ExperimentConfig resolve_config(const ConfigCli& c) {
  ExperimentConfig cfg;
  if (!c.config_path.empty()) cfg = config_from_json_file(c.config_path);

  if (c.dataset_path) {
    cfg.dataset.path = *c.dataset_path;
    cfg.dataset.synthetic.reset();
  }
  if (c.label_column) cfg.dataset.label_column = *c.label_column;
  if (c.synth_n || c.synth_d || c.synth_balance || c.synth_separation ||
      c.synth_seed) {
    SyntheticSpec s = cfg.dataset.synthetic.value_or(SyntheticSpec{2000, 16});
    if (c.synth_n) s.n_samples = *c.synth_n;
    if (c.synth_d) s.n_features = *c.synth_d;
    if (c.synth_balance) s.class_balance = *c.synth_balance;
    if (c.synth_separation) s.separation = *c.synth_separation;
    if (c.synth_seed) s.seed = *c.synth_seed;
    cfg.dataset.synthetic = s;
    cfg.dataset.path.reset();
  }
  if (!cfg.dataset.path && !cfg.dataset.synthetic)
    throw Error("no dataset configured: pass --config or --dataset.* flags");
  if (c.uq_setting) cfg.uq.kind = uq_kind_from_string(*c.uq_setting);
  if (c.mcd_passes) cfg.uq.mcd_passes = *c.mcd_passes;
  if (c.ensemble_size) cfg.uq.ensemble_size = *c.ensemble_size;
  if (c.tau) cfg.tau = *c.tau;
  if (c.taus) cfg.taus = *c.taus;
  if (c.repetitions) cfg.repetitions = *c.repetitions;
  if (c.test_fraction_range)
    cfg.test_fraction_range = {(*c.test_fraction_range)[0],
                               (*c.test_fraction_range)[1]};
  if (c.include_pe) cfg.include_pe = *c.include_pe;
  if (c.append_mean_probs) cfg.append_mean_probs = *c.append_mean_probs;
  if (c.standardize_meta_features)
    cfg.standardize_meta_features = *c.standardize_meta_features;
  if (c.master_seed) cfg.master_seed = *c.master_seed;
  if (c.base_epochs) cfg.base_train.epochs = *c.base_epochs;
  if (c.base_batch_size) cfg.base_train.batch_size = *c.base_batch_size;
  if (c.base_learning_rate) cfg.base_train.learning_rate = *c.base_learning_rate;
  if (c.meta_epochs) cfg.meta_train.epochs = *c.meta_epochs;
  if (c.meta_batch_size) cfg.meta_train.batch_size = *c.meta_batch_size;
  if (c.meta_learning_rate) cfg.meta_train.learning_rate = *c.meta_learning_rate;
  if (c.arch_search_budget) cfg.arch_search_budget = *c.arch_search_budget;
  if (c.tune_epochs) cfg.tune_epochs = *c.tune_epochs;
  if (c.retune_per_repetition) cfg.retune_per_repetition = *c.retune_per_repetition;
  if (c.meta_holdout_fraction) cfg.meta_holdout_fraction = *c.meta_holdout_fraction;
  cfg.validate();
  return cfg;
}

void print_resolved(const ExperimentConfig& cfg) {
  std::cout << "resolved config:\n" << config_to_json(cfg) << "\n";
  std::cout << "master seed: " << cfg.master_seed << "\n";
}

void print_summary(const ExperimentReport& rep) {
  std::cout << "tau=" << rep.tau << "  repetitions=" << rep.repetitions.size()
            << "  skipped=" << rep.skipped.size() << "\n";
  for (const char* key : {"base_f1", "base_auc", "meta_f1", "meta_auc", "car",
                          "cpr", "tpr", "ftr", "rar", "mrr", "trr", "frr"}) {
    const auto it = rep.aggregate.find(key);
    if (it == rep.aggregate.end() || it->second.count == 0) continue;
    std::printf("  %-10s mean %.6f", key, it->second.mean);
    if (it->second.stddev) std::printf("  std %.6f", *it->second.stddev);
    std::printf("  (n=%d)\n", it->second.count);
  }
}

int cmd_synth(const SyntheticSpec& spec, const std::string& out_path) {
  std::cout << "synthetic spec: n_samples=" << spec.n_samples
            << " n_features=" << spec.n_features
            << " class_balance=" << spec.class_balance
            << " separation=" << spec.separation << "\n";
  std::cout << "master seed: " << spec.seed << "\n";
  const Dataset ds = make_synthetic(spec);
  write_dataset(ds, out_path);
  std::cout << "wrote " << ds.size() << " rows, " << ds.dim() + 1
            << " columns to " << out_path << "\n";
  return 0;
}

int cmd_train(const ConfigCli& c, const std::string& model_out,
              const std::string& test_out, int threads) {
  const ExperimentConfig cfg = resolve_config(c);
  print_resolved(cfg);
  const TrainedBundle bundle = train_usnn(cfg, threads);
  save_model(bundle.model, model_out);
  std::cout << "model written to " << model_out << "\n";
  if (!test_out.empty()) {
    write_dataset(bundle.test_split, test_out, cfg.dataset.label_column);
    std::cout << "held-out test split written to " << test_out << "\n";
  }
  std::cout << "held-out metrics: base_f1=" << bundle.metrics.base_f1
            << " meta_f1=" << bundle.metrics.meta_f1
            << " car=" << bundle.metrics.trust.car
            << " rar=" << bundle.metrics.trust.rar << "\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& data_path,
                 const std::string& label_column, const std::string& json_out) {
  const UsnnModel model = load_model(model_path);
  std::cout << "model: uq=" << to_string(model.base.kind)
            << " members=" << model.base.members.size()
            << " passes=" << model.base.passes << " tau=" << model.tau
            << " include_pe=" << (model.layout.include_pe ? "true" : "false")
            << "\n";
  std::cout << "master seed: " << model.base.seed << "\n";

  const Dataset test = load_dataset(data_path, label_column);
  const auto dists = predict(model.base, test.features);
  const auto preds = to_base_predictions(dists);
  const Matrix mx = assemble_meta_features(test.features, preds, model.layout,
                                           model.standardizer);
  const Matrix probs = forward(model.meta, mx, DropoutMode::disabled());

  const auto n = static_cast<std::size_t>(test.size());
  Labels base_labels(n), z_truth(n), z_pred(n);
  std::vector<double> base_scores(n), z_scores(n);
  std::vector<EvalRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    base_labels[i] = preds[i].predicted_label;
    base_scores[i] = preds[i].mean_probs(1);
    z_truth[i] = ground_truth_trust(preds[i].predicted_label, test.labels[i],
                                    preds[i].pe, model.tau);
    z_scores[i] = probs(static_cast<Eigen::Index>(i), 1);
    z_pred[i] = z_scores[i] >= 0.5 ? 1 : 0;
    records[i] = EvalRecord{test.labels[i], base_labels[i], preds[i].pe,
                            z_truth[i], z_pred[i]};
  }

  const TrustConfusionMatrix m = trust_confusion(records, model.tau);
  const TrustReport tr = trust_report(m);
  std::cout << "\n" << m.table() << "\n";
  std::cout << "trust report: " << tr.to_json() << "\n";
  std::cout << "base_f1=" << f1_score(test.labels, base_labels);
  try {
    std::cout << " base_auc=" << auc(test.labels, base_scores);
  } catch (const Error&) {
  }
  std::cout << " meta_f1=" << f1_score(z_truth, z_pred);
  try {
    std::cout << " meta_auc=" << auc(z_truth, z_scores);
  } catch (const Error&) {
  }
  std::cout << "\n";

  if (!json_out.empty()) {
    std::ofstream out(json_out);
    if (!out) throw Error("cannot write: " + json_out);
    out << "{\n  \"matrix\": " << m.to_json() << ",\n  \"report\": " << tr.to_json()
        << "\n}\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"uncertainty-aware stacked neural networks"};
  app.set_version_flag("--version", std::string("usnn ") + usnn::kVersion);
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic dataset CSV");
  usnn::SyntheticSpec spec;
  spec.n_samples = 2000;
  spec.n_features = 16;
  std::string synth_out;
  long long synth_n = 2000, synth_d = 16;
  synth->add_option("--n", synth_n, "Number of samples");
  synth->add_option("--d", synth_d, "Number of features");
  synth->add_option("--sep", spec.separation, "Class mean separation (in sigmas)");
  synth->add_option("--balance", spec.class_balance, "Fraction of positives");
  synth->add_option("--seed", spec.seed, "Generator seed");
  synth->add_option("--out", synth_out, "Output CSV path")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train base + meta tiers, save model JSON");
  ConfigCli train_cfg;
  std::string model_out, test_out;
  int train_threads = 1;
  add_config_options(train_cmd, train_cfg);
  train_cmd->add_option("--out", model_out, "Model JSON output path")->required();
  train_cmd->add_option("--test_out", test_out, "Write the held-out test split CSV");
  train_cmd->add_option("--threads", train_threads, "Worker threads");

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a saved model on a CSV");
  std::string eval_model, eval_data, eval_label = "label", eval_json;
  eval_cmd->add_option("--model", eval_model, "Model JSON path")->required();
  eval_cmd->add_option("--data", eval_data, "Test CSV path")->required();
  eval_cmd->add_option("--label_column", eval_label, "Label column name");
  eval_cmd->add_option("--json", eval_json, "Also write matrix+report JSON here");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Threshold sweep over taus");
  ConfigCli sweep_cfg;
  std::string sweep_out, sweep_csv;
  int sweep_threads = 1;
  add_config_options(sweep_cmd, sweep_cfg);
  sweep_cmd->add_option("--out", sweep_out, "Report JSON output path")->required();
  sweep_cmd->add_option("--csv", sweep_csv, "Also write a CSV report");
  sweep_cmd->add_option("--threads", sweep_threads, "Worker threads");

  // ablate
  auto* ablate_cmd = app.add_subcommand("ablate", "Paired with/without-PE ablation");
  ConfigCli ablate_cfg;
  std::string ablate_out, ablate_csv;
  int ablate_threads = 1;
  add_config_options(ablate_cmd, ablate_cfg);
  ablate_cmd->add_option("--out", ablate_out, "Report JSON output path")->required();
  ablate_cmd->add_option("--csv", ablate_csv, "Also write a CSV report");
  ablate_cmd->add_option("--threads", ablate_threads, "Worker threads");

  // report
  auto* report_cmd = app.add_subcommand("report", "Convert a JSON report to CSV");
  std::string report_in, report_out;
  report_cmd->add_option("--in", report_in, "Report JSON path")->required();
  report_cmd->add_option("--out", report_out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;  // help/version exit 0, any usage error exits 1
  }

  try {
    if (*synth) {
      spec.n_samples = synth_n;
      spec.n_features = synth_d;
      return cmd_synth(spec, synth_out);
    }
    if (*train_cmd) return cmd_train(train_cfg, model_out, test_out, train_threads);
    if (*eval_cmd) return cmd_evaluate(eval_model, eval_data, eval_label, eval_json);
    if (*sweep_cmd) {
      const usnn::ExperimentConfig cfg = resolve_config(sweep_cfg);
      print_resolved(cfg);
      const usnn::SweepReport rep = usnn::threshold_sweep(cfg, cfg.taus, sweep_threads);
      usnn::emit_report(rep, usnn::ReportFormat::json, sweep_out);
      if (!sweep_csv.empty())
        usnn::emit_report(rep, usnn::ReportFormat::csv, sweep_csv);
      for (const auto& r : rep.per_tau) print_summary(r);
      std::cout << "report written to " << sweep_out << "\n";
      return 0;
    }
    if (*ablate_cmd) {
      const usnn::ExperimentConfig cfg = resolve_config(ablate_cfg);
      print_resolved(cfg);
      const usnn::AblationReport rep = usnn::ablation_pe(cfg, ablate_threads);
      usnn::emit_report(rep, usnn::ReportFormat::json, ablate_out);
      if (!ablate_csv.empty())
        usnn::emit_report(rep, usnn::ReportFormat::csv, ablate_csv);
      std::cout << "== with_pe ==\n";
      print_summary(rep.with_pe);
      std::cout << "== without_pe ==\n";
      print_summary(rep.without_pe);
      std::cout << "report written to " << ablate_out << "\n";
      return 0;
    }
    if (*report_cmd) {
      usnn::report_json_to_csv(report_in, report_out);
      std::cout << "csv written to " << report_out << "\n";
      return 0;
    }
  } catch (const usnn::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
