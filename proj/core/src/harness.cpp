#include "usnn/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "usnn/rng.hpp"

namespace usnn {

namespace {

using nlohmann::json;

enum HarnessStream : std::uint64_t {
  kRep = 1,
  kFraction = 2,
  kSplit = 3,
  kBaseArch = 4,
  kBaseInit = 5,
  kBaseShuffle = 6,
  kUqTrainSide = 7,
  kUqTestSide = 8,
  kMetaShuffle = 9,
  kBaseTune = 10,
  kMetaTune = 11,
  kMetaHoldout = 12,
  kTuneSample = 13,
  kTuneSplit = 14,
  kTuneInit = 15,
  kTuneShuffle = 16,
};

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

void DatasetSource::validate() const {
  if (path.has_value() == synthetic.has_value())
    throw Error("dataset source: exactly one of path/synthetic must be set");
  if (synthetic) synthetic->validate();
}

Dataset DatasetSource::resolve() const {
  validate();
  if (path) return load_dataset(*path, label_column);
  return make_synthetic(*synthetic);
}

void ExperimentConfig::validate() const {
  dataset.validate();
  if (uq.mcd_passes < 1) throw Error("config: mcd_passes must be positive");
  if (uq.ensemble_size < 1) throw Error("config: ensemble_size must be positive");
  if (!(tau > 0.0 && tau < 1.0)) throw Error("config: tau must be in (0,1)");
  if (taus.empty()) throw Error("config: taus must be non-empty");
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] > 0.0 && taus[i] < 1.0))
      throw Error("config: every tau must be in (0,1)");
    if (i > 0 && taus[i] <= taus[i - 1])
      throw Error("config: taus must be strictly increasing");
  }
  if (repetitions < 1) throw Error("config: repetitions must be positive");
  const auto [lo, hi] = test_fraction_range;
  if (!(lo > 0.0 && lo < 1.0 && hi > 0.0 && hi < 1.0 && lo <= hi))
    throw Error("config: test_fraction_range must be inside (0,1) with lo <= hi");
  base_train.validate();
  meta_train.validate();
  if (arch_search_budget < 1) throw Error("config: arch_search_budget must be positive");
  if (tune_epochs < 1) throw Error("config: tune_epochs must be positive");
  if (!(meta_holdout_fraction >= 0.0 && meta_holdout_fraction < 1.0))
    throw Error("config: meta_holdout_fraction must be in [0,1)");
}

namespace {

json train_config_to_json(const TrainConfig& t) {
  json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["optimizer"] = t.optimizer == Optimizer::adam ? "adam" : "sgd";
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_epsilon"] = t.adam_epsilon;
  if (t.early_stop) {
    j["early_stop"]["patience"] = t.early_stop->patience;
    j["early_stop"]["validation_fraction"] = t.early_stop->validation_fraction;
  } else {
    j["early_stop"] = nullptr;
  }
  return j;
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed)
      if (it.key() == a) {
        ok = true;
        break;
      }
    if (!ok) throw Error("config: unknown key \"" + it.key() + "\" in " + where);
  }
}

TrainConfig train_config_from_json(const json& j, const std::string& where) {
  check_keys(j,
             {"epochs", "batch_size", "learning_rate", "optimizer", "adam_beta1",
              "adam_beta2", "adam_epsilon", "early_stop"},
             where);
  TrainConfig t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  if (j.contains("optimizer")) {
    const std::string o = j.at("optimizer").get<std::string>();
    if (o == "adam")
      t.optimizer = Optimizer::adam;
    else if (o == "sgd")
      t.optimizer = Optimizer::sgd;
    else
      throw Error("config: unknown optimizer \"" + o + "\"");
  }
  t.adam_beta1 = j.value("adam_beta1", t.adam_beta1);
  t.adam_beta2 = j.value("adam_beta2", t.adam_beta2);
  t.adam_epsilon = j.value("adam_epsilon", t.adam_epsilon);
  if (j.contains("early_stop") && !j.at("early_stop").is_null()) {
    EarlyStop es;
    es.patience = j.at("early_stop").value("patience", es.patience);
    es.validation_fraction =
        j.at("early_stop").value("validation_fraction", es.validation_fraction);
    t.early_stop = es;
  }
  return t;
}

json config_to_json_obj(const ExperimentConfig& cfg) {
  json j;
  if (cfg.dataset.path) {
    j["dataset"]["path"] = *cfg.dataset.path;
    j["dataset"]["label_column"] = cfg.dataset.label_column;
  } else {
    const auto& s = *cfg.dataset.synthetic;
    j["dataset"]["synthetic"]["n_samples"] = s.n_samples;
    j["dataset"]["synthetic"]["n_features"] = s.n_features;
    j["dataset"]["synthetic"]["class_balance"] = s.class_balance;
    j["dataset"]["synthetic"]["separation"] = s.separation;
    j["dataset"]["synthetic"]["seed"] = s.seed;
  }
  j["uq"]["setting"] = to_string(cfg.uq.kind);
  j["uq"]["mcd_passes"] = cfg.uq.mcd_passes;
  j["uq"]["ensemble_size"] = cfg.uq.ensemble_size;
  j["tau"] = cfg.tau;
  j["taus"] = cfg.taus;
  j["repetitions"] = cfg.repetitions;
  j["test_fraction_range"] = {cfg.test_fraction_range.first,
                              cfg.test_fraction_range.second};
  j["include_pe"] = cfg.include_pe;
  j["append_mean_probs"] = cfg.append_mean_probs;
  j["standardize_meta_features"] = cfg.standardize_meta_features;
  j["master_seed"] = cfg.master_seed;
  j["base_train"] = train_config_to_json(cfg.base_train);
  j["meta_train"] = train_config_to_json(cfg.meta_train);
  j["arch_search_budget"] = cfg.arch_search_budget;
  j["tune_epochs"] = cfg.tune_epochs;
  j["retune_per_repetition"] = cfg.retune_per_repetition;
  j["meta_holdout_fraction"] = cfg.meta_holdout_fraction;
  return j;
}

ExperimentConfig config_from_json_obj(const json& j) {
  check_keys(j,
             {"dataset", "uq", "tau", "taus", "repetitions", "test_fraction_range",
              "include_pe", "append_mean_probs", "standardize_meta_features",
              "master_seed", "base_train", "meta_train", "arch_search_budget",
              "tune_epochs", "retune_per_repetition", "meta_holdout_fraction"},
             "config");
  ExperimentConfig cfg;
  if (!j.contains("dataset")) throw Error("config: missing \"dataset\"");
  const json& d = j.at("dataset");
  check_keys(d, {"path", "label_column", "synthetic"}, "dataset");
  if (d.contains("path")) {
    cfg.dataset.path = d.at("path").get<std::string>();
    cfg.dataset.label_column = d.value("label_column", std::string("label"));
  } else if (d.contains("synthetic")) {
    const json& s = d.at("synthetic");
    check_keys(s, {"n_samples", "n_features", "class_balance", "separation", "seed"},
               "dataset.synthetic");
    SyntheticSpec spec;
    spec.n_samples = s.value("n_samples", Eigen::Index{2000});
    spec.n_features = s.value("n_features", Eigen::Index{16});
    spec.class_balance = s.value("class_balance", 0.5);
    spec.separation = s.value("separation", 2.0);
    spec.seed = s.value("seed", std::uint64_t{7});
    cfg.dataset.synthetic = spec;
  } else {
    throw Error("config: dataset needs \"path\" or \"synthetic\"");
  }
  if (j.contains("uq")) {
    const json& u = j.at("uq");
    check_keys(u, {"setting", "mcd_passes", "ensemble_size"}, "uq");
    if (u.contains("setting"))
      cfg.uq.kind = uq_kind_from_string(u.at("setting").get<std::string>());
    cfg.uq.mcd_passes = u.value("mcd_passes", cfg.uq.mcd_passes);
    cfg.uq.ensemble_size = u.value("ensemble_size", cfg.uq.ensemble_size);
  }
  cfg.tau = j.value("tau", cfg.tau);
  if (j.contains("taus")) cfg.taus = j.at("taus").get<std::vector<double>>();
  cfg.repetitions = j.value("repetitions", cfg.repetitions);
  if (j.contains("test_fraction_range")) {
    const auto v = j.at("test_fraction_range").get<std::vector<double>>();
    if (v.size() != 2) throw Error("config: test_fraction_range needs two values");
    cfg.test_fraction_range = {v[0], v[1]};
  }
  cfg.include_pe = j.value("include_pe", cfg.include_pe);
  cfg.append_mean_probs = j.value("append_mean_probs", cfg.append_mean_probs);
  cfg.standardize_meta_features =
      j.value("standardize_meta_features", cfg.standardize_meta_features);
  cfg.master_seed = j.value("master_seed", cfg.master_seed);
  if (j.contains("base_train"))
    cfg.base_train = train_config_from_json(j.at("base_train"), "base_train");
  if (j.contains("meta_train"))
    cfg.meta_train = train_config_from_json(j.at("meta_train"), "meta_train");
  cfg.arch_search_budget = j.value("arch_search_budget", cfg.arch_search_budget);
  cfg.tune_epochs = j.value("tune_epochs", cfg.tune_epochs);
  cfg.retune_per_repetition =
      j.value("retune_per_repetition", cfg.retune_per_repetition);
  cfg.meta_holdout_fraction =
      j.value("meta_holdout_fraction", cfg.meta_holdout_fraction);
  cfg.validate();
  return cfg;
}

json parse_json(const std::string& text, const std::string& what) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error("invalid JSON in " + what);
  return j;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
  return config_from_json_obj(parse_json(text, "config"));
}

ExperimentConfig config_from_json_file(const std::string& path) {
  return config_from_json_obj(parse_json(read_file(path), path));
}

std::string config_to_json(const ExperimentConfig& cfg) {
  return config_to_json_obj(cfg).dump(2);
}

// ---------------------------------------------------------------------------
// architecture search
// ---------------------------------------------------------------------------

ArchSpec tune_architecture_over(const Dataset& train,
                                const std::vector<ArchSpec>& candidates,
                                std::uint64_t seed, const TrainConfig& proto,
                                int tune_epochs) {
  if (candidates.empty()) throw Error("tune: no candidate architectures");
  const SplitPair sub =
      stratified_split(train, 0.30, rng::derive(seed, {kTuneSplit}));
  const ClassWeights weights = class_weights(sub.train.labels);

  double best_f1 = -1.0;
  std::size_t best = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (candidates[i].input_dim != train.dim())
      throw Error("tune: candidate input_dim mismatch");
    TrainConfig cfg = proto;
    cfg.epochs = tune_epochs;
    cfg.class_weights = weights;
    cfg.shuffle_seed = rng::derive(seed, {kTuneShuffle, i});
    Network net = init_network(candidates[i], rng::derive(seed, {kTuneInit, i}));
    net = usnn::train(std::move(net), sub.train, cfg);

    const Matrix probs = forward(net, sub.test.features, DropoutMode::disabled());
    Labels preds(static_cast<std::size_t>(probs.rows()));
    for (Eigen::Index r = 0; r < probs.rows(); ++r)
      preds[static_cast<std::size_t>(r)] = probs(r, 0) >= probs(r, 1) ? 0 : 1;
    const double f1 = f1_score(sub.test.labels, preds);
    if (f1 > best_f1) {
      best_f1 = f1;
      best = i;
    }
  }
  return candidates[best];
}

ArchSpec tune_architecture(const Dataset& train, int budget, std::uint64_t seed,
                           const TrainConfig& proto, int tune_epochs) {
  if (budget < 1) throw Error("tune: budget must be positive");
  std::vector<ArchSpec> candidates;
  candidates.reserve(static_cast<std::size_t>(budget));
  for (int i = 0; i < budget; ++i)
    candidates.push_back(sample_architecture(
        rng::derive(seed, {kTuneSample, static_cast<std::uint64_t>(i)}),
        static_cast<int>(train.dim())));
  return tune_architecture_over(train, candidates, seed, proto, tune_epochs);
}

// ---------------------------------------------------------------------------
// per-repetition pipeline
// ---------------------------------------------------------------------------

namespace {

struct BaseArtifacts {
  int index = 0;
  std::uint64_t rep_seed = 0;
  SplitPair split;
  Matrix meta_feature_src;  // rows the meta set is built from
  Labels meta_truths;
  std::vector<BasePrediction> meta_preds;
  std::vector<BasePrediction> test_preds;
  UqSetting setting;  // trained members, test-side seed
  double test_fraction = 0.0;
  double base_f1 = 0.0;
  std::optional<double> base_auc;
  std::optional<double> pe_mean_correct;
  std::optional<double> pe_mean_incorrect;
};

BaseArtifacts build_base(const ExperimentConfig& cfg, const Dataset& ds, int r,
                         const std::optional<ArchSpec>& mcd_arch) {
  BaseArtifacts art;
  art.index = r;
  art.rep_seed = rng::derive(cfg.master_seed, {kRep, static_cast<std::uint64_t>(r)});

  rng::Engine frac_eng(rng::derive(art.rep_seed, {kFraction}));
  art.test_fraction = frac_eng.uniform(cfg.test_fraction_range.first,
                                       cfg.test_fraction_range.second);
  art.split =
      stratified_split(ds, art.test_fraction, rng::derive(art.rep_seed, {kSplit}));

  const Dataset* base_fit = &art.split.train;
  Dataset holdout_fit, holdout_meta;
  if (cfg.meta_holdout_fraction > 0.0) {
    SplitPair hs = stratified_split(art.split.train, cfg.meta_holdout_fraction,
                                    rng::derive(art.rep_seed, {kMetaHoldout}));
    holdout_fit = std::move(hs.train);
    holdout_meta = std::move(hs.test);
    base_fit = &holdout_fit;
    art.meta_feature_src = holdout_meta.features;
    art.meta_truths = holdout_meta.labels;
  } else {
    art.meta_feature_src = art.split.train.features;
    art.meta_truths = art.split.train.labels;
  }

  const ClassWeights weights = class_weights(base_fit->labels);
  const int d = static_cast<int>(ds.dim());
  const int n_members = cfg.uq.kind == UqKind::mcd ? 1 : cfg.uq.ensemble_size;

  art.setting.kind = cfg.uq.kind;
  art.setting.passes = cfg.uq.mcd_passes;
  for (int n = 0; n < n_members; ++n) {
    ArchSpec arch;
    if (cfg.uq.kind == UqKind::mcd) {
      arch = *mcd_arch;
    } else {
      arch = sample_architecture(
          rng::derive(art.rep_seed, {kBaseArch, static_cast<std::uint64_t>(n)}), d);
    }
    TrainConfig tc = cfg.base_train;
    tc.class_weights = weights;
    tc.shuffle_seed =
        rng::derive(art.rep_seed, {kBaseShuffle, static_cast<std::uint64_t>(n)});
    Network net = init_network(
        arch, rng::derive(art.rep_seed, {kBaseInit, static_cast<std::uint64_t>(n)}));
    art.setting.members.push_back(usnn::train(std::move(net), *base_fit, tc));
  }

  UqSetting train_side = art.setting;
  train_side.seed = rng::derive(art.rep_seed, {kUqTrainSide});
  art.meta_preds = to_base_predictions(predict(train_side, art.meta_feature_src));

  art.setting.seed = rng::derive(art.rep_seed, {kUqTestSide});
  art.test_preds = to_base_predictions(predict(art.setting, art.split.test.features));

  Labels pred_labels;
  std::vector<double> scores;
  pred_labels.reserve(art.test_preds.size());
  scores.reserve(art.test_preds.size());
  for (const auto& p : art.test_preds) {
    pred_labels.push_back(p.predicted_label);
    scores.push_back(p.mean_probs(1));
  }
  art.base_f1 = f1_score(art.split.test.labels, pred_labels);
  try {
    art.base_auc = auc(art.split.test.labels, scores);
  } catch (const Error&) {
    art.base_auc.reset();
  }

  double pe_ok = 0.0, pe_bad = 0.0;
  std::int64_t n_ok = 0, n_bad = 0;
  for (std::size_t i = 0; i < art.test_preds.size(); ++i) {
    if (art.test_preds[i].predicted_label == art.split.test.labels[i]) {
      pe_ok += art.test_preds[i].pe;
      ++n_ok;
    } else {
      pe_bad += art.test_preds[i].pe;
      ++n_bad;
    }
  }
  if (n_ok > 0) art.pe_mean_correct = pe_ok / static_cast<double>(n_ok);
  if (n_bad > 0) art.pe_mean_incorrect = pe_bad / static_cast<double>(n_bad);
  return art;
}

struct StageOutcome {
  std::optional<RepetitionResult> result;
  std::optional<SkippedRepetition> skipped;
  std::optional<Network> meta;              // for train_usnn
  std::optional<Standardizer> standardizer;
};

StageOutcome meta_stage(const ExperimentConfig& cfg, const BaseArtifacts& art,
                        double tau, const MetaFeatureLayout& layout,
                        const ArchSpec& meta_arch) {
  StageOutcome out;
  const MetaDataset meta_ds = build_meta_dataset(
      art.meta_feature_src, art.meta_preds, art.meta_truths, tau, layout);

  std::size_t ones = 0;
  for (const auto& rec : meta_ds.records) ones += static_cast<std::size_t>(rec.z);
  if (ones == 0 || ones == meta_ds.records.size()) {
    out.skipped = SkippedRepetition{
        art.index, "degenerate meta labels: every z is " +
                       std::string(ones == 0 ? "0" : "1") + " at tau=" +
                       format_double(tau)};
    return out;
  }

  TrainConfig mc = cfg.meta_train;
  mc.shuffle_seed = rng::derive(art.rep_seed, {kMetaShuffle});
  const Network meta = train_meta(meta_ds, mc, meta_arch);

  const Matrix mx = assemble_meta_features(art.split.test.features, art.test_preds,
                                           layout, meta_ds.standardizer);
  const Matrix probs = forward(meta, mx, DropoutMode::disabled());

  const auto n = static_cast<std::size_t>(art.split.test.size());
  Labels z_truth(n), z_pred(n);
  std::vector<double> z_scores(n);
  std::vector<EvalRecord> records(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = art.test_preds[i];
    const int truth = art.split.test.labels[i];
    z_truth[i] = ground_truth_trust(p.predicted_label, truth, p.pe, tau);
    z_scores[i] = probs(static_cast<Eigen::Index>(i), 1);
    z_pred[i] = z_scores[i] >= 0.5 ? 1 : 0;
    records[i] = EvalRecord{truth, p.predicted_label, p.pe, z_truth[i], z_pred[i]};
  }

  RepetitionResult res;
  res.index = art.index;
  res.seed = art.rep_seed;
  res.test_fraction = art.test_fraction;
  res.base_f1 = art.base_f1;
  res.base_auc = art.base_auc;
  res.meta_f1 = f1_score(z_truth, z_pred);
  try {
    res.meta_auc = auc(z_truth, z_scores);
  } catch (const Error&) {
    res.meta_auc.reset();
  }
  res.matrix = trust_confusion(records, tau);
  res.trust = trust_report(res.matrix);
  res.pe_mean_correct = art.pe_mean_correct;
  res.pe_mean_incorrect = art.pe_mean_incorrect;

  out.result = std::move(res);
  out.meta = meta;
  out.standardizer = meta_ds.standardizer;
  return out;
}

// Meta-architecture tuning needs non-degenerate z labels; the anchor tau is
// tried first, then the run's remaining taus in order.
double choose_tuning_tau(const BaseArtifacts& art, double anchor,
                         const std::vector<double>& taus) {
  std::vector<double> order{anchor};
  order.insert(order.end(), taus.begin(), taus.end());
  for (double tau : order) {
    std::size_t ones = 0;
    for (std::size_t i = 0; i < art.meta_preds.size(); ++i)
      ones += static_cast<std::size_t>(ground_truth_trust(
          art.meta_preds[i].predicted_label, art.meta_truths[i],
          art.meta_preds[i].pe, tau));
    if (ones >= 2 && ones + 2 <= art.meta_preds.size()) return tau;
  }
  throw Error("meta labels are degenerate at every configured tau; "
              "cannot tune the meta architecture");
}

ArchSpec tune_meta_arch(const ExperimentConfig& cfg, const BaseArtifacts& art,
                        const MetaFeatureLayout& layout,
                        const std::vector<double>& taus, std::uint64_t seed) {
  const double tau = choose_tuning_tau(art, cfg.tau, taus);
  const MetaDataset meta_ds = build_meta_dataset(
      art.meta_feature_src, art.meta_preds, art.meta_truths, tau, layout);
  Dataset ds;
  ds.features = meta_ds.meta_features();
  ds.labels = meta_ds.z_labels();
  ds.source = "meta-tune";
  return tune_architecture(ds, cfg.arch_search_budget, seed, cfg.meta_train,
                           cfg.tune_epochs);
}

struct RunPlan {
  std::vector<double> taus;
  std::vector<MetaFeatureLayout> arms;
};

struct RunOutput {
  // outcomes[arm][tau][rep]
  std::vector<std::vector<std::vector<StageOutcome>>> outcomes;
  BaseArtifacts rep0;  // kept for train_usnn
};

RunOutput run_matrix(const ExperimentConfig& cfg, const RunPlan& plan, int threads) {
  cfg.validate();
  const Dataset ds = cfg.dataset.resolve();

  // Tuned-once architectures come from repetition 0's data.
  std::optional<ArchSpec> base_arch;
  auto tune_base = [&](const BaseArtifacts& art_for, std::uint64_t seed) {
    return tune_architecture(art_for.split.train, cfg.arch_search_budget, seed,
                             cfg.base_train, cfg.tune_epochs);
  };

  std::optional<BaseArtifacts> rep0;
  if (cfg.uq.kind == UqKind::mcd && !cfg.retune_per_repetition) {
    // Only the split is needed to tune; building full artifacts happens next.
    BaseArtifacts probe;
    probe.rep_seed = rng::derive(cfg.master_seed, {kRep, 0});
    rng::Engine frac_eng(rng::derive(probe.rep_seed, {kFraction}));
    const double f = frac_eng.uniform(cfg.test_fraction_range.first,
                                      cfg.test_fraction_range.second);
    probe.split = stratified_split(ds, f, rng::derive(probe.rep_seed, {kSplit}));
    base_arch = tune_base(probe, rng::derive(cfg.master_seed, {kBaseTune}));
  }

  auto build_for = [&](int r) {
    std::optional<ArchSpec> arch = base_arch;
    if (cfg.uq.kind == UqKind::mcd && cfg.retune_per_repetition) {
      BaseArtifacts probe;
      probe.rep_seed = rng::derive(cfg.master_seed, {kRep, static_cast<std::uint64_t>(r)});
      rng::Engine frac_eng(rng::derive(probe.rep_seed, {kFraction}));
      const double f = frac_eng.uniform(cfg.test_fraction_range.first,
                                        cfg.test_fraction_range.second);
      probe.split = stratified_split(ds, f, rng::derive(probe.rep_seed, {kSplit}));
      arch = tune_base(probe, rng::derive(probe.rep_seed, {kBaseTune}));
    }
    return build_base(cfg, ds, r, arch);
  };

  rep0 = build_for(0);

  // One meta architecture per arm, tuned on repetition 0 unless retuning.
  std::vector<ArchSpec> meta_archs;
  for (std::size_t a = 0; a < plan.arms.size(); ++a)
    meta_archs.push_back(tune_meta_arch(cfg, *rep0, plan.arms[a], plan.taus,
                                        rng::derive(cfg.master_seed, {kMetaTune, a})));

  RunOutput out;
  out.outcomes.assign(
      plan.arms.size(),
      std::vector<std::vector<StageOutcome>>(
          plan.taus.size(),
          std::vector<StageOutcome>(static_cast<std::size_t>(cfg.repetitions))));

  auto process = [&](const BaseArtifacts& art, int r) {
    std::vector<ArchSpec> archs = meta_archs;
    if (cfg.retune_per_repetition && r != 0) {
      for (std::size_t a = 0; a < plan.arms.size(); ++a)
        archs[a] = tune_meta_arch(cfg, art, plan.arms[a], plan.taus,
                                  rng::derive(art.rep_seed, {kMetaTune, a}));
    }
    for (std::size_t a = 0; a < plan.arms.size(); ++a)
      for (std::size_t t = 0; t < plan.taus.size(); ++t)
        out.outcomes[a][t][static_cast<std::size_t>(r)] =
            meta_stage(cfg, art, plan.taus[t], plan.arms[a], archs[a]);
  };

  process(*rep0, 0);

  const int rest = cfg.repetitions - 1;
  if (rest > 0) {
    const int n_threads = std::max(1, std::min(threads, rest));
    std::atomic<int> next{1};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n_threads));
    for (int w = 0; w < n_threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (;;) {
            const int r = next.fetch_add(1);
            if (r >= cfg.repetitions) return;
            const BaseArtifacts art = build_for(r);
            process(art, r);
          }
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (const auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  out.rep0 = std::move(*rep0);
  return out;
}

// ---------------------------------------------------------------------------
// aggregation and report assembly
// ---------------------------------------------------------------------------

struct MetricRef {
  const char* name;
  std::optional<double> (*get)(const RepetitionResult&);
};

const MetricRef kMetrics[] = {
    {"base_f1", [](const RepetitionResult& r) { return std::optional<double>(r.base_f1); }},
    {"base_auc", [](const RepetitionResult& r) { return r.base_auc; }},
    {"meta_f1", [](const RepetitionResult& r) { return std::optional<double>(r.meta_f1); }},
    {"meta_auc", [](const RepetitionResult& r) { return r.meta_auc; }},
    {"car", [](const RepetitionResult& r) { return std::optional<double>(r.trust.car); }},
    {"cpr", [](const RepetitionResult& r) { return r.trust.cpr; }},
    {"tpr", [](const RepetitionResult& r) { return r.trust.tpr_trust; }},
    {"ftr", [](const RepetitionResult& r) { return std::optional<double>(r.trust.ftr); }},
    {"rar", [](const RepetitionResult& r) { return std::optional<double>(r.trust.rar); }},
    {"mrr", [](const RepetitionResult& r) { return r.trust.mrr; }},
    {"trr", [](const RepetitionResult& r) { return r.trust.trr; }},
    {"frr", [](const RepetitionResult& r) { return r.trust.frr; }},
    {"pe_mean_correct", [](const RepetitionResult& r) { return r.pe_mean_correct; }},
    {"pe_mean_incorrect", [](const RepetitionResult& r) { return r.pe_mean_incorrect; }},
};

std::map<std::string, MetricSummary> aggregate(
    const std::vector<RepetitionResult>& reps) {
  std::map<std::string, MetricSummary> out;
  for (const auto& m : kMetrics) {
    std::vector<double> values;
    for (const auto& r : reps) {
      const auto v = m.get(r);
      if (v) values.push_back(*v);
    }
    MetricSummary s;
    s.count = static_cast<int>(values.size());
    if (!values.empty()) {
      double sum = 0.0;
      for (double v : values) sum += v;
      s.mean = sum / static_cast<double>(values.size());
      if (values.size() > 1) {
        double sq = 0.0;
        for (double v : values) sq += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(sq / static_cast<double>(values.size() - 1));
      }
    }
    out[m.name] = s;
  }
  return out;
}

ExperimentReport assemble_report(const ExperimentConfig& cfg, double tau,
                                 bool include_pe,
                                 const std::vector<StageOutcome>& outcomes) {
  ExperimentReport rep;
  rep.config = cfg;
  rep.config.tau = tau;
  rep.config.include_pe = include_pe;
  rep.tau = tau;
  for (const auto& o : outcomes) {
    if (o.result) rep.repetitions.push_back(*o.result);
    if (o.skipped) rep.skipped.push_back(*o.skipped);
  }
  rep.aggregate = aggregate(rep.repetitions);
  return rep;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, int threads) {
  RunPlan plan;
  plan.taus = {cfg.tau};
  plan.arms = {cfg.layout()};
  const RunOutput out = run_matrix(cfg, plan, threads);
  return assemble_report(cfg, cfg.tau, cfg.include_pe, out.outcomes[0][0]);
}

SweepReport threshold_sweep(const ExperimentConfig& cfg,
                            const std::vector<double>& taus, int threads) {
  if (taus.empty()) throw Error("threshold_sweep: empty tau list");
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (!(taus[i] > 0.0 && taus[i] < 1.0))
      throw Error("threshold_sweep: every tau must be in (0,1)");
    if (i > 0 && taus[i] <= taus[i - 1])
      throw Error("threshold_sweep: taus must be strictly increasing");
  }
  RunPlan plan;
  plan.taus = taus;
  plan.arms = {cfg.layout()};
  const RunOutput out = run_matrix(cfg, plan, threads);

  SweepReport sweep;
  sweep.config = cfg;
  for (std::size_t t = 0; t < taus.size(); ++t)
    sweep.per_tau.push_back(
        assemble_report(cfg, taus[t], cfg.include_pe, out.outcomes[0][t]));
  return sweep;
}

AblationReport ablation_pe(const ExperimentConfig& cfg, int threads) {
  RunPlan plan;
  plan.taus = {cfg.tau};
  MetaFeatureLayout with = cfg.layout();
  with.include_pe = true;
  MetaFeatureLayout without = cfg.layout();
  without.include_pe = false;
  plan.arms = {with, without};
  const RunOutput out = run_matrix(cfg, plan, threads);

  AblationReport rep;
  rep.config = cfg;
  rep.with_pe = assemble_report(cfg, cfg.tau, true, out.outcomes[0][0]);
  rep.without_pe = assemble_report(cfg, cfg.tau, false, out.outcomes[1][0]);
  return rep;
}

TrainedBundle train_usnn(const ExperimentConfig& cfg, int threads) {
  (void)threads;
  ExperimentConfig one = cfg;
  one.repetitions = 1;
  RunPlan plan;
  plan.taus = {one.tau};
  plan.arms = {one.layout()};
  RunOutput out = run_matrix(one, plan, 1);
  StageOutcome& o = out.outcomes[0][0][0];
  if (o.skipped) throw Error("training failed: " + o.skipped->reason);

  TrainedBundle bundle;
  bundle.model.base = out.rep0.setting;
  bundle.model.meta = std::move(*o.meta);
  bundle.model.tau = one.tau;
  bundle.model.layout = one.layout();
  bundle.model.standardizer = o.standardizer;
  bundle.test_split = out.rep0.split.test;
  bundle.metrics = *o.result;
  return bundle;
}

// ---------------------------------------------------------------------------
// report serialization
// ---------------------------------------------------------------------------

namespace {

json opt_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

std::optional<double> opt_from_json(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

const char* kCellNames[4][4] = {{"TPTT", "TPFT", "TPTU", "TPFU"},
                                {"FPTT", "FPFT", "FPTU", "FPFU"},
                                {"TNTT", "TNFT", "TNTU", "TNFU"},
                                {"FNTT", "FNFT", "FNTU", "FNFU"}};

json rep_to_json(const RepetitionResult& r) {
  json j;
  j["index"] = r.index;
  j["seed"] = r.seed;
  j["test_fraction"] = r.test_fraction;
  j["base_f1"] = r.base_f1;
  j["base_auc"] = opt_to_json(r.base_auc);
  j["meta_f1"] = r.meta_f1;
  j["meta_auc"] = opt_to_json(r.meta_auc);
  j["pe_mean_correct"] = opt_to_json(r.pe_mean_correct);
  j["pe_mean_incorrect"] = opt_to_json(r.pe_mean_incorrect);
  for (int c = 0; c < 4; ++c)
    for (int t = 0; t < 4; ++t)
      j["cells"][kCellNames[c][t]] =
          r.matrix.cells[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)];
  j["trust"]["car"] = r.trust.car;
  j["trust"]["cpr"] = opt_to_json(r.trust.cpr);
  j["trust"]["tpr"] = opt_to_json(r.trust.tpr_trust);
  j["trust"]["ftr"] = r.trust.ftr;
  j["trust"]["rar"] = r.trust.rar;
  j["trust"]["mrr"] = opt_to_json(r.trust.mrr);
  j["trust"]["trr"] = opt_to_json(r.trust.trr);
  j["trust"]["frr"] = opt_to_json(r.trust.frr);
  j["trust"]["tap"] = r.trust.tap;
  j["trust"]["ttp"] = r.trust.ttp;
  j["trust"]["tup"] = r.trust.tup;
  j["trust"]["total"] = r.trust.total;
  return j;
}

RepetitionResult rep_from_json(const json& j, double tau) {
  RepetitionResult r;
  r.index = j.at("index").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.test_fraction = j.at("test_fraction").get<double>();
  r.base_f1 = j.at("base_f1").get<double>();
  r.base_auc = opt_from_json(j.at("base_auc"));
  r.meta_f1 = j.at("meta_f1").get<double>();
  r.meta_auc = opt_from_json(j.at("meta_auc"));
  r.pe_mean_correct = opt_from_json(j.at("pe_mean_correct"));
  r.pe_mean_incorrect = opt_from_json(j.at("pe_mean_incorrect"));
  r.matrix.tau = tau;
  for (int c = 0; c < 4; ++c)
    for (int t = 0; t < 4; ++t)
      r.matrix.cells[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)] =
          j.at("cells").at(kCellNames[c][t]).get<std::int64_t>();
  const json& tr = j.at("trust");
  r.trust.car = tr.at("car").get<double>();
  r.trust.cpr = opt_from_json(tr.at("cpr"));
  r.trust.tpr_trust = opt_from_json(tr.at("tpr"));
  r.trust.ftr = tr.at("ftr").get<double>();
  r.trust.rar = tr.at("rar").get<double>();
  r.trust.mrr = opt_from_json(tr.at("mrr"));
  r.trust.trr = opt_from_json(tr.at("trr"));
  r.trust.frr = opt_from_json(tr.at("frr"));
  r.trust.tap = tr.at("tap").get<std::int64_t>();
  r.trust.ttp = tr.at("ttp").get<std::int64_t>();
  r.trust.tup = tr.at("tup").get<std::int64_t>();
  r.trust.total = tr.at("total").get<std::int64_t>();
  return r;
}

json report_to_json_obj(const ExperimentReport& rep) {
  json j;
  j["config"] = config_to_json_obj(rep.config);
  j["tau"] = rep.tau;
  json reps = json::array();
  for (const auto& r : rep.repetitions) reps.push_back(rep_to_json(r));
  j["repetitions"] = std::move(reps);
  json skipped = json::array();
  for (const auto& s : rep.skipped)
    skipped.push_back({{"index", s.index}, {"reason", s.reason}});
  j["skipped"] = std::move(skipped);
  for (const auto& [name, s] : rep.aggregate) {
    j["aggregate"][name]["mean"] = s.mean;
    j["aggregate"][name]["std"] = opt_to_json(s.stddev);
    j["aggregate"][name]["count"] = s.count;
  }
  return j;
}

ExperimentReport report_from_json_obj(const json& j) {
  ExperimentReport rep;
  rep.config = config_from_json_obj(j.at("config"));
  rep.tau = j.at("tau").get<double>();
  for (const auto& r : j.at("repetitions"))
    rep.repetitions.push_back(rep_from_json(r, rep.tau));
  for (const auto& s : j.at("skipped"))
    rep.skipped.push_back(
        {s.at("index").get<int>(), s.at("reason").get<std::string>()});
  if (j.contains("aggregate")) {
    for (auto it = j.at("aggregate").begin(); it != j.at("aggregate").end(); ++it) {
      MetricSummary s;
      s.mean = it.value().at("mean").get<double>();
      s.stddev = opt_from_json(it.value().at("std"));
      s.count = it.value().at("count").get<int>();
      rep.aggregate[it.key()] = s;
    }
  }
  return rep;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write file: " + path);
  out << text;
  if (!out) throw Error("write failed: " + path);
}

const char* kCsvHeader =
    "tau,include_pe,repetition,seed,test_fraction,base_f1,base_auc,meta_f1,"
    "meta_auc,car,cpr,tpr,ftr,rar,mrr,trr,frr,tap,ttp,tup,total,"
    "pe_mean_correct,pe_mean_incorrect,skipped_reason";

std::string csv_opt(const std::optional<double>& v) {
  return v ? format_double(*v) : std::string();
}

void csv_rows_for(std::ostream& os, const ExperimentReport& rep) {
  // One row per repetition index, skipped ones included with empty metrics.
  std::map<int, const RepetitionResult*> by_index;
  for (const auto& r : rep.repetitions) by_index[r.index] = &r;
  std::map<int, const SkippedRepetition*> skipped;
  for (const auto& s : rep.skipped) skipped[s.index] = &s;

  for (int i = 0; i < rep.config.repetitions; ++i) {
    os << format_double(rep.tau) << ',' << (rep.config.include_pe ? 1 : 0) << ','
       << i << ',';
    auto it = by_index.find(i);
    if (it != by_index.end()) {
      const auto& r = *it->second;
      os << r.seed << ',' << format_double(r.test_fraction) << ','
         << format_double(r.base_f1) << ',' << csv_opt(r.base_auc) << ','
         << format_double(r.meta_f1) << ',' << csv_opt(r.meta_auc) << ','
         << format_double(r.trust.car) << ',' << csv_opt(r.trust.cpr) << ','
         << csv_opt(r.trust.tpr_trust) << ',' << format_double(r.trust.ftr) << ','
         << format_double(r.trust.rar) << ',' << csv_opt(r.trust.mrr) << ','
         << csv_opt(r.trust.trr) << ',' << csv_opt(r.trust.frr) << ','
         << r.trust.tap << ',' << r.trust.ttp << ',' << r.trust.tup << ','
         << r.trust.total << ',' << csv_opt(r.pe_mean_correct) << ','
         << csv_opt(r.pe_mean_incorrect) << ',';
    } else {
      os << ",,,,,,,,,,,,,,,,,,,,";  // fields seed..pe_mean_incorrect empty
    }
    auto sk = skipped.find(i);
    os << (sk != skipped.end() ? sk->second->reason : "") << '\n';
  }
}

}  // namespace

void emit_report(const ExperimentReport& report, ReportFormat fmt,
                 const std::string& path) {
  if (fmt == ReportFormat::json) {
    json j = report_to_json_obj(report);
    j["schema"] = "usnn-report-v1";
    write_file(path, j.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  os << kCsvHeader << '\n';
  csv_rows_for(os, report);
  write_file(path, os.str());
}

void emit_report(const SweepReport& report, ReportFormat fmt,
                 const std::string& path) {
  if (fmt == ReportFormat::json) {
    json j;
    j["schema"] = "usnn-sweep-v1";
    j["config"] = config_to_json_obj(report.config);
    json reports = json::array();
    for (const auto& r : report.per_tau) reports.push_back(report_to_json_obj(r));
    j["reports"] = std::move(reports);
    write_file(path, j.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  os << kCsvHeader << '\n';
  for (const auto& r : report.per_tau) csv_rows_for(os, r);
  write_file(path, os.str());
}

void emit_report(const AblationReport& report, ReportFormat fmt,
                 const std::string& path) {
  if (fmt == ReportFormat::json) {
    json j;
    j["schema"] = "usnn-ablation-v1";
    j["config"] = config_to_json_obj(report.config);
    j["with_pe"] = report_to_json_obj(report.with_pe);
    j["without_pe"] = report_to_json_obj(report.without_pe);
    write_file(path, j.dump(2) + "\n");
    return;
  }
  std::ostringstream os;
  os << kCsvHeader << '\n';
  csv_rows_for(os, report.with_pe);
  csv_rows_for(os, report.without_pe);
  write_file(path, os.str());
}

ParsedReport parse_report_json(const std::string& path) {
  const json j = parse_json(read_file(path), path);
  const std::string schema = j.value("schema", "");
  ParsedReport out;
  if (schema == "usnn-report-v1") {
    out.experiment = report_from_json_obj(j);
  } else if (schema == "usnn-sweep-v1") {
    SweepReport sweep;
    sweep.config = config_from_json_obj(j.at("config"));
    for (const auto& r : j.at("reports"))
      sweep.per_tau.push_back(report_from_json_obj(r));
    out.sweep = std::move(sweep);
  } else if (schema == "usnn-ablation-v1") {
    AblationReport ab;
    ab.config = config_from_json_obj(j.at("config"));
    ab.with_pe = report_from_json_obj(j.at("with_pe"));
    ab.without_pe = report_from_json_obj(j.at("without_pe"));
    out.ablation = std::move(ab);
  } else {
    throw Error("unrecognized report schema in " + path);
  }
  return out;
}

void report_json_to_csv(const std::string& json_path, const std::string& csv_path) {
  const ParsedReport p = parse_report_json(json_path);
  if (p.experiment) {
    emit_report(*p.experiment, ReportFormat::csv, csv_path);
  } else if (p.sweep) {
    emit_report(*p.sweep, ReportFormat::csv, csv_path);
  } else {
    emit_report(*p.ablation, ReportFormat::csv, csv_path);
  }
}

}  // namespace usnn
