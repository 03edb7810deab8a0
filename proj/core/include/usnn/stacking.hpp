#pragma once

#include <optional>
#include <string>
#include <vector>

#include "usnn/metrics.hpp"
#include "usnn/uq.hpp"

namespace usnn {

/// One meta-train row. z is fixed at construction: 1 iff the base prediction
/// matched the truth AND its entropy was within the tau used to build the
/// set; a trustworthy incorrect record cannot exist.
struct MetaRecord {
  Vector features;  // the original input vector
  double pe = 0.0;
  int base_label = 0;
  int truth = 0;
  int z = 0;
};

/// How meta-model inputs are assembled from a record. The base model's mean
/// probability vector is NOT part of the meta input by default; the
/// append_mean_probs switch exists because the prose description of what the
/// meta-model sees is wider than the construction actually given, and the
/// narrow construction (features + PE) is the default.
struct MetaFeatureLayout {
  bool include_pe = true;
  bool append_mean_probs = false;
  bool standardize = false;  // z-score the original features (PE stays raw)

  int width(int feature_dim) const {
    return feature_dim + (include_pe ? 1 : 0) + (append_mean_probs ? 2 : 0);
  }
};

/// Per-dimension z-score fitted on meta-train features. Dimensions with zero
/// spread pass through unscaled.
struct Standardizer {
  Vector mean;
  Vector stdev;

  static Standardizer fit(const Matrix& x);
  Matrix apply(const Matrix& x) const;
};

struct MetaDataset {
  std::vector<MetaRecord> records;
  double tau = 0.1;
  MetaFeatureLayout layout;
  std::vector<Eigen::Vector2d> base_mean_probs;  // parallel to records
  std::optional<Standardizer> standardizer;      // set when layout.standardize

  int feature_dim() const;
  int meta_input_dim() const { return layout.width(feature_dim()); }
  Matrix meta_features() const;  // assembled meta-model inputs
  Labels z_labels() const;
};

struct TrustPrediction {
  int trust_flag = 0;      // 1 iff trust_prob >= 0.5 (fixed decision rule)
  double trust_prob = 0.0;
};

struct UsnnOutput {
  int label = 0;
  TrustPrediction trust;
  double pe = 0.0;
};

MetaDataset build_meta_dataset(const Matrix& features,
                               const std::vector<BasePrediction>& base_preds,
                               const Labels& truths, double tau, bool include_pe);
MetaDataset build_meta_dataset(const Matrix& features,
                               const std::vector<BasePrediction>& base_preds,
                               const Labels& truths, double tau,
                               const MetaFeatureLayout& layout);

/// Assembles meta-model input rows exactly the way MetaDataset does, for
/// inference-time use. Column order: [features | pe | p0 p1].
Matrix assemble_meta_features(const Matrix& features,
                              const std::vector<BasePrediction>& preds,
                              const MetaFeatureLayout& layout,
                              const std::optional<Standardizer>& standardizer);

/// Trains the trust classifier over z. Class weights are recomputed from the
/// z distribution; cfg.class_weights is ignored. The network is initialized
/// from a seed derived from cfg.shuffle_seed. Throws if every z is the same
/// (degenerate tau).
Network train_meta(const MetaDataset& meta, TrainConfig cfg, const ArchSpec& arch);

/// The dual-output predictor: base label + trust flag per input. Meta
/// inference always runs with dropout disabled.
std::vector<UsnnOutput> usnn_predict(
    const UqSetting& base_setting, const Network& meta, const Matrix& inputs,
    const MetaFeatureLayout& layout,
    const std::optional<Standardizer>& standardizer = std::nullopt);

/// CSV: features..., pe, base_label, truth, z.
void write_meta_csv(const std::string& path, const MetaDataset& meta);
/// CSV: sample_id, label, trust_flag, trust_prob, pe.
void write_outputs_csv(const std::string& path,
                       const std::vector<UsnnOutput>& outputs);

}  // namespace usnn
