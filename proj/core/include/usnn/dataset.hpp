#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "usnn/error.hpp"

namespace usnn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Labels = std::vector<int>;

/// Immutable after construction. One row per sample, labels in {0,1}.
struct Dataset {
  Matrix features;                         // n_samples x n_features
  Labels labels;                           // parallel to feature rows
  std::vector<std::string> feature_names;  // empty = unnamed
  std::string source;

  Eigen::Index size() const { return features.rows(); }
  Eigen::Index dim() const { return features.cols(); }

  /// Throws usnn::Error if any structural invariant is violated.
  void validate() const;
};

struct SplitPair {
  Dataset train;
  Dataset test;
  std::uint64_t seed = 0;
  double test_fraction = 0.0;
};

struct ClassWeights {
  double w0 = 1.0;
  double w1 = 1.0;

  double of(int label) const { return label == 0 ? w0 : w1; }
  static ClassWeights unit() { return {1.0, 1.0}; }
};

/// Two isotropic unit-variance Gaussian clusters, class means `separation`
/// apart along the first feature axis. Stands in for external embedding
/// files at desk scale; the Bayes error is Phi(-separation/2).
struct SyntheticSpec {
  Eigen::Index n_samples = 0;
  Eigen::Index n_features = 0;
  double class_balance = 0.5;  // fraction of positives, in (0,1)
  double separation = 2.0;     // in units of the shared standard deviation
  std::uint64_t seed = 0;

  void validate() const;
};

/// Reads a CSV with a header row. Every column except `label_column` becomes a
/// feature, in file order; label values must be exactly 0 or 1. Errors name
/// the offending row and column.
Dataset load_dataset(const std::string& path, const std::string& label_column);

/// Inverse of load_dataset: full round-trip precision on every feature value.
void write_dataset(const Dataset& ds, const std::string& path,
                   const std::string& label_column = "label");

/// Per-class test counts are round(count * fraction), nudged by at most one
/// so both sides keep at least one sample of each class. Deterministic per
/// (dataset, fraction, seed). Requires >= 2 samples of each class.
SplitPair stratified_split(const Dataset& ds, double test_fraction,
                           std::uint64_t seed);

/// Balanced inverse-frequency weights: w_c = N / (C * N_c), C = 2.
/// Both classes must be present.
ClassWeights class_weights(const Labels& labels);

Dataset make_synthetic(const SyntheticSpec& spec);

/// Row subset in the given order. Shared helper for splits and holdouts.
Dataset select_rows(const Dataset& ds, const std::vector<Eigen::Index>& rows);

}  // namespace usnn
