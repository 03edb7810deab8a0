#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "usnn/dataset.hpp"

namespace usnn {

/// F1 with positive class 1: 2TP / (2TP + FP + FN); 0 when the denominator
/// is 0.
double f1_score(const Labels& truths, const Labels& preds);

/// Rank-based (Mann-Whitney) AUC, ties counted 0.5. Computed from an
/// integer numerator so it agrees exactly with all-pairs counting.
/// Throws if only one class is present.
double auc(const Labels& truths, const std::vector<double>& scores);

/// The trust ground-truth rule: 1 iff the base prediction is correct AND its
/// entropy does not exceed tau (boundary inclusive).
int ground_truth_trust(int base_label, int truth, double pe, double tau);

enum class Correctness { TP = 0, FP = 1, TN = 2, FN = 3 };
enum class TrustCat { TT = 0, FT = 1, TU = 2, FU = 3 };

struct EvalRecord {
  int truth = 0;
  int base_label = 0;
  double pe = 0.0;
  int trust_truth = 0;  // z
  int trust_pred = 0;   // z-hat
};

/// 16 cells crossing base-prediction correctness {TP,FP,TN,FN} with trust
/// outcome {TT,FT,TU,FU}. Whenever z comes from ground_truth_trust, the four
/// cells pairing an incorrect prediction with TT or FU stay structurally
/// zero.
struct TrustConfusionMatrix {
  std::array<std::array<std::int64_t, 4>, 4> cells{};  // [correctness][trust]
  double tau = 0.0;

  std::int64_t& at(Correctness c, TrustCat t) {
    return cells[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)];
  }
  std::int64_t at(Correctness c, TrustCat t) const {
    return cells[static_cast<std::size_t>(c)][static_cast<std::size_t>(t)];
  }
  std::int64_t total() const;

  /// 4x4 human-readable table: ground-truth rows, model-output columns.
  std::string table() const;
  std::string to_json() const;
};

/// The eight derived rates plus their helper totals. Ratios whose
/// denominator is zero are absent, never 0 or NaN.
struct TrustReport {
  double car = 0.0;                // confident accuracy rate
  std::optional<double> cpr;       // confident precision rate (needs TAP > 0)
  std::optional<double> tpr_trust; // trust precision rate (needs TTP > 0)
  double ftr = 0.0;                // false trust rate
  double rar = 0.0;                // review alert ratio
  std::optional<double> mrr;       // miscalibration review ratio (needs TUP > 0)
  std::optional<double> trr;       // true review ratio (needs TUP > 0)
  std::optional<double> frr;       // false review ratio (needs TUP > 0)
  std::int64_t tap = 0;            // total accurate predictions
  std::int64_t ttp = 0;            // total trustworthy-flagged predictions
  std::int64_t tup = 0;            // total untrustworthy-flagged predictions
  std::int64_t total = 0;

  std::string to_json() const;
};

TrustConfusionMatrix trust_confusion(const std::vector<EvalRecord>& records,
                                     double tau);
TrustReport trust_report(const TrustConfusionMatrix& m);

}  // namespace usnn
