#pragma once

#include <string>
#include <vector>

#include "usnn/network.hpp"

namespace usnn {

enum class UqKind { mcd, ensemble, emcd };

std::string to_string(UqKind k);
UqKind uq_kind_from_string(const std::string& s);

/// All per-pass / per-member class-probability rows for one input, plus
/// their arithmetic mean. Row order: member-major, pass-minor, so row
/// n*M + m belongs to (member n, pass m).
struct PredictiveDistribution {
  Matrix samples;  // S x 2
  Eigen::Vector2d mean;
  UqKind setting = UqKind::mcd;
  int members = 1;  // N
  int passes = 1;   // M

  void validate() const;
};

/// Which stochastic machinery produces base predictions. mcd carries exactly
/// one member; ensemble ignores `passes`; seeds for individual stochastic
/// passes derive from (seed, member index, pass index), never from execution
/// order, so fan-out parallelism cannot change results.
struct UqSetting {
  UqKind kind = UqKind::mcd;
  std::vector<Network> members;
  int passes = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BasePrediction {
  int predicted_label = 0;
  Eigen::Vector2d mean_probs;
  double pe = 0.0;
  PredictiveDistribution distribution;
};

std::vector<PredictiveDistribution> predict_mcd(const Network& net,
                                                const Matrix& inputs, int passes,
                                                std::uint64_t seed);

std::vector<PredictiveDistribution> predict_ensemble(
    const std::vector<Network>& members, const Matrix& inputs);

std::vector<PredictiveDistribution> predict_emcd(const std::vector<Network>& members,
                                                 const Matrix& inputs, int passes,
                                                 std::uint64_t seed);

std::vector<PredictiveDistribution> predict(const UqSetting& setting,
                                            const Matrix& inputs);

/// Normalized Shannon entropy of the mean distribution:
/// -sum_c m_c log2(m_c) / log2(C), with 0*log(0) == 0. In [0,1]; base-2 with
/// the log2(C) normalizer is the reading under which the claimed [0,1] range
/// actually holds (C=2 makes the normalizer 1).
double prediction_entropy(const PredictiveDistribution& dist);

/// Entropy of a bare 2-class probability vector (same formula).
double normalized_entropy(const Eigen::Vector2d& mean);

/// Label = argmax of the mean, ties broken toward class 0.
BasePrediction to_base_prediction(const PredictiveDistribution& dist);
std::vector<BasePrediction> to_base_predictions(
    std::vector<PredictiveDistribution> dists);

/// One row per (sample, member, pass): sample_id, member_id, pass_id, p0, p1.
void write_distributions_csv(const std::string& path,
                             const std::vector<PredictiveDistribution>& dists);

}  // namespace usnn
