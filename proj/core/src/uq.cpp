#include "usnn/uq.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "usnn/rng.hpp"

namespace usnn {

namespace {

enum UqStream : std::uint64_t { kUqPass = 1 };

std::uint64_t pass_seed(std::uint64_t base, int member, int pass) {
  return rng::derive(base, {kUqPass, static_cast<std::uint64_t>(member),
                            static_cast<std::uint64_t>(pass)});
}

std::vector<PredictiveDistribution> collect(const std::vector<Matrix>& pass_probs,
                                            Eigen::Index n_inputs, UqKind kind,
                                            int members, int passes) {
  std::vector<PredictiveDistribution> out;
  out.reserve(static_cast<std::size_t>(n_inputs));
  const auto s = static_cast<Eigen::Index>(pass_probs.size());
  for (Eigen::Index i = 0; i < n_inputs; ++i) {
    PredictiveDistribution d;
    d.samples.resize(s, 2);
    for (Eigen::Index r = 0; r < s; ++r)
      d.samples.row(r) = pass_probs[static_cast<std::size_t>(r)].row(i);
    d.mean = d.samples.colwise().mean();
    d.setting = kind;
    d.members = members;
    d.passes = passes;
    out.push_back(std::move(d));
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::string to_string(UqKind k) {
  switch (k) {
    case UqKind::mcd: return "mcd";
    case UqKind::ensemble: return "ensemble";
    case UqKind::emcd: return "emcd";
  }
  throw Error("unknown UqKind");
}

UqKind uq_kind_from_string(const std::string& s) {
  if (s == "mcd") return UqKind::mcd;
  if (s == "ensemble") return UqKind::ensemble;
  if (s == "emcd") return UqKind::emcd;
  throw Error("unknown UQ setting \"" + s + "\" (expected mcd|ensemble|emcd)");
}

void PredictiveDistribution::validate() const {
  if (samples.cols() != 2) throw Error("distribution: samples must have 2 columns");
  if (samples.rows() < 1) throw Error("distribution: no sample rows");
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    if (samples(r, 0) < 0.0 || samples(r, 1) < 0.0)
      throw Error("distribution: negative probability in row " + std::to_string(r));
    if (std::abs(samples.row(r).sum() - 1.0) > 1e-9)
      throw Error("distribution: row " + std::to_string(r) + " does not sum to 1");
  }
  const Eigen::Vector2d recomputed = samples.colwise().mean();
  if ((recomputed - mean).cwiseAbs().maxCoeff() > 1e-12)
    throw Error("distribution: stored mean inconsistent with samples");
  const Eigen::Index expect =
      setting == UqKind::mcd      ? passes
      : setting == UqKind::ensemble ? members
                                    : static_cast<Eigen::Index>(members) * passes;
  if (samples.rows() != expect)
    throw Error("distribution: sample count does not match setting");
}

void UqSetting::validate() const {
  if (members.empty()) throw Error("uq setting: no member networks");
  if (kind == UqKind::mcd && members.size() != 1)
    throw Error("uq setting: mcd carries exactly one network");
  if (kind != UqKind::ensemble && passes < 1)
    throw Error("uq setting: passes must be positive");
  const int d = members.front().arch.input_dim;
  for (const auto& m : members)
    if (m.arch.input_dim != d)
      throw Error("uq setting: members disagree on input_dim");
}

std::vector<PredictiveDistribution> predict_mcd(const Network& net,
                                                const Matrix& inputs, int passes,
                                                std::uint64_t seed) {
  if (passes < 1) throw Error("predict_mcd: passes must be positive");
  std::vector<Matrix> pp;
  pp.reserve(static_cast<std::size_t>(passes));
  for (int m = 0; m < passes; ++m)
    pp.push_back(forward(net, inputs, DropoutMode::with_seed(pass_seed(seed, 0, m))));
  return collect(pp, inputs.rows(), UqKind::mcd, 1, passes);
}

std::vector<PredictiveDistribution> predict_ensemble(
    const std::vector<Network>& members, const Matrix& inputs) {
  if (members.empty()) throw Error("predict_ensemble: no members");
  std::vector<Matrix> pp;
  pp.reserve(members.size());
  for (const auto& net : members)
    pp.push_back(forward(net, inputs, DropoutMode::disabled()));
  return collect(pp, inputs.rows(), UqKind::ensemble,
                 static_cast<int>(members.size()), 1);
}

std::vector<PredictiveDistribution> predict_emcd(const std::vector<Network>& members,
                                                 const Matrix& inputs, int passes,
                                                 std::uint64_t seed) {
  if (members.empty()) throw Error("predict_emcd: no members");
  if (passes < 1) throw Error("predict_emcd: passes must be positive");
  std::vector<Matrix> pp;
  pp.reserve(members.size() * static_cast<std::size_t>(passes));
  for (std::size_t n = 0; n < members.size(); ++n)
    for (int m = 0; m < passes; ++m)
      pp.push_back(forward(members[n], inputs,
                           DropoutMode::with_seed(pass_seed(seed, static_cast<int>(n), m))));
  return collect(pp, inputs.rows(), UqKind::emcd, static_cast<int>(members.size()),
                 passes);
}

std::vector<PredictiveDistribution> predict(const UqSetting& setting,
                                            const Matrix& inputs) {
  setting.validate();
  switch (setting.kind) {
    case UqKind::mcd:
      return predict_mcd(setting.members.front(), inputs, setting.passes,
                         setting.seed);
    case UqKind::ensemble:
      return predict_ensemble(setting.members, inputs);
    case UqKind::emcd:
      return predict_emcd(setting.members, inputs, setting.passes, setting.seed);
  }
  throw Error("unknown UqKind");
}

double normalized_entropy(const Eigen::Vector2d& mean) {
  double h = 0.0;
  for (int c = 0; c < 2; ++c) {
    const double p = mean(c);
    if (p > 0.0) h -= p * std::log2(p);
  }
  // log2(C) normalizer is 1 for C = 2; clamp rounding spill at the ends.
  return std::min(1.0, std::max(0.0, h));
}

double prediction_entropy(const PredictiveDistribution& dist) {
  return normalized_entropy(dist.mean);
}

BasePrediction to_base_prediction(const PredictiveDistribution& dist) {
  BasePrediction p;
  p.mean_probs = dist.mean;
  p.predicted_label = dist.mean(0) >= dist.mean(1) ? 0 : 1;
  p.pe = prediction_entropy(dist);
  p.distribution = dist;
  return p;
}

std::vector<BasePrediction> to_base_predictions(
    std::vector<PredictiveDistribution> dists) {
  std::vector<BasePrediction> out;
  out.reserve(dists.size());
  for (auto& d : dists) {
    BasePrediction p;
    p.mean_probs = d.mean;
    p.predicted_label = d.mean(0) >= d.mean(1) ? 0 : 1;
    p.pe = prediction_entropy(d);
    p.distribution = std::move(d);
    out.push_back(std::move(p));
  }
  return out;
}

void write_distributions_csv(const std::string& path,
                             const std::vector<PredictiveDistribution>& dists) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write distributions csv: " + path);
  out << "sample_id,member_id,pass_id,p0,p1\n";
  for (std::size_t i = 0; i < dists.size(); ++i) {
    const auto& d = dists[i];
    for (Eigen::Index r = 0; r < d.samples.rows(); ++r) {
      const int member = d.setting == UqKind::ensemble
                             ? static_cast<int>(r)
                             : static_cast<int>(r / d.passes);
      const int pass = d.setting == UqKind::ensemble
                           ? 0
                           : static_cast<int>(r % d.passes);
      out << i << ',' << member << ',' << pass << ','
          << format_double(d.samples(r, 0)) << ',' << format_double(d.samples(r, 1))
          << '\n';
    }
  }
  if (!out) throw Error("write failed: " + path);
}

}  // namespace usnn
