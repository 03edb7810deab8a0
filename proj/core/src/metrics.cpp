#include "usnn/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace usnn {

namespace {

const char* kCorrNames[4] = {"TP", "FP", "TN", "FN"};
const char* kTrustNames[4] = {"TT", "FT", "TU", "FU"};

Correctness correctness_of(int truth, int pred) {
  if (truth == 1) return pred == 1 ? Correctness::TP : Correctness::FN;
  return pred == 1 ? Correctness::FP : Correctness::TN;
}

TrustCat trust_cat_of(int z, int z_hat) {
  if (z_hat == 1) return z == 1 ? TrustCat::TT : TrustCat::FT;
  return z == 0 ? TrustCat::TU : TrustCat::FU;
}

}  // namespace

double f1_score(const Labels& truths, const Labels& preds) {
  if (truths.size() != preds.size() || truths.empty())
    throw Error("f1_score: label vectors empty or of different length");
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (preds[i] == 1 && truths[i] == 1) ++tp;
    if (preds[i] == 1 && truths[i] == 0) ++fp;
    if (preds[i] == 0 && truths[i] == 1) ++fn;
  }
  const std::int64_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double auc(const Labels& truths, const std::vector<double>& scores) {
  if (truths.size() != scores.size() || truths.empty())
    throw Error("auc: input vectors empty or of different length");
  std::int64_t n_pos = 0;
  for (int y : truths) n_pos += y;
  const auto n = static_cast<std::int64_t>(truths.size());
  const std::int64_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw Error("auc: both classes must be present");

  std::vector<std::size_t> order(truths.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the positive rank sum, using (first + last) as twice the average
  // rank of each tie group. Integer arithmetic keeps the result identical to
  // brute-force pair counting.
  std::int64_t twice_rank_sum_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    const auto twice_avg_rank = static_cast<std::int64_t>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (truths[order[k]] == 1) twice_rank_sum_pos += twice_avg_rank;
    i = j + 1;
  }
  const std::int64_t numerator = twice_rank_sum_pos - n_pos * (n_pos + 1);
  return static_cast<double>(numerator) / static_cast<double>(2 * n_pos * n_neg);
}

int ground_truth_trust(int base_label, int truth, double pe, double tau) {
  return (base_label == truth && pe <= tau) ? 1 : 0;
}

std::int64_t TrustConfusionMatrix::total() const {
  std::int64_t t = 0;
  for (const auto& row : cells)
    for (std::int64_t c : row) t += c;
  return t;
}

TrustConfusionMatrix trust_confusion(const std::vector<EvalRecord>& records,
                                     double tau) {
  if (records.empty()) throw Error("trust_confusion: no records");
  TrustConfusionMatrix m;
  m.tau = tau;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.trust_truth == 1 && r.base_label != r.truth)
      throw Error("trust_confusion: record " + std::to_string(i) +
                  " has z=1 with an incorrect base prediction");
    ++m.at(correctness_of(r.truth, r.base_label),
           trust_cat_of(r.trust_truth, r.trust_pred));
  }
  return m;
}

TrustReport trust_report(const TrustConfusionMatrix& m) {
  const std::int64_t total = m.total();
  if (total == 0) throw Error("trust_report: empty matrix");

  auto cell = [&](Correctness c, TrustCat t) { return m.at(c, t); };

  std::int64_t tap = 0, ttp = 0, tup = 0;
  for (int t = 0; t < 4; ++t) {
    tap += cell(Correctness::TP, static_cast<TrustCat>(t));
    tap += cell(Correctness::TN, static_cast<TrustCat>(t));
  }
  for (int c = 0; c < 4; ++c) {
    ttp += cell(static_cast<Correctness>(c), TrustCat::TT);
    ttp += cell(static_cast<Correctness>(c), TrustCat::FT);
    tup += cell(static_cast<Correctness>(c), TrustCat::TU);
    tup += cell(static_cast<Correctness>(c), TrustCat::FU);
  }

  const auto confident_correct = static_cast<double>(
      cell(Correctness::TP, TrustCat::TT) + cell(Correctness::TN, TrustCat::TT));

  TrustReport r;
  r.tap = tap;
  r.ttp = ttp;
  r.tup = tup;
  r.total = total;
  r.car = confident_correct / static_cast<double>(total);
  if (tap > 0) r.cpr = confident_correct / static_cast<double>(tap);
  if (ttp > 0) r.tpr_trust = confident_correct / static_cast<double>(ttp);
  r.ftr = static_cast<double>(cell(Correctness::FP, TrustCat::FT) +
                              cell(Correctness::FN, TrustCat::FT)) /
          static_cast<double>(total);
  r.rar = static_cast<double>(tup) / static_cast<double>(total);
  if (tup > 0) {
    r.mrr = static_cast<double>(cell(Correctness::TP, TrustCat::TU) +
                                cell(Correctness::TN, TrustCat::TU)) /
            static_cast<double>(tup);
    r.trr = static_cast<double>(cell(Correctness::FN, TrustCat::TU) +
                                cell(Correctness::FP, TrustCat::TU)) /
            static_cast<double>(tup);
    r.frr = static_cast<double>(cell(Correctness::TP, TrustCat::FU) +
                                cell(Correctness::TN, TrustCat::FU)) /
            static_cast<double>(tup);
  }
  return r;
}

std::string TrustConfusionMatrix::table() const {
  // Mirrors the trust-informed matrix layout: ground truth label x ground
  // truth trust on rows, model output label x trust flag on columns.
  auto c = [&](Correctness cc, TrustCat t) { return at(cc, t); };
  const std::int64_t grid[4][4] = {
      // output:      Pos/Trust               Pos/Untrust             Neg/Trust               Neg/Untrust
      {c(Correctness::TP, TrustCat::TT), c(Correctness::TP, TrustCat::FU),
       c(Correctness::FN, TrustCat::TT), c(Correctness::FN, TrustCat::FU)},
      {c(Correctness::TP, TrustCat::FT), c(Correctness::TP, TrustCat::TU),
       c(Correctness::FN, TrustCat::FT), c(Correctness::FN, TrustCat::TU)},
      {c(Correctness::FP, TrustCat::TT), c(Correctness::FP, TrustCat::FU),
       c(Correctness::TN, TrustCat::TT), c(Correctness::TN, TrustCat::FU)},
      {c(Correctness::FP, TrustCat::FT), c(Correctness::FP, TrustCat::TU),
       c(Correctness::TN, TrustCat::FT), c(Correctness::TN, TrustCat::TU)}};
  const char* cell_names[4][4] = {{"TPTT", "TPFU", "FNTT", "FNFU"},
                                  {"TPFT", "TPTU", "FNFT", "FNTU"},
                                  {"FPTT", "FPFU", "TNTT", "TNFU"},
                                  {"FPFT", "FPTU", "TNFT", "TNTU"}};
  const char* row_names[4] = {"pos/trustworthy  ", "pos/untrustworthy",
                              "neg/trustworthy  ", "neg/untrustworthy"};

  std::ostringstream os;
  os << "                        model output\n";
  os << "ground truth         pos/trust   pos/untrust   neg/trust   neg/untrust\n";
  for (int r = 0; r < 4; ++r) {
    os << row_names[r];
    for (int col = 0; col < 4; ++col) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), "  %6lld %s",
                    static_cast<long long>(grid[r][col]), cell_names[r][col]);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

std::string TrustConfusionMatrix::to_json() const {
  nlohmann::json j;
  j["tau"] = tau;
  for (int c = 0; c < 4; ++c)
    for (int t = 0; t < 4; ++t)
      j["cells"][std::string(kCorrNames[c]) + kTrustNames[t]] = cells[c][t];
  return j.dump();
}

std::string TrustReport::to_json() const {
  nlohmann::json j;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v)
      j[key] = *v;
    else
      j[key] = nullptr;
  };
  j["car"] = car;
  put("cpr", cpr);
  put("tpr", tpr_trust);
  j["ftr"] = ftr;
  j["rar"] = rar;
  put("mrr", mrr);
  put("trr", trr);
  put("frr", frr);
  j["tap"] = tap;
  j["ttp"] = ttp;
  j["tup"] = tup;
  j["total"] = total;
  return j.dump();
}

}  // namespace usnn
