#include "usnn/stacking.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "usnn/rng.hpp"

namespace usnn {

namespace {

enum StackStream : std::uint64_t { kMetaInit = 1 };

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

Standardizer Standardizer::fit(const Matrix& x) {
  Standardizer s;
  s.mean = x.colwise().mean();
  s.stdev = Vector::Ones(x.cols());
  if (x.rows() > 1) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      const double var = (x.col(c).array() - s.mean(c)).square().sum() /
                         static_cast<double>(x.rows() - 1);
      const double sd = std::sqrt(var);
      s.stdev(c) = sd > 0.0 ? sd : 1.0;
    }
  }
  return s;
}

Matrix Standardizer::apply(const Matrix& x) const {
  if (x.cols() != mean.size())
    throw Error("standardizer: dimension mismatch");
  return (x.rowwise() - mean.transpose()).array().rowwise() /
         stdev.transpose().array();
}

int MetaDataset::feature_dim() const {
  if (records.empty()) throw Error("meta dataset: empty");
  return static_cast<int>(records.front().features.size());
}

Matrix MetaDataset::meta_features() const {
  const auto n = static_cast<Eigen::Index>(records.size());
  const int d = feature_dim();
  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = records[static_cast<std::size_t>(i)].features.transpose();
  if (standardizer) x = standardizer->apply(x);

  Matrix out(n, layout.width(d));
  out.leftCols(d) = x;
  int col = d;
  if (layout.include_pe) {
    for (Eigen::Index i = 0; i < n; ++i)
      out(i, col) = records[static_cast<std::size_t>(i)].pe;
    ++col;
  }
  if (layout.append_mean_probs) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i, col) = base_mean_probs[static_cast<std::size_t>(i)](0);
      out(i, col + 1) = base_mean_probs[static_cast<std::size_t>(i)](1);
    }
  }
  return out;
}

Labels MetaDataset::z_labels() const {
  Labels z;
  z.reserve(records.size());
  for (const auto& r : records) z.push_back(r.z);
  return z;
}

MetaDataset build_meta_dataset(const Matrix& features,
                               const std::vector<BasePrediction>& base_preds,
                               const Labels& truths, double tau,
                               bool include_pe) {
  MetaFeatureLayout layout;
  layout.include_pe = include_pe;
  return build_meta_dataset(features, base_preds, truths, tau, layout);
}

MetaDataset build_meta_dataset(const Matrix& features,
                               const std::vector<BasePrediction>& base_preds,
                               const Labels& truths, double tau,
                               const MetaFeatureLayout& layout) {
  if (features.rows() != static_cast<Eigen::Index>(base_preds.size()) ||
      base_preds.size() != truths.size())
    throw Error("build_meta_dataset: length mismatch");
  if (!(tau > 0.0 && tau < 1.0))
    throw Error("build_meta_dataset: tau must be in (0,1)");

  MetaDataset meta;
  meta.tau = tau;
  meta.layout = layout;
  meta.records.reserve(base_preds.size());
  for (std::size_t i = 0; i < base_preds.size(); ++i) {
    MetaRecord r;
    r.features = features.row(static_cast<Eigen::Index>(i)).transpose();
    r.pe = base_preds[i].pe;
    r.base_label = base_preds[i].predicted_label;
    r.truth = truths[i];
    r.z = ground_truth_trust(r.base_label, r.truth, r.pe, tau);
    meta.records.push_back(std::move(r));
    meta.base_mean_probs.push_back(base_preds[i].mean_probs);
  }
  if (layout.standardize) meta.standardizer = Standardizer::fit(features);
  return meta;
}

Matrix assemble_meta_features(const Matrix& features,
                              const std::vector<BasePrediction>& preds,
                              const MetaFeatureLayout& layout,
                              const std::optional<Standardizer>& standardizer) {
  if (features.rows() != static_cast<Eigen::Index>(preds.size()))
    throw Error("assemble_meta_features: length mismatch");
  const auto n = features.rows();
  const auto d = static_cast<int>(features.cols());
  Matrix x = standardizer ? standardizer->apply(features) : features;

  Matrix out(n, layout.width(d));
  out.leftCols(d) = x;
  int col = d;
  if (layout.include_pe) {
    for (Eigen::Index i = 0; i < n; ++i)
      out(i, col) = preds[static_cast<std::size_t>(i)].pe;
    ++col;
  }
  if (layout.append_mean_probs) {
    for (Eigen::Index i = 0; i < n; ++i) {
      out(i, col) = preds[static_cast<std::size_t>(i)].mean_probs(0);
      out(i, col + 1) = preds[static_cast<std::size_t>(i)].mean_probs(1);
    }
  }
  return out;
}

Network train_meta(const MetaDataset& meta, TrainConfig cfg, const ArchSpec& arch) {
  if (meta.records.empty()) throw Error("train_meta: empty meta dataset");
  const Labels z = meta.z_labels();
  std::size_t ones = 0;
  for (int v : z) ones += static_cast<std::size_t>(v);
  if (ones == 0 || ones == z.size()) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", meta.tau);
    throw Error(std::string("degenerate meta labels: every z is ") +
                (ones == 0 ? "0" : "1") + " at tau=" + buf);
  }
  if (arch.input_dim != meta.meta_input_dim())
    throw Error("train_meta: arch input_dim " + std::to_string(arch.input_dim) +
                " != meta feature width " + std::to_string(meta.meta_input_dim()));

  Dataset ds;
  ds.features = meta.meta_features();
  ds.labels = z;
  ds.source = "meta";

  cfg.class_weights = class_weights(z);
  Network net = init_network(arch, rng::derive(cfg.shuffle_seed, {kMetaInit}));
  return train(std::move(net), ds, cfg);
}

std::vector<UsnnOutput> usnn_predict(
    const UqSetting& base_setting, const Network& meta, const Matrix& inputs,
    const MetaFeatureLayout& layout,
    const std::optional<Standardizer>& standardizer) {
  const std::vector<BasePrediction> preds =
      to_base_predictions(predict(base_setting, inputs));
  const Matrix mx = assemble_meta_features(inputs, preds, layout, standardizer);
  if (mx.cols() != meta.arch.input_dim)
    throw Error("usnn_predict: meta feature width " + std::to_string(mx.cols()) +
                " does not match meta network input_dim " +
                std::to_string(meta.arch.input_dim));
  const Matrix probs = forward(meta, mx, DropoutMode::disabled());

  std::vector<UsnnOutput> out;
  out.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    UsnnOutput o;
    o.label = preds[i].predicted_label;
    o.trust.trust_prob = probs(static_cast<Eigen::Index>(i), 1);
    o.trust.trust_flag = o.trust.trust_prob >= 0.5 ? 1 : 0;
    o.pe = preds[i].pe;
    out.push_back(o);
  }
  return out;
}

void write_meta_csv(const std::string& path, const MetaDataset& meta) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write meta csv: " + path);
  const int d = meta.feature_dim();
  for (int c = 0; c < d; ++c) out << "f" << c << ',';
  out << "pe,base_label,truth,z\n";
  for (const auto& r : meta.records) {
    for (int c = 0; c < d; ++c) out << format_double(r.features(c)) << ',';
    out << format_double(r.pe) << ',' << r.base_label << ',' << r.truth << ','
        << r.z << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

void write_outputs_csv(const std::string& path,
                       const std::vector<UsnnOutput>& outputs) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write outputs csv: " + path);
  out << "sample_id,label,trust_flag,trust_prob,pe\n";
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    const auto& o = outputs[i];
    out << i << ',' << o.label << ',' << o.trust.trust_flag << ','
        << format_double(o.trust.trust_prob) << ',' << format_double(o.pe) << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

}  // namespace usnn
