#include "usnn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "usnn/rng.hpp"

namespace usnn {

namespace {

enum SynthStream : std::uint64_t { kSynthDraw = 1, kSynthShuffle = 2 };
enum SplitStream : std::uint64_t { kSplitClass = 1 };

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_cell(const std::string& cell, std::size_t row, const std::string& col) {
  double v = 0.0;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw Error("unparsable cell \"" + cell + "\" at row " + std::to_string(row) +
                ", column \"" + col + "\"");
  }
  if (!std::isfinite(v)) {
    throw Error("non-finite value at row " + std::to_string(row) + ", column \"" +
                col + "\"");
  }
  return v;
}

// Shortest decimal that parses back to the same double.
std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void Dataset::validate() const {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw Error("dataset: feature row count " + std::to_string(features.rows()) +
                " != label count " + std::to_string(labels.size()));
  if (features.cols() < 1) throw Error("dataset: needs at least one feature");
  for (int y : labels)
    if (y != 0 && y != 1) throw Error("dataset: label outside {0,1}");
  if (!features.allFinite()) throw Error("dataset: non-finite feature value");
  if (!feature_names.empty() &&
      static_cast<Eigen::Index>(feature_names.size()) != features.cols())
    throw Error("dataset: feature_names length mismatch");
}

void SyntheticSpec::validate() const {
  if (n_samples < 1) throw Error("synthetic: n_samples must be positive");
  if (n_features < 1) throw Error("synthetic: n_features must be positive");
  if (!(class_balance > 0.0 && class_balance < 1.0))
    throw Error("synthetic: class_balance must be in (0,1)");
  if (!(separation >= 0.0) || !std::isfinite(separation))
    throw Error("synthetic: separation must be a non-negative real");
}

Dataset load_dataset(const std::string& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw Error("empty dataset file: " + path);
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const std::vector<std::string> header = split_line(line);
  if (header.empty()) throw Error("empty header row in " + path);

  Eigen::Index label_idx = -1;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == label_column) {
      label_idx = static_cast<Eigen::Index>(i);
      break;
    }
  if (label_idx < 0)
    throw Error("label column \"" + label_column + "\" not found in " + path);
  if (header.size() < 2)
    throw Error("dataset has no feature columns: " + path);

  std::vector<std::string> names;
  for (std::size_t i = 0; i < header.size(); ++i)
    if (static_cast<Eigen::Index>(i) != label_idx) names.push_back(header[i]);

  std::vector<std::vector<double>> rows;
  Labels labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> cells = split_line(line);
    if (cells.size() != header.size())
      throw Error("row " + std::to_string(lineno) + " has " +
                  std::to_string(cells.size()) + " cells, expected " +
                  std::to_string(header.size()));
    std::vector<double> row;
    row.reserve(header.size() - 1);
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (static_cast<Eigen::Index>(i) == label_idx) {
        const double y = parse_cell(cells[i], lineno, header[i]);
        if (y != 0.0 && y != 1.0)
          throw Error("label outside {0,1} at row " + std::to_string(lineno) +
                      ": " + cells[i]);
        labels.push_back(static_cast<int>(y));
      } else {
        row.push_back(parse_cell(cells[i], lineno, header[i]));
      }
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error("dataset has no data rows: " + path);

  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < names.size(); ++c)
      ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          rows[r][c];
  ds.labels = std::move(labels);
  ds.feature_names = std::move(names);
  ds.source = path;
  ds.validate();
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path,
                   const std::string& label_column) {
  ds.validate();
  std::ofstream out(path);
  if (!out) throw Error("cannot write dataset file: " + path);

  for (Eigen::Index c = 0; c < ds.dim(); ++c) {
    out << (ds.feature_names.empty() ? "f" + std::to_string(c)
                                     : ds.feature_names[static_cast<std::size_t>(c)]);
    out << ',';
  }
  out << label_column << '\n';

  for (Eigen::Index r = 0; r < ds.size(); ++r) {
    for (Eigen::Index c = 0; c < ds.dim(); ++c)
      out << format_double(ds.features(r, c)) << ',';
    out << ds.labels[static_cast<std::size_t>(r)] << '\n';
  }
  if (!out) throw Error("write failed: " + path);
}

Dataset select_rows(const Dataset& ds, const std::vector<Eigen::Index>& rows) {
  Dataset out;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.dim());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(rows[i]);
    out.labels.push_back(ds.labels[static_cast<std::size_t>(rows[i])]);
  }
  out.feature_names = ds.feature_names;
  out.source = ds.source;
  return out;
}

SplitPair stratified_split(const Dataset& ds, double test_fraction,
                           std::uint64_t seed) {
  ds.validate();
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw Error("test_fraction must be in (0,1)");

  std::vector<Eigen::Index> by_class[2];
  for (Eigen::Index i = 0; i < ds.size(); ++i)
    by_class[ds.labels[static_cast<std::size_t>(i)]].push_back(i);
  for (int c = 0; c < 2; ++c)
    if (by_class[c].size() < 2)
      throw Error("stratified_split: class " + std::to_string(c) +
                  " has fewer than 2 samples");

  std::vector<Eigen::Index> test_idx, train_idx;
  for (int c = 0; c < 2; ++c) {
    auto& idx = by_class[c];
    const auto count = static_cast<long long>(idx.size());
    long long take = std::llround(static_cast<double>(count) * test_fraction);
    take = std::clamp(take, 1ll, count - 1);  // both sides non-empty per class

    rng::Engine eng(rng::derive(seed, {kSplitClass, static_cast<std::uint64_t>(c)}));
    eng.shuffle(idx);
    test_idx.insert(test_idx.end(), idx.begin(), idx.begin() + take);
    train_idx.insert(train_idx.end(), idx.begin() + take, idx.end());
  }
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(train_idx.begin(), train_idx.end());

  SplitPair pair;
  pair.train = select_rows(ds, train_idx);
  pair.test = select_rows(ds, test_idx);
  pair.seed = seed;
  pair.test_fraction = test_fraction;
  return pair;
}

ClassWeights class_weights(const Labels& labels) {
  if (labels.empty()) throw Error("class_weights: empty label vector");
  long long n0 = 0, n1 = 0;
  for (int y : labels) (y == 0 ? n0 : n1)++;
  if (n0 == 0) throw Error("class_weights: class 0 absent");
  if (n1 == 0) throw Error("class_weights: class 1 absent");
  const double n = static_cast<double>(labels.size());
  return {n / (2.0 * static_cast<double>(n0)), n / (2.0 * static_cast<double>(n1))};
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const Eigen::Index n = spec.n_samples;
  const Eigen::Index d = spec.n_features;
  const auto n_pos = static_cast<Eigen::Index>(
      std::llround(static_cast<double>(n) * spec.class_balance));

  Dataset ds;
  ds.features.resize(n, d);
  ds.labels.assign(static_cast<std::size_t>(n), 0);

  // Positives first (mean +sep/2 on axis 0), then negatives (-sep/2), then a
  // seeded permutation so row order carries no class information.
  rng::Engine draw(rng::derive(spec.seed, {kSynthDraw}));
  const double offset = spec.separation / 2.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool positive = i < n_pos;
    ds.labels[static_cast<std::size_t>(i)] = positive ? 1 : 0;
    for (Eigen::Index j = 0; j < d; ++j) {
      double v = draw.gaussian();
      if (j == 0) v += positive ? offset : -offset;
      ds.features(i, j) = v;
    }
  }

  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng::Engine shuf(rng::derive(spec.seed, {kSynthShuffle}));
  shuf.shuffle(perm);
  Dataset out = select_rows(ds, perm);

  out.feature_names.clear();
  for (Eigen::Index j = 0; j < d; ++j)
    out.feature_names.push_back("f" + std::to_string(j));
  out.source = "synthetic";
  out.validate();
  return out;
}

}  // namespace usnn
