#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "usnn/dataset.hpp"
#include "usnn/rng.hpp"

using namespace usnn;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("load_dataset reads features and labels in file order") {
  const std::string p = temp_path("usnn_load_basic.csv");
  write_text(p, "f0,f1,label\n0.1,0.2,1\n0.3,0.4,0\n0.5,0.6,1\n");
  const Dataset ds = load_dataset(p, "label");
  REQUIRE(ds.size() == 3);
  REQUIRE(ds.dim() == 2);
  CHECK(ds.features(0, 0) == 0.1);
  CHECK(ds.features(0, 1) == 0.2);
  CHECK(ds.features(1, 0) == 0.3);
  CHECK(ds.features(2, 1) == 0.6);
  CHECK(ds.labels == Labels{1, 0, 1});
  CHECK(ds.feature_names == std::vector<std::string>{"f0", "f1"});
}

TEST_CASE("load_dataset accepts label column in any position") {
  const std::string p = temp_path("usnn_load_mid.csv");
  write_text(p, "a,label,b\n1.5,0,2.5\n3.5,1,4.5\n");
  const Dataset ds = load_dataset(p, "label");
  CHECK(ds.features(0, 0) == 1.5);
  CHECK(ds.features(0, 1) == 2.5);
  CHECK(ds.labels == Labels{0, 1});
}

TEST_CASE("load_dataset error paths") {
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_dataset("/nonexistent/nope.csv", "label"), Error);
  }
  SUBCASE("NaN cell names row and column") {
    const std::string p = temp_path("usnn_load_nan.csv");
    write_text(p, "f0,label\n0.5,1\nNaN,0\n");
    CHECK_THROWS_WITH_AS(load_dataset(p, "label"),
                         doctest::Contains("row 3"), Error);
  }
  SUBCASE("garbage cell names row and column") {
    const std::string p = temp_path("usnn_load_bad.csv");
    write_text(p, "f0,label\nabc,1\n");
    CHECK_THROWS_WITH_AS(load_dataset(p, "label"), doctest::Contains("f0"), Error);
  }
  SUBCASE("label outside {0,1}") {
    const std::string p = temp_path("usnn_load_lbl.csv");
    write_text(p, "f0,label\n0.5,2\n");
    CHECK_THROWS_WITH_AS(load_dataset(p, "label"),
                         doctest::Contains("label outside {0,1}"), Error);
  }
  SUBCASE("missing label column") {
    const std::string p = temp_path("usnn_load_nocol.csv");
    write_text(p, "f0,f1\n0.5,0.6\n");
    CHECK_THROWS_AS(load_dataset(p, "y"), Error);
  }
  SUBCASE("empty file") {
    const std::string p = temp_path("usnn_load_empty.csv");
    write_text(p, "");
    CHECK_THROWS_AS(load_dataset(p, "label"), Error);
  }
  SUBCASE("header only") {
    const std::string p = temp_path("usnn_load_hdr.csv");
    write_text(p, "f0,label\n");
    CHECK_THROWS_AS(load_dataset(p, "label"), Error);
  }
  SUBCASE("ragged row") {
    const std::string p = temp_path("usnn_load_ragged.csv");
    write_text(p, "f0,f1,label\n0.1,1\n");
    CHECK_THROWS_AS(load_dataset(p, "label"), Error);
  }
}

TEST_CASE("write/load round-trips the numeric content bit-exactly") {
  rng::Engine eng(42);
  Dataset ds;
  ds.features.resize(37, 5);
  for (Eigen::Index r = 0; r < ds.size(); ++r)
    for (Eigen::Index c = 0; c < 5; ++c)
      ds.features(r, c) = std::ldexp(eng.gaussian(), static_cast<int>(eng.uniform_int(0, 40)) - 20);
  for (int i = 0; i < 37; ++i) ds.labels.push_back(static_cast<int>(eng.uniform_int(0, 1)));
  ds.source = "prop";

  const std::string p = temp_path("usnn_roundtrip.csv");
  write_dataset(ds, p);
  const Dataset back = load_dataset(p, "label");
  REQUIRE(back.size() == ds.size());
  REQUIRE(back.dim() == ds.dim());
  CHECK(back.features == ds.features);  // exact, not approximate
  CHECK(back.labels == ds.labels);
}

TEST_CASE("stratified_split hits exact per-class counts") {
  Dataset ds;
  ds.features.resize(10, 2);
  for (Eigen::Index i = 0; i < 10; ++i) {
    ds.features(i, 0) = static_cast<double>(i);
    ds.features(i, 1) = 0.0;
    ds.labels.push_back(i < 5 ? 0 : 1);
  }

  const SplitPair sp = stratified_split(ds, 0.4, 99);
  long long test_pos = 0, test_neg = 0;
  for (int y : sp.test.labels) (y == 1 ? test_pos : test_neg)++;
  CHECK(test_pos == 2);
  CHECK(test_neg == 2);
  CHECK(sp.train.size() + sp.test.size() == 10);

  SUBCASE("deterministic for a fixed seed") {
    const SplitPair sp2 = stratified_split(ds, 0.4, 99);
    CHECK(sp2.test.features == sp.test.features);
    CHECK(sp2.train.features == sp.train.features);
  }
  SUBCASE("disjoint cover of the parent") {
    // Feature column 0 is a unique id; union of ids must be 0..9.
    std::vector<double> ids;
    for (Eigen::Index i = 0; i < sp.train.size(); ++i)
      ids.push_back(sp.train.features(i, 0));
    for (Eigen::Index i = 0; i < sp.test.size(); ++i)
      ids.push_back(sp.test.features(i, 0));
    std::sort(ids.begin(), ids.end());
    for (int i = 0; i < 10; ++i) CHECK(ids[static_cast<std::size_t>(i)] == i);
  }
}

TEST_CASE("stratified_split rounding: 6 samples, fraction 0.34") {
  Dataset ds;
  ds.features.resize(6, 1);
  for (Eigen::Index i = 0; i < 6; ++i) {
    ds.features(i, 0) = static_cast<double>(i);
    ds.labels.push_back(i < 3 ? 0 : 1);
  }
  const SplitPair sp = stratified_split(ds, 0.34, 7);
  long long pos = 0, neg = 0;
  for (int y : sp.test.labels) (y == 1 ? pos : neg)++;
  CHECK(pos == 1);  // round(3 * 0.34) = 1
  CHECK(neg == 1);
}

TEST_CASE("stratified_split errors") {
  Dataset ds;
  ds.features.resize(3, 1);
  ds.features << 1, 2, 3;
  ds.labels = {0, 0, 1};
  CHECK_THROWS_AS(stratified_split(ds, 0.5, 1), Error);  // class 1 has 1 sample
  ds.labels = {0, 0, 0};
  CHECK_THROWS_AS(stratified_split(ds, 0.5, 1), Error);
  ds.labels = {0, 1, 1};
  CHECK_THROWS_AS(stratified_split(ds, 1.5, 1), Error);
  CHECK_THROWS_AS(stratified_split(ds, 0.0, 1), Error);
}

TEST_CASE("stratification property: per-class test counts stay within one "
          "sample of the exact fraction") {
  rng::Engine eng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n0 = static_cast<Eigen::Index>(eng.uniform_int(2, 120));
    const auto n1 = static_cast<Eigen::Index>(eng.uniform_int(2, 120));
    const double f = eng.uniform(0.05, 0.95);
    Dataset ds;
    ds.features.resize(n0 + n1, 1);
    for (Eigen::Index i = 0; i < n0 + n1; ++i) {
      ds.features(i, 0) = eng.gaussian();
      ds.labels.push_back(i < n0 ? 0 : 1);
    }
    const SplitPair sp = stratified_split(ds, f, eng.next_u64());
    long long t0 = 0, t1 = 0;
    for (int y : sp.test.labels) (y == 1 ? t1 : t0)++;
    CHECK(std::abs(static_cast<double>(t0) - static_cast<double>(n0) * f) <= 1.0);
    CHECK(std::abs(static_cast<double>(t1) - static_cast<double>(n1) * f) <= 1.0);
    CHECK(sp.train.size() + sp.test.size() == n0 + n1);
  }
}

TEST_CASE("class_weights follows w_c = N / (C * N_c)") {
  const ClassWeights w = class_weights({1, 1, 1, 0});
  CHECK(w.w0 == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(w.w1 == doctest::Approx(4.0 / 6.0).epsilon(1e-12));

  const ClassWeights balanced = class_weights({0, 1});
  CHECK(balanced.w0 == 1.0);
  CHECK(balanced.w1 == 1.0);

  CHECK_THROWS_AS(class_weights({0, 0, 0, 0}), Error);
  CHECK_THROWS_AS(class_weights({}), Error);
}

TEST_CASE("weighted-count identity: sum_c N_c * w_c == N") {
  rng::Engine eng(5);
  for (int trial = 0; trial < 30; ++trial) {
    Labels labels;
    const auto n0 = eng.uniform_int(1, 500);
    const auto n1 = eng.uniform_int(1, 500);
    labels.insert(labels.end(), n0, 0);
    labels.insert(labels.end(), n1, 1);
    const ClassWeights w = class_weights(labels);
    const double total = static_cast<double>(n0) * w.w0 + static_cast<double>(n1) * w.w1;
    CHECK(total == doctest::Approx(static_cast<double>(labels.size())).epsilon(1e-12));
  }
}

TEST_CASE("make_synthetic is deterministic and respects the spec") {
  SyntheticSpec spec;
  spec.n_samples = 500;
  spec.n_features = 3;
  spec.class_balance = 0.35;
  spec.separation = 2.0;
  spec.seed = 11;

  const Dataset a = make_synthetic(spec);
  const Dataset b = make_synthetic(spec);
  CHECK(a.features == b.features);  // bit-identical per seed
  CHECK(a.labels == b.labels);

  long long pos = 0;
  for (int y : a.labels) pos += y;
  CHECK(pos == 175);  // round(500 * 0.35)
  CHECK(a.dim() == 3);
}

TEST_CASE("make_synthetic: separation 8 is nearly Bayes-separable") {
  SyntheticSpec spec;
  spec.n_samples = 2000;
  spec.n_features = 2;
  spec.separation = 8.0;
  spec.seed = 3;
  const Dataset ds = make_synthetic(spec);

  // Classify by nearest class mean (+-sep/2 on axis 0): the known-optimal
  // rule. Expected error Phi(-4) ~ 3.2e-5, so < 0.1% here.
  long long wrong = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    const int pred = ds.features(i, 0) >= 0.0 ? 1 : 0;
    if (pred != ds.labels[static_cast<std::size_t>(i)]) ++wrong;
  }
  CHECK(static_cast<double>(wrong) / static_cast<double>(ds.size()) < 0.001);
}

TEST_CASE("make_synthetic: separation 0 leaves the classes indistinguishable") {
  SyntheticSpec spec;
  spec.n_samples = 2000;
  spec.n_features = 2;
  spec.separation = 0.0;
  spec.seed = 3;
  const Dataset ds = make_synthetic(spec);

  double mean_pos = 0.0, mean_neg = 0.0;
  long long n_pos = 0, n_neg = 0;
  for (Eigen::Index i = 0; i < ds.size(); ++i) {
    if (ds.labels[static_cast<std::size_t>(i)] == 1) {
      mean_pos += ds.features(i, 0);
      ++n_pos;
    } else {
      mean_neg += ds.features(i, 0);
      ++n_neg;
    }
  }
  mean_pos /= static_cast<double>(n_pos);
  mean_neg /= static_cast<double>(n_neg);
  CHECK(std::abs(mean_pos - mean_neg) < 0.15);  // ~3 sigma of the estimator
}

TEST_CASE("make_synthetic validates its spec") {
  SyntheticSpec spec;
  spec.n_samples = 0;
  spec.n_features = 2;
  CHECK_THROWS_AS(make_synthetic(spec), Error);
  spec.n_samples = 10;
  spec.class_balance = 1.0;
  CHECK_THROWS_AS(make_synthetic(spec), Error);
  spec.class_balance = 0.5;
  spec.separation = -1.0;
  CHECK_THROWS_AS(make_synthetic(spec), Error);
}
