#include <doctest.h>

#include <cmath>

#include "usnn/network.hpp"
#include "usnn/rng.hpp"

using namespace usnn;

namespace {

ArchSpec small_arch(std::vector<int> hidden, int in, double dropout = 0.0) {
  ArchSpec a;
  a.hidden_layers = std::move(hidden);
  a.input_dim = in;
  a.output_dim = 2;
  a.dropout_rate = dropout;
  return a;
}

Matrix random_batch(rng::Engine& eng, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = eng.gaussian();
  return m;
}

Labels random_labels(rng::Engine& eng, std::size_t n) {
  Labels y(n);
  for (auto& v : y) v = static_cast<int>(eng.uniform_int(0, 1));
  return y;
}

// An XOR-by-quadrant dataset: learnable by one hidden layer, not linearly.
Dataset xor_dataset(int n, std::uint64_t seed) {
  rng::Engine eng(seed);
  Dataset ds;
  ds.features.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    const double x = eng.uniform(-1.0, 1.0);
    const double y = eng.uniform(-1.0, 1.0);
    ds.features(i, 0) = x;
    ds.features(i, 1) = y;
    ds.labels.push_back((x > 0.0) != (y > 0.0) ? 1 : 0);
  }
  ds.source = "xor";
  return ds;
}

}  // namespace

TEST_CASE("sample_architecture stays in the declared ranges and is deterministic") {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const ArchSpec a = sample_architecture(seed, 8);
    CHECK(a.hidden_layers.size() >= 1);
    CHECK(a.hidden_layers.size() <= 4);
    for (int w : a.hidden_layers) {
      CHECK(w >= 16);
      CHECK(w <= 512);
    }
    CHECK(a.dropout_rate == 0.3);
    CHECK(a.input_dim == 8);
  }
  const ArchSpec a = sample_architecture(123, 8);
  const ArchSpec b = sample_architecture(123, 8);
  CHECK(a.hidden_layers == b.hidden_layers);
}

TEST_CASE("sample_architecture layer counts are uniform over {1..4}") {
  int counts[5] = {0, 0, 0, 0, 0};
  const int trials = 10000;
  for (int s = 0; s < trials; ++s)
    counts[sample_architecture(static_cast<std::uint64_t>(s) * 2654435761ull + 17, 4)
               .hidden_layers.size()]++;
  for (int k = 1; k <= 4; ++k) {
    const double freq = static_cast<double>(counts[k]) / trials;
    CHECK(freq == doctest::Approx(0.25).epsilon(0.08));  // 0.25 +- 0.02
  }
}

TEST_CASE("init_network shapes chain and parameters are deterministic") {
  const ArchSpec a = small_arch({16}, 4);
  const Network net = init_network(a, 5);
  REQUIRE(net.layer_count() == 2);
  CHECK(net.weights[0].rows() == 4);
  CHECK(net.weights[0].cols() == 16);
  CHECK(net.weights[1].rows() == 16);
  CHECK(net.weights[1].cols() == 2);
  CHECK(net.biases[0].size() == 16);
  CHECK(net.biases[1].size() == 2);
  CHECK(net.biases[0].isZero());

  const Network net2 = init_network(a, 5);
  CHECK(net.weights[0] == net2.weights[0]);
  CHECK(net.weights[1] == net2.weights[1]);
}

TEST_CASE("init_network He variance: 1000 inits of a 256x256 layer") {
  const ArchSpec a = small_arch({256}, 256);
  double sum = 0.0, sq = 0.0;
  long long n = 0;
  for (int i = 0; i < 1000; ++i) {
    const Network net = init_network(a, static_cast<std::uint64_t>(i));
    const auto& w = net.weights[0];
    sum += w.sum();
    sq += w.array().square().sum();
    n += w.size();
  }
  const double mean = sum / static_cast<double>(n);
  const double var = sq / static_cast<double>(n) - mean * mean;
  CHECK(var == doctest::Approx(2.0 / 256.0).epsilon(0.10));
}

TEST_CASE("forward rows are probability vectors") {
  rng::Engine eng(7);
  const Network net = init_network(small_arch({32, 8}, 5), 1);
  const Matrix batch = random_batch(eng, 40, 5);
  const Matrix probs = forward(net, batch, DropoutMode::disabled());
  for (Eigen::Index r = 0; r < probs.rows(); ++r) {
    CHECK(std::abs(probs.row(r).sum() - 1.0) <= 1e-12);
    CHECK(probs.row(r).minCoeff() >= 0.0);
  }
}

TEST_CASE("forward dimension and finiteness errors") {
  const Network net = init_network(small_arch({8}, 3), 1);
  Matrix bad(2, 4);
  bad.setZero();
  CHECK_THROWS_AS(forward(net, bad, DropoutMode::disabled()), Error);
  Matrix inf(1, 3);
  inf << 1.0, std::numeric_limits<double>::infinity(), 0.0;
  CHECK_THROWS_AS(forward(net, inf, DropoutMode::disabled()), Error);
}

TEST_CASE("dropout rate 0: enabled mode equals disabled mode bitwise") {
  rng::Engine eng(9);
  const Network net = init_network(small_arch({64}, 6, 0.0), 2);
  const Matrix batch = random_batch(eng, 10, 6);
  const Matrix a = forward(net, batch, DropoutMode::disabled());
  const Matrix b = forward(net, batch, DropoutMode::with_seed(77));
  CHECK(a == b);
}

TEST_CASE("dropout masks differ across seeds and repeat within a seed") {
  rng::Engine eng(10);
  const Network net = init_network(small_arch({64}, 6, 0.3), 2);
  const Matrix batch = random_batch(eng, 4, 6);
  const Matrix a = forward(net, batch, DropoutMode::with_seed(1));
  const Matrix a2 = forward(net, batch, DropoutMode::with_seed(1));
  const Matrix b = forward(net, batch, DropoutMode::with_seed(2));
  CHECK(a == a2);
  CHECK(a != b);
}

TEST_CASE("inverted dropout is unbiased: mask average matches the "
          "no-dropout activations within 2%") {
  rng::Engine eng(11);
  const Network net = init_network(small_arch({64}, 6, 0.3), 3);
  const Matrix x = random_batch(eng, 1, 6);

  const ForwardTrace base = forward_trace(net, x, DropoutMode::disabled());
  Matrix acc = Matrix::Zero(1, 64);
  const int masks = 20000;
  for (int m = 0; m < masks; ++m)
    acc += forward_trace(net, x, DropoutMode::with_seed(static_cast<std::uint64_t>(m)))
               .activations[0];
  acc /= static_cast<double>(masks);

  for (Eigen::Index c = 0; c < 64; ++c) {
    const double expect = base.activations[0](0, c);
    if (expect > 0.05)  // relative error on units that actually fire
      CHECK(acc(0, c) == doctest::Approx(expect).epsilon(0.02));
  }
}

TEST_CASE("weighted_cross_entropy spot values") {
  ClassWeights unit = ClassWeights::unit();
  Matrix p1(1, 2);
  p1 << 1.0, 0.0;
  CHECK(weighted_cross_entropy(p1, {0}, unit) == doctest::Approx(0.0).epsilon(1e-9));

  Matrix p2(1, 2);
  p2 << 0.5, 0.5;
  CHECK(weighted_cross_entropy(p2, {1}, unit) ==
        doctest::Approx(0.6931471805599453).epsilon(1e-12));

  ClassWeights w{1.0, 2.0};
  CHECK(weighted_cross_entropy(p2, {1}, w) ==
        doctest::Approx(1.3862943611198906).epsilon(1e-12));

  CHECK_THROWS_AS(weighted_cross_entropy(p2, {1, 0}, unit), Error);
}

TEST_CASE("gradient check: analytic backprop matches central differences") {
  // Random small nets and batches; relative error floor guards the
  // comparison where both gradients are ~0. Seeds that place a pre-activation
  // within finite-difference reach of a relu kink are skipped and replaced.
  const double h = 1e-5;
  const double tol = 1e-4;
  int tested = 0;
  std::uint64_t seed = 1000;
  while (tested < 25) {
    ++seed;
    rng::Engine eng(seed);
    const int in = static_cast<int>(eng.uniform_int(2, 5));
    const int n_hidden = static_cast<int>(eng.uniform_int(1, 3));
    std::vector<int> widths;
    for (int l = 0; l < n_hidden; ++l)
      widths.push_back(static_cast<int>(eng.uniform_int(2, 8)));
    const bool with_dropout = eng.uniform01() < 0.3;
    Network net = init_network(small_arch(widths, in, with_dropout ? 0.4 : 0.0),
                               eng.next_u64());
    const Matrix batch = random_batch(eng, static_cast<Eigen::Index>(eng.uniform_int(2, 6)), in);
    const Labels labels = random_labels(eng, static_cast<std::size_t>(batch.rows()));
    const ClassWeights weights{eng.uniform(0.5, 2.0), eng.uniform(0.5, 2.0)};
    const DropoutMode mode =
        with_dropout ? DropoutMode::with_seed(eng.next_u64()) : DropoutMode::disabled();

    const ForwardTrace trace = forward_trace(net, batch, mode);
    double min_pre = 1.0;
    for (const auto& z : trace.pre_activations)
      min_pre = std::min(min_pre, z.cwiseAbs().minCoeff());
    if (min_pre < 1e-3) continue;  // too close to a relu kink for FD

    const Gradients g = backprop(net, batch, labels, weights, mode);
    auto loss_at = [&](const Network& n2) {
      return weighted_cross_entropy(forward(n2, batch, mode), labels, weights);
    };
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      for (Eigen::Index r = 0; r < net.weights[l].rows(); ++r)
        for (Eigen::Index c = 0; c < net.weights[l].cols(); ++c) {
          Network plus = net, minus = net;
          plus.weights[l](r, c) += h;
          minus.weights[l](r, c) -= h;
          const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
          const double an = g.weights[l](r, c);
          const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
          CHECK(rel < tol);
        }
      for (Eigen::Index b = 0; b < net.biases[l].size(); ++b) {
        Network plus = net, minus = net;
        plus.biases[l](b) += h;
        minus.biases[l](b) -= h;
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        const double an = g.biases[l](b);
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
        CHECK(rel < tol);
      }
    }
    ++tested;
  }
}

TEST_CASE("train learns the xor dataset") {
  const Dataset ds = xor_dataset(200, 21);
  Network net = init_network(small_arch({32}, 2, 0.0), 3);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 32;
  cfg.learning_rate = 5e-3;
  cfg.shuffle_seed = 4;

  const double loss_before =
      weighted_cross_entropy(forward(net, ds.features, DropoutMode::disabled()),
                             ds.labels, cfg.class_weights);
  net = train(std::move(net), ds, cfg);
  const double loss_after =
      weighted_cross_entropy(forward(net, ds.features, DropoutMode::disabled()),
                             ds.labels, cfg.class_weights);
  CHECK(loss_after < loss_before);

  const Matrix probs = forward(net, ds.features, DropoutMode::disabled());
  long long correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int pred = probs(i, 0) >= probs(i, 1) ? 0 : 1;
    if (pred == ds.labels[static_cast<std::size_t>(i)]) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) >= 0.95);
}

TEST_CASE("train with learning_rate 0 leaves parameters unchanged") {
  const Dataset ds = xor_dataset(64, 22);
  const Network net = init_network(small_arch({16}, 2, 0.2), 3);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  cfg.shuffle_seed = 5;
  const Network out = train(net, ds, cfg);
  for (int l = 0; l < net.layer_count(); ++l) {
    CHECK(out.weights[static_cast<std::size_t>(l)] == net.weights[static_cast<std::size_t>(l)]);
    CHECK(out.biases[static_cast<std::size_t>(l)] == net.biases[static_cast<std::size_t>(l)]);
  }
}

TEST_CASE("unit weights equal balanced weights on a balanced dataset") {
  // With n0 == n1 the balanced formula gives w = (1,1), so per-batch losses
  // coincide for identical shuffles; the trained parameters must too.
  Dataset ds = xor_dataset(100, 23);
  for (std::size_t i = 0; i < 50; ++i) ds.labels[i] = 0;
  for (std::size_t i = 50; i < 100; ++i) ds.labels[i] = 1;
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.shuffle_seed = 6;
  cfg.class_weights = ClassWeights::unit();
  TrainConfig cfg2 = cfg;
  cfg2.class_weights = class_weights(ds.labels);
  REQUIRE(cfg2.class_weights.w0 == 1.0);
  REQUIRE(cfg2.class_weights.w1 == 1.0);

  const Network net = init_network(small_arch({16}, 2, 0.2), 3);
  const Network a = train(net, ds, cfg);
  const Network b = train(net, ds, cfg2);
  CHECK(a.weights[0] == b.weights[0]);
  CHECK(a.weights[1] == b.weights[1]);
}

TEST_CASE("training is bit-deterministic given all seeds") {
  const Dataset ds = xor_dataset(80, 24);
  TrainConfig cfg;
  cfg.epochs = 6;
  cfg.shuffle_seed = 77;
  const Network net = init_network(small_arch({24}, 2, 0.3), 9);
  const Network a = train(net, ds, cfg);
  const Network b = train(net, ds, cfg);
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    CHECK(a.weights[l] == b.weights[l]);
    CHECK(a.biases[l] == b.biases[l]);
  }
}

TEST_CASE("train reports empty datasets and dimension mismatches") {
  const Network net = init_network(small_arch({8}, 2, 0.0), 1);
  TrainConfig cfg;
  Dataset empty;
  empty.features.resize(0, 2);
  CHECK_THROWS_AS(train(net, empty, cfg), Error);

  Dataset wrong = xor_dataset(10, 1);
  wrong.features.conservativeResize(10, 3);
  wrong.features.col(2).setZero();
  CHECK_THROWS_AS(train(net, wrong, cfg), Error);
}

TEST_CASE("early stopping returns the best-validation parameters") {
  const Dataset ds = xor_dataset(300, 25);
  TrainConfig cfg;
  cfg.epochs = 150;
  cfg.learning_rate = 5e-3;
  cfg.shuffle_seed = 8;
  cfg.early_stop = EarlyStop{10, 0.2};
  Network net = init_network(small_arch({32}, 2, 0.0), 10);
  net = train(std::move(net), ds, cfg);
  // Not asserting *when* it stopped, only that the result is usable.
  const Matrix probs = forward(net, ds.features, DropoutMode::disabled());
  long long correct = 0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    if ((probs(i, 0) >= probs(i, 1) ? 0 : 1) == ds.labels[static_cast<std::size_t>(i)])
      ++correct;
  CHECK(static_cast<double>(correct) / static_cast<double>(ds.size()) > 0.8);
}
