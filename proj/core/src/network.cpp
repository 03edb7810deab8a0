#include "usnn/network.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "usnn/rng.hpp"

namespace usnn {

namespace {

enum NetStream : std::uint64_t {
  kDropoutMask = 1,
  kShuffleEpoch = 2,
  kTrainDropout = 3,
  kValSplit = 4,
};

constexpr double kLogEps = 1e-12;

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                    std::uint64_t seed, int layer) {
  rng::Engine eng(rng::derive(seed, {kDropoutMask, static_cast<std::uint64_t>(layer)}));
  const double scale = 1.0 / (1.0 - rate);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = eng.uniform01() < rate ? 0.0 : scale;
  return m;
}

void softmax_rows(Matrix& logits) {
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double mx = logits.row(r).maxCoeff();
    logits.row(r) = (logits.row(r).array() - mx).exp();
    logits.row(r) /= logits.row(r).sum();
  }
}

}  // namespace

void ArchSpec::validate() const {
  if (input_dim < 1) throw Error("arch: input_dim must be positive");
  if (output_dim < 1) throw Error("arch: output_dim must be positive");
  if (hidden_layers.empty()) throw Error("arch: at least one hidden layer");
  for (int w : hidden_layers)
    if (w < 1) throw Error("arch: hidden widths must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
    throw Error("arch: dropout_rate must be in [0,1)");
}

void Network::validate() const {
  arch.validate();
  const std::size_t n_layers = arch.hidden_layers.size() + 1;
  if (weights.size() != n_layers || biases.size() != n_layers)
    throw Error("network: layer count mismatch");
  int in = arch.input_dim;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const int out = l < arch.hidden_layers.size() ? arch.hidden_layers[l]
                                                  : arch.output_dim;
    if (weights[l].rows() != in || weights[l].cols() != out)
      throw Error("network: weight shape mismatch at layer " + std::to_string(l));
    if (biases[l].size() != out)
      throw Error("network: bias shape mismatch at layer " + std::to_string(l));
    if (!weights[l].allFinite() || !biases[l].allFinite())
      throw Error("network: non-finite parameter at layer " + std::to_string(l));
    in = out;
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error("train config: epochs must be positive");
  if (batch_size < 1) throw Error("train config: batch_size must be positive");
  if (!(learning_rate >= 0.0)) throw Error("train config: learning_rate must be >= 0");
  if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) ||
      !(adam_beta2 > 0.0 && adam_beta2 < 1.0))
    throw Error("train config: adam betas must be in (0,1)");
  if (class_weights.w0 <= 0.0 || class_weights.w1 <= 0.0)
    throw Error("train config: class weights must be strictly positive");
  if (early_stop) {
    if (early_stop->patience < 1) throw Error("train config: patience must be positive");
    if (!(early_stop->validation_fraction > 0.0 && early_stop->validation_fraction < 1.0))
      throw Error("train config: validation_fraction must be in (0,1)");
  }
}

ArchSpec sample_architecture(std::uint64_t rng_seed, int input_dim) {
  if (input_dim < 1) throw Error("sample_architecture: input_dim must be positive");
  rng::Engine eng(rng_seed);
  ArchSpec arch;
  arch.input_dim = input_dim;
  arch.output_dim = 2;
  arch.dropout_rate = 0.3;
  const auto n_layers = eng.uniform_int(1, 4);
  for (std::uint64_t l = 0; l < n_layers; ++l)
    arch.hidden_layers.push_back(static_cast<int>(eng.uniform_int(16, 512)));
  return arch;
}

Network init_network(const ArchSpec& arch, std::uint64_t seed) {
  arch.validate();
  Network net;
  net.arch = arch;
  net.init_seed = seed;

  rng::Engine eng(seed);
  int in = arch.input_dim;
  for (std::size_t l = 0; l <= arch.hidden_layers.size(); ++l) {
    const int out = l < arch.hidden_layers.size() ? arch.hidden_layers[l]
                                                  : arch.output_dim;
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    Matrix w(in, out);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = stddev * eng.gaussian();
    net.weights.push_back(std::move(w));
    net.biases.push_back(Vector::Zero(out));
    in = out;
  }
  return net;
}

ForwardTrace forward_trace(const Network& net, const Matrix& batch,
                           const DropoutMode& mode) {
  if (batch.cols() != net.arch.input_dim)
    throw Error("forward: batch has " + std::to_string(batch.cols()) +
                " columns, network expects " + std::to_string(net.arch.input_dim));
  if (!batch.allFinite()) throw Error("forward: non-finite input");

  const bool drop = mode.enabled && net.arch.dropout_rate > 0.0;
  const auto n_hidden = static_cast<int>(net.arch.hidden_layers.size());

  ForwardTrace t;
  Matrix a = batch;
  for (int l = 0; l < n_hidden; ++l) {
    Matrix z = (a * net.weights[static_cast<std::size_t>(l)]).rowwise() +
               net.biases[static_cast<std::size_t>(l)].transpose();
    t.pre_activations.push_back(z);
    a = z.cwiseMax(0.0);
    if (drop)
      a = a.cwiseProduct(
          dropout_mask(a.rows(), a.cols(), net.arch.dropout_rate, mode.seed, l));
    t.activations.push_back(a);
  }
  t.logits = (a * net.weights.back()).rowwise() + net.biases.back().transpose();
  t.probs = t.logits;
  softmax_rows(t.probs);
  return t;
}

Matrix forward(const Network& net, const Matrix& batch, const DropoutMode& mode) {
  return forward_trace(net, batch, mode).probs;
}

double weighted_cross_entropy(const Matrix& probs, const Labels& labels,
                              const ClassWeights& weights) {
  if (probs.rows() != static_cast<Eigen::Index>(labels.size()))
    throw Error("weighted_cross_entropy: length mismatch");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    sum += weights.of(y) * -std::log(std::max(probs(i, y), kLogEps));
  }
  return sum / static_cast<double>(probs.rows());
}

Gradients backprop(const Network& net, const Matrix& batch, const Labels& labels,
                   const ClassWeights& weights, const DropoutMode& mode) {
  if (batch.rows() != static_cast<Eigen::Index>(labels.size()))
    throw Error("backprop: batch/label length mismatch");
  const ForwardTrace t = forward_trace(net, batch, mode);
  const auto n = static_cast<double>(batch.rows());
  const auto n_hidden = static_cast<int>(net.arch.hidden_layers.size());
  const bool drop = mode.enabled && net.arch.dropout_rate > 0.0;

  Gradients g;
  g.weights.resize(net.weights.size());
  g.biases.resize(net.biases.size());
  g.loss = weighted_cross_entropy(t.probs, labels, weights);

  // dL/dlogits for the mean weighted cross-entropy
  Matrix delta = t.probs;
  for (Eigen::Index i = 0; i < delta.rows(); ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    delta(i, y) -= 1.0;
    delta.row(i) *= weights.of(y) / n;
  }

  for (int l = n_hidden; l >= 0; --l) {
    const Matrix& input =
        l == 0 ? batch : t.activations[static_cast<std::size_t>(l - 1)];
    g.weights[static_cast<std::size_t>(l)] = input.transpose() * delta;
    g.biases[static_cast<std::size_t>(l)] = delta.colwise().sum();
    if (l == 0) break;
    delta = delta * net.weights[static_cast<std::size_t>(l)].transpose();
    if (drop)
      delta = delta.cwiseProduct(dropout_mask(delta.rows(), delta.cols(),
                                              net.arch.dropout_rate, mode.seed,
                                              l - 1));
    delta = delta.cwiseProduct(
        (t.pre_activations[static_cast<std::size_t>(l - 1)].array() > 0.0)
            .cast<double>()
            .matrix());
  }
  return g;
}

namespace {

struct AdamState {
  std::vector<Matrix> mw, vw;
  std::vector<Vector> mb, vb;
  long long t = 0;

  explicit AdamState(const Network& net) {
    for (const auto& w : net.weights) {
      mw.push_back(Matrix::Zero(w.rows(), w.cols()));
      vw.push_back(Matrix::Zero(w.rows(), w.cols()));
    }
    for (const auto& b : net.biases) {
      mb.push_back(Vector::Zero(b.size()));
      vb.push_back(Vector::Zero(b.size()));
    }
  }
};

void apply_update(Network& net, const Gradients& g, AdamState& adam,
                  const TrainConfig& cfg) {
  if (cfg.optimizer == Optimizer::sgd) {
    for (std::size_t l = 0; l < net.weights.size(); ++l) {
      net.weights[l] -= cfg.learning_rate * g.weights[l];
      net.biases[l] -= cfg.learning_rate * g.biases[l];
    }
    return;
  }
  adam.t += 1;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    adam.mw[l] = b1 * adam.mw[l] + (1.0 - b1) * g.weights[l];
    adam.vw[l] = b2 * adam.vw[l] + (1.0 - b2) * g.weights[l].cwiseProduct(g.weights[l]);
    net.weights[l] -= cfg.learning_rate *
                      (adam.mw[l] / bc1)
                          .cwiseQuotient(((adam.vw[l] / bc2).cwiseSqrt().array() +
                                          cfg.adam_epsilon)
                                             .matrix());
    adam.mb[l] = b1 * adam.mb[l] + (1.0 - b1) * g.biases[l];
    adam.vb[l] = b2 * adam.vb[l] + (1.0 - b2) * g.biases[l].cwiseProduct(g.biases[l]);
    net.biases[l] -= cfg.learning_rate *
                     (adam.mb[l] / bc1)
                         .cwiseQuotient(((adam.vb[l] / bc2).cwiseSqrt().array() +
                                         cfg.adam_epsilon)
                                            .matrix());
  }
}

}  // namespace

Network train(Network net, const Dataset& train_set, const TrainConfig& cfg) {
  cfg.validate();
  net.validate();
  if (train_set.size() == 0) throw Error("train: empty dataset");
  if (train_set.dim() != net.arch.input_dim)
    throw Error("train: dataset dim " + std::to_string(train_set.dim()) +
                " != network input_dim " + std::to_string(net.arch.input_dim));

  const Dataset* fit_set = &train_set;
  Dataset fit_storage, val_storage;
  if (cfg.early_stop) {
    SplitPair sp = stratified_split(train_set, cfg.early_stop->validation_fraction,
                                    rng::derive(cfg.shuffle_seed, {kValSplit}));
    fit_storage = std::move(sp.train);
    val_storage = std::move(sp.test);
    fit_set = &fit_storage;
  }

  const Eigen::Index n = fit_set->size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;

  AdamState adam(net);
  double best_val = std::numeric_limits<double>::infinity();
  Network best = net;
  int since_best = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng::Engine shuf(rng::derive(cfg.shuffle_seed,
                                 {kShuffleEpoch, static_cast<std::uint64_t>(epoch)}));
    shuf.shuffle(order);

    Eigen::Index pos = 0;
    int batch_idx = 0;
    while (pos < n) {
      const Eigen::Index take =
          std::min<Eigen::Index>(cfg.batch_size, n - pos);
      Matrix bx(take, fit_set->dim());
      Labels by(static_cast<std::size_t>(take));
      for (Eigen::Index i = 0; i < take; ++i) {
        bx.row(i) = fit_set->features.row(order[static_cast<std::size_t>(pos + i)]);
        by[static_cast<std::size_t>(i)] =
            fit_set->labels[static_cast<std::size_t>(order[static_cast<std::size_t>(pos + i)])];
      }
      const DropoutMode mode =
          net.arch.dropout_rate > 0.0
              ? DropoutMode::with_seed(rng::derive(
                    cfg.shuffle_seed, {kTrainDropout,
                                       static_cast<std::uint64_t>(epoch),
                                       static_cast<std::uint64_t>(batch_idx)}))
              : DropoutMode::disabled();
      const Gradients g = backprop(net, bx, by, cfg.class_weights, mode);
      if (!std::isfinite(g.loss))
        throw Error("train: non-finite loss at epoch " + std::to_string(epoch) +
                    ", batch " + std::to_string(batch_idx));
      apply_update(net, g, adam, cfg);
      pos += take;
      ++batch_idx;
    }

    if (cfg.early_stop) {
      const Matrix vp = forward(net, val_storage.features, DropoutMode::disabled());
      const double vloss = weighted_cross_entropy(vp, val_storage.labels,
                                                  cfg.class_weights);
      if (vloss < best_val) {
        best_val = vloss;
        best = net;
        since_best = 0;
      } else if (++since_best >= cfg.early_stop->patience) {
        return best;
      }
    }
  }
  return cfg.early_stop ? best : net;
}

}  // namespace usnn
