#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "usnn/dataset.hpp"

namespace usnn {

/// Dense feed-forward classifier shape. Sampled architectures draw 1..4
/// hidden layers with 16..512 units each; hand-built specs may use any
/// positive widths. Dropout sits after every hidden activation, never on the
/// input or output layer.
struct ArchSpec {
  std::vector<int> hidden_layers;
  int input_dim = 0;
  int output_dim = 2;
  double dropout_rate = 0.3;

  void validate() const;
};

/// Weight matrices are fan_in x fan_out; layer l maps activations of width
/// weights[l].rows() to weights[l].cols(). Immutable value type: training
/// returns a new Network.
struct Network {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  ArchSpec arch;
  std::uint64_t init_seed = 0;

  int layer_count() const { return static_cast<int>(weights.size()); }
  void validate() const;
};

struct DropoutMode {
  bool enabled = false;
  std::uint64_t seed = 0;

  static DropoutMode disabled() { return {false, 0}; }
  static DropoutMode with_seed(std::uint64_t s) { return {true, s}; }
};

enum class Optimizer { adam, sgd };

struct EarlyStop {
  int patience = 5;
  double validation_fraction = 0.1;
};

struct TrainConfig {
  int epochs = 60;
  int batch_size = 64;
  double learning_rate = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  ClassWeights class_weights = ClassWeights::unit();
  std::uint64_t shuffle_seed = 0;
  std::optional<EarlyStop> early_stop;

  void validate() const;
};

/// Hidden layer count uniform in {1..4}, widths uniform in [16,512],
/// dropout_rate 0.3. Deterministic per seed.
ArchSpec sample_architecture(std::uint64_t rng_seed, int input_dim);

/// He initialization: weights ~ N(0, 2/fan_in), biases zero.
Network init_network(const ArchSpec& arch, std::uint64_t seed);

/// Batch forward pass; rows of the result are softmax probability vectors.
/// With dropout enabled, each hidden activation is zeroed independently with
/// probability dropout_rate and survivors are scaled by 1/(1-rate) (inverted
/// dropout); masks are a pure function of (mode.seed, layer, batch shape).
Matrix forward(const Network& net, const Matrix& batch, const DropoutMode& mode);

/// Everything a single pass produces, for tests and backprop.
struct ForwardTrace {
  std::vector<Matrix> pre_activations;  // per hidden layer
  std::vector<Matrix> activations;      // per hidden layer, after relu+dropout
  Matrix logits;
  Matrix probs;
};
ForwardTrace forward_trace(const Network& net, const Matrix& batch,
                           const DropoutMode& mode);

/// -(1/n) * sum_i w_{y_i} * log(max(p_i[y_i], 1e-12))
double weighted_cross_entropy(const Matrix& probs, const Labels& labels,
                              const ClassWeights& weights);

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  double loss = 0.0;
};

/// Analytic gradients of weighted_cross_entropy w.r.t. every parameter.
/// The same DropoutMode seed regenerates the same masks, so central
/// finite differences against this function are exact to O(h^2).
Gradients backprop(const Network& net, const Matrix& batch, const Labels& labels,
                   const ClassWeights& weights, const DropoutMode& mode);

/// Mini-batch training on class-weighted cross-entropy. Dropout is active
/// whenever arch.dropout_rate > 0; per-epoch shuffles and per-batch dropout
/// masks all derive from cfg.shuffle_seed, so a fixed (net, data, cfg) gives
/// bit-identical parameters.
Network train(Network net, const Dataset& train_set, const TrainConfig& cfg);

}  // namespace usnn
