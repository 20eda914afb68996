#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "veritas/rng.hpp"
#include "veritas/tensor.hpp"

namespace veritas::nn {

/// Dropout configuration for one forward pass.
///
/// `active == false` makes the layer the identity regardless of `rate`. Active
/// dropout is inverted: survivors are scaled by 1/(1-rate) so no rescaling is
/// needed when dropout is off.
struct DropoutSpec {
  double rate = 0.0;
  bool active = false;

  static DropoutSpec off() { return {}; }
  static DropoutSpec on(double rate) { return {rate, true}; }
  bool applies() const noexcept { return active && rate > 0.0; }
};

void validate(const DropoutSpec& spec);

// ---------------------------------------------------------------------------
// Scalar and vector nonlinearities

/// Max-shifted softmax. Throws InvalidInput on non-finite logits or fewer than 2 entries.
Vector softmax(std::span<const double> logits);
/// log(softmax(logits)), computed with the log-sum-exp shift.
Vector log_softmax(std::span<const double> logits);
double log_sum_exp(std::span<const double> values);

/// ln(1 + e^x) without overflow.
double softplus(double x);
/// d softplus / dx = logistic(x).
double logistic(double x);

// ---------------------------------------------------------------------------
// Dense layer

enum class Activation { linear, relu };

struct DenseWeights {
  Matrix weight;  // (out, in)
  Matrix bias;    // (out, 1)

  std::size_t in_dim() const noexcept { return weight.cols(); }
  std::size_t out_dim() const noexcept { return weight.rows(); }
  friend bool operator==(const DenseWeights&, const DenseWeights&) = default;
};

struct DenseGrads {
  Matrix weight;
  Matrix bias;
  Vector input;
};

/// activation(W x + b)
Vector dense_forward(const DenseWeights& w, std::span<const double> input, Activation act);
/// Gradients of a dense layer given its input, its output and the upstream gradient.
DenseGrads dense_backward(const DenseWeights& w, std::span<const double> input,
                          std::span<const double> output, Activation act,
                          std::span<const double> grad_output);

// ---------------------------------------------------------------------------
// Dropout

/// Output plus the per-unit multiplier that produced it (0 or 1/(1-rate); all 1 when off).
struct DropoutResult {
  Vector output;
  Vector mask;
};

/// Draws one Bernoulli per unit from `rng` when `spec.applies()`; draws nothing otherwise.
DropoutResult dropout_forward(std::span<const double> input, const DropoutSpec& spec, Rng& rng);
Vector dropout_backward(std::span<const double> mask, std::span<const double> grad_output);

// ---------------------------------------------------------------------------
// LSTM

/// Single-layer LSTM, gate rows ordered [input, forget, cell, output].
struct LstmWeights {
  Matrix input_weights;      // (4H, I)
  Matrix recurrent_weights;  // (4H, H)
  Matrix bias;               // (4H, 1)

  std::size_t input_dim() const noexcept { return input_weights.cols(); }
  std::size_t hidden_dim() const noexcept { return recurrent_weights.cols(); }
  friend bool operator==(const LstmWeights&, const LstmWeights&) = default;
};

/// Everything the backward pass needs from a forward pass.
struct LstmTrace {
  std::vector<Vector> inputs;
  std::vector<Vector> input_gate, forget_gate, cell_candidate, output_gate;
  std::vector<Vector> cell;      // c_t
  std::vector<Vector> hidden;    // h_t before output dropout
  std::vector<Vector> dropout_mask;
  std::vector<Vector> outputs;   // h_t after output dropout

  std::size_t steps() const noexcept { return outputs.size(); }
};

struct LstmGrads {
  Matrix input_weights;
  Matrix recurrent_weights;
  Matrix bias;
  std::vector<Vector> inputs;
};

/// Runs the recurrence from zero state. Dropout is applied to each emitted hidden
/// state (not to the recurrent path). Throws ShapeError on dimension mismatch and
/// InvalidInput on an empty sequence.
LstmTrace lstm_forward(const LstmWeights& w, std::span<const Vector> inputs, const DropoutSpec& dropout,
                       Rng& rng);

/// Backpropagation through time. `grad_outputs[t]` is dL/d outputs[t]; pass zero
/// vectors for steps that do not reach the loss.
LstmGrads lstm_backward(const LstmWeights& w, const LstmTrace& trace,
                        std::span<const Vector> grad_outputs);

// ---------------------------------------------------------------------------
// Optimization and persistence

/// p <- p - lr * g. Throws ShapeError on mismatch and ConfigError for lr < 0.
void sgd_step(Matrix& param, const Matrix& grad, double learning_rate);

/// Named parameter tensors, the unit of checkpointing.
using NamedTensors = std::map<std::string, Matrix>;

/// Serialize as {name: {"shape": [r, c], "values": [...]}}.
std::string checkpoint_to_json(const NamedTensors& tensors);
NamedTensors checkpoint_from_json(const std::string& text);

}  // namespace veritas::nn
