#include "veritas/layers.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>

#include "veritas/errors.hpp"

namespace veritas::nn {

void validate(const DropoutSpec& spec) {
  if (!(spec.rate >= 0.0 && spec.rate < 1.0)) {
    throw ConfigError("dropout rate must lie in [0, 1), got " + std::to_string(spec.rate));
  }
}

double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw InvalidInput("log_sum_exp of empty input");
  const double m = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

Vector softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw InvalidInput("softmax needs at least 2 logits");
  require_finite(logits, "softmax");
  const double m = *std::max_element(logits.begin(), logits.end());
  Vector out(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] - m);
    total += out[k];
  }
  for (auto& p : out) p /= total;
  return out;
}

Vector log_softmax(std::span<const double> logits) {
  if (logits.size() < 2) throw InvalidInput("log_softmax needs at least 2 logits");
  require_finite(logits, "log_softmax");
  const double lse = log_sum_exp(logits);
  Vector out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

double softplus(double x) {
  if (!std::isfinite(x)) throw InvalidInput("softplus: non-finite input");
  if (x <= 0.0) return std::log1p(std::exp(x));
  return x + std::log1p(std::exp(-x));
}

double logistic(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Vector dense_forward(const DenseWeights& w, std::span<const double> input, Activation act) {
  require_shape(w.bias, w.out_dim(), 1, "dense bias");
  Vector out = matvec(w.weight, input);
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] += w.bias(r, 0);
    if (act == Activation::relu && out[r] < 0.0) out[r] = 0.0;
  }
  return out;
}

DenseGrads dense_backward(const DenseWeights& w, std::span<const double> input,
                          std::span<const double> output, Activation act,
                          std::span<const double> grad_output) {
  if (output.size() != w.out_dim() || grad_output.size() != w.out_dim() || input.size() != w.in_dim()) {
    throw ShapeError("dense_backward: inconsistent shapes");
  }
  Vector pre_grad(grad_output.begin(), grad_output.end());
  if (act == Activation::relu) {
    for (std::size_t r = 0; r < pre_grad.size(); ++r) {
      if (output[r] <= 0.0) pre_grad[r] = 0.0;
    }
  }
  DenseGrads g{Matrix(w.out_dim(), w.in_dim()), Matrix(w.out_dim(), 1), {}};
  add_outer(g.weight, pre_grad, input);
  for (std::size_t r = 0; r < pre_grad.size(); ++r) g.bias(r, 0) = pre_grad[r];
  g.input = matvec_transposed(w.weight, pre_grad);
  return g;
}

DropoutResult dropout_forward(std::span<const double> input, const DropoutSpec& spec, Rng& rng) {
  validate(spec);
  DropoutResult r{Vector(input.begin(), input.end()), Vector(input.size(), 1.0)};
  if (!spec.applies()) return r;
  const double keep_scale = 1.0 / (1.0 - spec.rate);
  for (std::size_t i = 0; i < input.size(); ++i) {
    r.mask[i] = rng.bernoulli(spec.rate) ? 0.0 : keep_scale;
    r.output[i] *= r.mask[i];
  }
  return r;
}

Vector dropout_backward(std::span<const double> mask, std::span<const double> grad_output) {
  if (mask.size() != grad_output.size()) throw ShapeError("dropout_backward: length mismatch");
  Vector g(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) g[i] = mask[i] * grad_output[i];
  return g;
}

LstmTrace lstm_forward(const LstmWeights& w, std::span<const Vector> inputs, const DropoutSpec& dropout,
                       Rng& rng) {
  const std::size_t hidden = w.hidden_dim();
  const std::size_t in_dim = w.input_dim();
  require_shape(w.input_weights, 4 * hidden, in_dim, "lstm input weights");
  require_shape(w.recurrent_weights, 4 * hidden, hidden, "lstm recurrent weights");
  require_shape(w.bias, 4 * hidden, 1, "lstm bias");
  if (inputs.empty()) throw InvalidInput("lstm_forward: empty input sequence");

  LstmTrace t;
  Vector h_prev(hidden, 0.0);
  Vector c_prev(hidden, 0.0);
  for (const auto& x : inputs) {
    if (x.size() != in_dim) {
      throw ShapeError("lstm_forward: input of length " + std::to_string(x.size()) + ", layer expects " +
                       std::to_string(in_dim));
    }
    Vector z = matvec(w.input_weights, x);
    add_inplace(z, matvec(w.recurrent_weights, h_prev));
    for (std::size_t r = 0; r < z.size(); ++r) z[r] += w.bias(r, 0);

    Vector ig(hidden), fg(hidden), gg(hidden), og(hidden), c(hidden), h(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      ig[j] = logistic(z[j]);
      fg[j] = logistic(z[hidden + j]);
      gg[j] = std::tanh(z[2 * hidden + j]);
      og[j] = logistic(z[3 * hidden + j]);
      c[j] = fg[j] * c_prev[j] + ig[j] * gg[j];
      h[j] = og[j] * std::tanh(c[j]);
    }
    auto dropped = dropout_forward(h, dropout, rng);

    t.inputs.push_back(x);
    t.input_gate.push_back(std::move(ig));
    t.forget_gate.push_back(std::move(fg));
    t.cell_candidate.push_back(std::move(gg));
    t.output_gate.push_back(std::move(og));
    t.cell.push_back(c);
    t.hidden.push_back(h);
    t.dropout_mask.push_back(std::move(dropped.mask));
    t.outputs.push_back(std::move(dropped.output));
    h_prev = std::move(h);
    c_prev = std::move(c);
  }
  return t;
}

LstmGrads lstm_backward(const LstmWeights& w, const LstmTrace& trace, std::span<const Vector> grad_outputs) {
  const std::size_t hidden = w.hidden_dim();
  const std::size_t steps = trace.steps();
  if (steps == 0) throw StateError("lstm_backward called without a completed forward pass");
  if (grad_outputs.size() != steps) throw ShapeError("lstm_backward: one gradient per time step required");

  LstmGrads g{Matrix(4 * hidden, w.input_dim()), Matrix(4 * hidden, hidden), Matrix(4 * hidden, 1),
              std::vector<Vector>(steps)};
  Vector dh_next(hidden, 0.0);
  Vector dc_next(hidden, 0.0);
  const Vector zeros(hidden, 0.0);

  for (std::size_t step = steps; step-- > 0;) {
    if (grad_outputs[step].size() != hidden) throw ShapeError("lstm_backward: gradient length mismatch");
    Vector dh = dropout_backward(trace.dropout_mask[step], grad_outputs[step]);
    add_inplace(dh, dh_next);

    const auto& ig = trace.input_gate[step];
    const auto& fg = trace.forget_gate[step];
    const auto& gg = trace.cell_candidate[step];
    const auto& og = trace.output_gate[step];
    const auto& c = trace.cell[step];
    const auto& c_prev = step > 0 ? trace.cell[step - 1] : zeros;
    const auto& h_prev = step > 0 ? trace.hidden[step - 1] : zeros;

    Vector dz(4 * hidden);
    Vector dc_prev(hidden);
    for (std::size_t j = 0; j < hidden; ++j) {
      const double tc = std::tanh(c[j]);
      const double dc = dh[j] * og[j] * (1.0 - tc * tc) + dc_next[j];
      dz[j] = dc * gg[j] * ig[j] * (1.0 - ig[j]);
      dz[hidden + j] = dc * c_prev[j] * fg[j] * (1.0 - fg[j]);
      dz[2 * hidden + j] = dc * ig[j] * (1.0 - gg[j] * gg[j]);
      dz[3 * hidden + j] = dh[j] * tc * og[j] * (1.0 - og[j]);
      dc_prev[j] = dc * fg[j];
    }
    add_outer(g.input_weights, dz, trace.inputs[step]);
    add_outer(g.recurrent_weights, dz, h_prev);
    for (std::size_t r = 0; r < dz.size(); ++r) g.bias(r, 0) += dz[r];
    g.inputs[step] = matvec_transposed(w.input_weights, dz);
    dh_next = matvec_transposed(w.recurrent_weights, dz);
    dc_next = std::move(dc_prev);
  }
  return g;
}

void sgd_step(Matrix& param, const Matrix& grad, double learning_rate) {
  if (!param.same_shape(grad)) {
    throw ShapeError("sgd_step: parameter " + shape_string(param) + " vs gradient " + shape_string(grad));
  }
  if (!(learning_rate >= 0.0)) throw ConfigError("sgd_step: learning rate must be non-negative");
  auto p = param.values();
  auto g = grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) p[i] -= learning_rate * g[i];
}

std::string checkpoint_to_json(const NamedTensors& tensors) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [name, m] : tensors) {
    nlohmann::ordered_json entry;
    entry["shape"] = {m.rows(), m.cols()};
    entry["values"] = std::vector<double>(m.values().begin(), m.values().end());
    doc[name] = std::move(entry);
  }
  return doc.dump();
}

NamedTensors checkpoint_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("checkpoint: top level must be an object");
  NamedTensors out;
  for (const auto& [name, entry] : doc.items()) {
    try {
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      if (shape.size() != 2) throw ParseError("checkpoint: tensor '" + name + "' shape must have 2 dims");
      out.emplace(name, Matrix(shape[0], shape[1], entry.at("values").get<std::vector<double>>()));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("checkpoint: tensor '" + name + "': " + e.what());
    } catch (const ShapeError& e) {
      throw ParseError("checkpoint: tensor '" + name + "': " + e.what());
    }
  }
  return out;
}

}  // namespace veritas::nn
