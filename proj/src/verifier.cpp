#include "veritas/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <utility>

#include "veritas/errors.hpp"

namespace veritas {

using nlohmann::json;
using nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Parameters

void ModelParams::validate() const {
  const std::size_t hidden = hidden_size();
  nn::require_shape(lstm.input_weights, 4 * hidden, input_dim(), "lstm.input_weights");
  nn::require_shape(lstm.recurrent_weights, 4 * hidden, hidden, "lstm.recurrent_weights");
  nn::require_shape(lstm.bias, 4 * hidden, 1, "lstm.bias");
  for (const auto& layer : relu_layers) {
    nn::require_shape(layer.weight, hidden, hidden, "relu weight");
    nn::require_shape(layer.bias, hidden, 1, "relu bias");
  }
  if (num_classes() < 2) throw ShapeError("classifier head needs at least 2 classes");
  nn::require_shape(classifier.weight, num_classes(), hidden, "classifier.weight");
  nn::require_shape(classifier.bias, num_classes(), 1, "classifier.bias");
  nn::require_shape(variance.weight, 1, hidden, "variance.weight");
  nn::require_shape(variance.bias, 1, 1, "variance.bias");
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
  return n;
}

namespace {

Matrix xavier(std::size_t rows, std::size_t cols, std::size_t fan_in, std::size_t fan_out, nn::Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix m(rows, cols);
  for (auto& v : m.values()) v = limit * (2.0 * rng.uniform() - 1.0);
  return m;
}

}  // namespace

ModelParams init_params(const ModelShape& shape, std::uint64_t seed) {
  if (shape.input_dim == 0 || shape.hidden_size == 0) throw ConfigError("model dimensions must be positive");
  if (shape.num_classes < 2) throw ConfigError("model needs at least 2 classes");
  nn::Rng rng(seed);
  const std::size_t h = shape.hidden_size;
  ModelParams p;
  p.lstm.input_weights = xavier(4 * h, shape.input_dim, shape.input_dim, h, rng);
  p.lstm.recurrent_weights = xavier(4 * h, h, h, h, rng);
  p.lstm.bias = Matrix(4 * h, 1);
  for (std::size_t j = 0; j < h; ++j) p.lstm.bias(h + j, 0) = 1.0;
  for (std::size_t i = 0; i < shape.num_relu_layers; ++i) p.relu_layers.push_back({xavier(h, h, h, h, rng), Matrix(h, 1)});
  p.classifier = {xavier(shape.num_classes, h, h, shape.num_classes, rng), Matrix(shape.num_classes, 1)};
  p.variance = {xavier(1, h, h, 1, rng), Matrix(1, 1)};
  return p;
}

ModelParams zeros_like(const ModelParams& params) {
  ModelParams z = params;
  z.for_each([](const std::string&, Matrix& m) { m.fill(0.0); });
  return z;
}

nn::NamedTensors to_tensors(const ModelParams& params) {
  nn::NamedTensors t;
  params.for_each([&](const std::string& name, const Matrix& m) { t.emplace(name, m); });
  return t;
}

ModelParams from_tensors(const nn::NamedTensors& tensors) {
  const auto take = [&](const std::string& name) -> const Matrix& {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError("checkpoint is missing tensor '" + name + "'");
    return it->second;
  };
  ModelParams p;
  p.lstm = {take("lstm.input_weights"), take("lstm.recurrent_weights"), take("lstm.bias")};
  for (std::size_t i = 0; tensors.contains("relu" + std::to_string(i) + ".weight"); ++i) {
    p.relu_layers.push_back({take("relu" + std::to_string(i) + ".weight"), take("relu" + std::to_string(i) + ".bias")});
  }
  p.classifier = {take("classifier.weight"), take("classifier.bias")};
  p.variance = {take("variance.weight"), take("variance.bias")};
  if (tensors.size() != 7 + 2 * p.relu_layers.size()) throw ParseError("checkpoint has unexpected extra tensors");
  try {
    p.validate();
  } catch (const ShapeError& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
  return p;
}

std::string save_checkpoint(const ModelParams& params) { return nn::checkpoint_to_json(to_tensors(params)); }

ModelParams load_checkpoint(const std::string& json_text) {
  return from_tensors(nn::checkpoint_from_json(json_text));
}

// ---------------------------------------------------------------------------
// Forward / backward

BranchOutput forward_branch(const ModelParams& params, std::span<const Vector> inputs,
                            const nn::DropoutSpec& dropout, nn::Rng& rng) {
  BranchRecord record;
  return forward_branch(params, inputs, dropout, rng, record);
}

BranchOutput forward_branch(const ModelParams& params, std::span<const Vector> inputs,
                            const nn::DropoutSpec& dropout, nn::Rng& rng, BranchRecord& record) {
  record = BranchRecord{};
  record.lstm = nn::lstm_forward(params.lstm, inputs, dropout, rng);
  Vector u = record.lstm.outputs.back();
  for (const auto& layer : params.relu_layers) {
    record.relu_inputs.push_back(u);
    Vector activated = nn::dense_forward(layer, u, nn::Activation::relu);
    auto dropped = nn::dropout_forward(activated, dropout, rng);
    record.relu_outputs.push_back(std::move(activated));
    record.relu_masks.push_back(std::move(dropped.mask));
    u = std::move(dropped.output);
  }
  BranchOutput out;
  out.logits = nn::dense_forward(params.classifier, u, nn::Activation::linear);
  record.sigma_preactivation = nn::dense_forward(params.variance, u, nn::Activation::linear)[0];
  out.sigma = nn::softplus(record.sigma_preactivation);
  out.probs = nn::softmax(out.logits);
  out.u = std::move(u);
  record.output = out;
  record.completed = true;
  return out;
}

ModelParams backward_branch(const ModelParams& params, const BranchRecord& record,
                            std::span<const double> grad_logits, double grad_sigma) {
  if (!record.completed) throw StateError("backward_branch called before a completed forward pass");
  if (grad_logits.size() != params.num_classes()) throw ShapeError("backward_branch: gradient length != class count");

  ModelParams g = zeros_like(params);
  const auto& out = record.output;

  Vector logits_out = out.logits;
  auto cls = nn::dense_backward(params.classifier, out.u, logits_out, nn::Activation::linear, grad_logits);
  g.classifier.weight = std::move(cls.weight);
  g.classifier.bias = std::move(cls.bias);

  const double grad_pre = grad_sigma * nn::logistic(record.sigma_preactivation);
  const Vector sigma_pre{record.sigma_preactivation};
  const Vector grad_pre_vec{grad_pre};
  auto var = nn::dense_backward(params.variance, out.u, sigma_pre, nn::Activation::linear, grad_pre_vec);
  g.variance.weight = std::move(var.weight);
  g.variance.bias = std::move(var.bias);

  Vector grad_u = std::move(cls.input);
  nn::add_inplace(grad_u, var.input);

  for (std::size_t i = params.relu_layers.size(); i-- > 0;) {
    Vector grad_act = nn::dropout_backward(record.relu_masks[i], grad_u);
    auto layer = nn::dense_backward(params.relu_layers[i], record.relu_inputs[i], record.relu_outputs[i],
                                    nn::Activation::relu, grad_act);
    g.relu_layers[i].weight = std::move(layer.weight);
    g.relu_layers[i].bias = std::move(layer.bias);
    grad_u = std::move(layer.input);
  }

  std::vector<Vector> grad_steps(record.lstm.steps(), Vector(params.hidden_size(), 0.0));
  grad_steps.back() = std::move(grad_u);
  auto lstm = nn::lstm_backward(params.lstm, record.lstm, grad_steps);
  g.lstm.input_weights = std::move(lstm.input_weights);
  g.lstm.recurrent_weights = std::move(lstm.recurrent_weights);
  g.lstm.bias = std::move(lstm.bias);
  return g;
}

// ---------------------------------------------------------------------------
// Losses

double loss_l1(std::span<const double> probs, std::size_t gold) {
  if (gold >= probs.size()) throw DataError("loss_l1: gold class out of range");
  return -std::log(std::max(probs[gold], kLogFloor));
}

std::string_view to_string(NoiseMode mode) { return mode == NoiseMode::per_logit ? "per_logit" : "shared"; }

std::string_view to_string(AleatoricLoss form) {
  return form == AleatoricLoss::expected_likelihood ? "expected_likelihood" : "mean_cross_entropy";
}

NoiseMode parse_noise_mode(std::string_view text) {
  if (text == "per_logit") return NoiseMode::per_logit;
  if (text == "shared") return NoiseMode::shared;
  throw ConfigError("unknown noise mode '" + std::string(text) + "'");
}

AleatoricLoss parse_aleatoric_loss(std::string_view text) {
  if (text == "expected_likelihood") return AleatoricLoss::expected_likelihood;
  if (text == "mean_cross_entropy") return AleatoricLoss::mean_cross_entropy;
  throw ConfigError("unknown aleatoric loss '" + std::string(text) + "'");
}

Matrix draw_noise(std::size_t samples, std::size_t classes, NoiseMode mode, nn::Rng& rng) {
  Matrix eps(samples, classes);
  for (std::size_t t = 0; t < samples; ++t) {
    if (mode == NoiseMode::shared) {
      const double e = rng.normal();
      for (std::size_t k = 0; k < classes; ++k) eps(t, k) = e;
    } else {
      for (std::size_t k = 0; k < classes; ++k) eps(t, k) = rng.normal();
    }
  }
  return eps;
}

AleatoricLossResult loss_l2(std::span<const double> logits, double sigma, std::size_t gold, const Matrix& noise,
                            AleatoricLoss form) {
  const std::size_t classes = logits.size();
  const std::size_t samples = noise.rows();
  if (samples == 0) throw ConfigError("loss_l2 needs at least one noise sample");
  if (noise.cols() != classes) throw ShapeError("loss_l2: noise columns != logit count");
  if (gold >= classes) throw DataError("loss_l2: gold class out of range");
  if (!(sigma >= 0.0)) throw InvalidInput("loss_l2: sigma must be non-negative");

  const double scale = std::sqrt(sigma);
  std::vector<Vector> probs(samples);
  Vector log_gold(samples);
  std::vector<bool> clamped(samples);
  Vector d(classes);
  for (std::size_t t = 0; t < samples; ++t) {
    for (std::size_t k = 0; k < classes; ++k) d[k] = logits[k] + scale * noise(t, k);
    probs[t] = nn::softmax(d);
    clamped[t] = probs[t][gold] < kLogFloor;
    log_gold[t] = std::log(std::max(probs[t][gold], kLogFloor));
  }

  // weight[t] is the coefficient of -(e_gold - q_t) in dL/dd_t.
  AleatoricLossResult r;
  Vector weight(samples);
  if (form == AleatoricLoss::expected_likelihood) {
    const double lse = nn::log_sum_exp(log_gold);
    r.loss = -(lse - std::log(static_cast<double>(samples)));
    for (std::size_t t = 0; t < samples; ++t) weight[t] = std::exp(log_gold[t] - lse);
  } else {
    double acc = 0.0;
    for (double lg : log_gold) acc -= lg;
    r.loss = acc / static_cast<double>(samples);
    for (auto& w : weight) w = 1.0 / static_cast<double>(samples);
  }

  r.grad_logits.assign(classes, 0.0);
  double grad_scale = 0.0;
  for (std::size_t t = 0; t < samples; ++t) {
    if (clamped[t]) continue;
    for (std::size_t k = 0; k < classes; ++k) {
      const double dd = weight[t] * (probs[t][k] - (k == gold ? 1.0 : 0.0));
      r.grad_logits[k] += dd;
      grad_scale += dd * noise(t, k);
    }
  }
  r.grad_sigma = scale > 0.0 ? grad_scale / (2.0 * scale) : 0.0;
  return r;
}

double loss_l2(std::span<const double> logits, double sigma, std::size_t gold, std::size_t samples, nn::Rng& rng,
               NoiseMode mode, AleatoricLoss form) {
  if (samples == 0) throw ConfigError("loss_l2 needs T >= 1");
  return loss_l2(logits, sigma, gold, draw_noise(samples, logits.size(), mode, rng), form).loss;
}

double total_loss(double l1, double l2, double w1, double w2) { return w1 * l1 + w2 * l2; }

// ---------------------------------------------------------------------------
// Training

void TrainingConfig::validate() const {
  if (hidden_size == 0) throw ConfigError("hidden_size must be positive");
  if (!(dropout_rate_train >= 0.0 && dropout_rate_train < 1.0)) throw ConfigError("dropout_rate_train must be in [0, 1)");
  if (!(learning_rate > 0.0) && epochs > 0) throw ConfigError("learning_rate must be positive");
  if (aleatoric_samples < 1) throw ConfigError("aleatoric_samples (T) must be >= 1");
  if (!(w1 >= 0.0) || !(w2 >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (w1 == 0.0 && w2 == 0.0) throw ConfigError("loss weights w1 and w2 cannot both be 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("clip_norm must be non-negative");
  if (max_branch_length && *max_branch_length == 0) throw ConfigError("max_branch_length must be positive");
}

std::string training_config_to_json(const TrainingConfig& c) {
  ordered_json doc;
  doc["hidden_size"] = c.hidden_size;
  doc["num_relu_layers"] = c.num_relu_layers;
  doc["dropout_rate_train"] = c.dropout_rate_train;
  doc["learning_rate"] = c.learning_rate;
  doc["epochs"] = c.epochs;
  doc["aleatoric_samples"] = c.aleatoric_samples;
  doc["w1"] = c.w1;
  doc["w2"] = c.w2;
  doc["seed"] = c.seed;
  doc["noise_mode"] = std::string(to_string(c.noise_mode));
  doc["aleatoric_loss"] = std::string(to_string(c.aleatoric_loss));
  doc["max_branch_length"] = c.max_branch_length ? ordered_json(*c.max_branch_length) : ordered_json(nullptr);
  doc["clip_norm"] = c.clip_norm;
  return doc.dump(2);
}

TrainingConfig training_config_from_json(std::string_view text) {
  TrainingConfig c;
  try {
    const auto doc = json::parse(text);
    if (!doc.is_object()) throw ConfigError("training config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (key == "hidden_size") c.hidden_size = value.get<std::size_t>();
      else if (key == "num_relu_layers") c.num_relu_layers = value.get<std::size_t>();
      else if (key == "dropout_rate_train") c.dropout_rate_train = value.get<double>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "aleatoric_samples" || key == "T") c.aleatoric_samples = value.get<std::size_t>();
      else if (key == "w1") c.w1 = value.get<double>();
      else if (key == "w2") c.w2 = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "noise_mode") c.noise_mode = parse_noise_mode(value.get<std::string>());
      else if (key == "aleatoric_loss") c.aleatoric_loss = parse_aleatoric_loss(value.get<std::string>());
      else if (key == "max_branch_length") {
        if (value.is_null()) c.max_branch_length.reset();
        else c.max_branch_length = value.get<std::size_t>();
      } else if (key == "clip_norm") c.clip_norm = value.get<double>();
      else throw ConfigError("unknown training config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

EncodedTree encode_tree(const ConversationTree& tree, const Embedder& embedder,
                        std::optional<std::size_t> max_branch_length) {
  EncodedTree out{tree.tree_id, tree.label, {}};
  std::map<std::string, Vector> cache;
  for (const auto& b : decompose_branches(tree, max_branch_length)) {
    std::vector<Vector> seq;
    seq.reserve(b.tweets.size());
    for (const auto& t : b.tweets) {
      auto it = cache.find(t.id);
      if (it == cache.end()) it = cache.emplace(t.id, embedder.embed(t.text)).first;
      seq.push_back(it->second);
    }
    out.branches.push_back(std::move(seq));
  }
  return out;
}

std::string TrainingHistory::to_csv() const {
  std::string out = "epoch,loss_total,loss_l1,loss_l2\n";
  char buf[160];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", e.epoch, e.total, e.l1, e.l2);
    out += buf;
  }
  return out;
}

namespace {

void clip_gradient(ModelParams& grads, double max_norm) {
  double sq = 0.0;
  grads.for_each([&](const std::string&, const Matrix& m) {
    for (double v : m.values()) sq += v * v;
  });
  const double norm = std::sqrt(sq);
  if (norm <= max_norm || norm == 0.0) return;
  const double s = max_norm / norm;
  grads.for_each([&](const std::string&, Matrix& m) {
    for (auto& v : m.values()) v *= s;
  });
}

}  // namespace

TrainedModel train_model(const std::vector<EncodedTree>& training, std::size_t num_classes,
                         const TrainingConfig& config) {
  config.validate();
  std::vector<std::pair<std::size_t, std::size_t>> instances;
  std::size_t input_dim = 0;
  for (std::size_t t = 0; t < training.size(); ++t) {
    if (class_index(training[t].label) >= static_cast<int>(num_classes)) {
      throw DataError("tree '" + training[t].tree_id + "' has a label outside the " + std::to_string(num_classes) +
                      "-class set");
    }
    for (std::size_t b = 0; b < training[t].branches.size(); ++b) {
      instances.emplace_back(t, b);
      input_dim = training[t].branches[b].front().size();
    }
  }
  if (instances.empty()) throw ConfigError("training set is empty");

  TrainedModel model;
  model.params = init_params({input_dim, config.hidden_size, config.num_relu_layers, num_classes}, config.seed);
  nn::Rng order_rng = nn::Rng::derive(config.seed, 1);
  nn::Rng noise_rng = nn::Rng::derive(config.seed, 2);
  const auto dropout = nn::DropoutSpec::on(config.dropout_rate_train);

  BranchRecord record;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    nn::shuffle(instances, order_rng);
    EpochLoss sum{epoch + 1, 0.0, 0.0, 0.0};
    for (const auto& [t, b] : instances) {
      const auto gold = static_cast<std::size_t>(class_index(training[t].label));
      const auto out = forward_branch(model.params, training[t].branches[b], dropout, noise_rng, record);

      const double l1 = loss_l1(out.probs, gold);
      Vector grad_logits(num_classes, 0.0);
      if (out.probs[gold] >= kLogFloor) {
        for (std::size_t k = 0; k < num_classes; ++k) {
          grad_logits[k] = config.w1 * (out.probs[k] - (k == gold ? 1.0 : 0.0));
        }
      }
      double grad_sigma = 0.0;
      double l2 = 0.0;
      if (config.w2 > 0.0) {
        const Matrix noise = draw_noise(config.aleatoric_samples, num_classes, config.noise_mode, noise_rng);
        const auto aleatoric = loss_l2(out.logits, out.sigma, gold, noise, config.aleatoric_loss);
        l2 = aleatoric.loss;
        for (std::size_t k = 0; k < num_classes; ++k) grad_logits[k] += config.w2 * aleatoric.grad_logits[k];
        grad_sigma = config.w2 * aleatoric.grad_sigma;
      }
      sum.l1 += l1;
      sum.l2 += l2;
      sum.total += total_loss(l1, l2, config.w1, config.w2);

      auto grads = backward_branch(model.params, record, grad_logits, grad_sigma);
      if (config.clip_norm > 0.0) clip_gradient(grads, config.clip_norm);
      std::vector<const Matrix*> grad_tensors;
      grads.for_each([&](const std::string&, const Matrix& m) { grad_tensors.push_back(&m); });
      std::size_t next = 0;
      model.params.for_each(
          [&](const std::string&, Matrix& p) { nn::sgd_step(p, *grad_tensors[next++], config.learning_rate); });
    }
    const double n = static_cast<double>(instances.size());
    model.history.epochs.push_back({sum.epoch, sum.total / n, sum.l1 / n, sum.l2 / n});
  }
  return model;
}

TrainedModel train(const std::vector<ConversationTree>& trees, const FoldSpec& folds, int test_fold,
                   const TrainingConfig& config, const Embedder& embedder, std::size_t num_classes) {
  std::vector<EncodedTree> training;
  for (const auto& t : trees) {
    const int f = folds.fold_of(t.tree_id);
    if (f == test_fold || (folds.dev_fold && f == *folds.dev_fold)) continue;
    training.push_back(encode_tree(t, embedder, config.max_branch_length));
  }
  if (training.empty()) throw ConfigError("no training trees outside the test and dev folds");
  return train_model(training, num_classes, config);
}

// ---------------------------------------------------------------------------

TreePrediction predict_tree(const ModelParams& params, const EncodedTree& tree, const nn::DropoutSpec& dropout,
                            nn::Rng& rng) {
  if (tree.branches.empty()) throw DataError("tree '" + tree.tree_id + "' has no branches");
  TreePrediction pred;
  pred.probs.assign(params.num_classes(), 0.0);
  for (const auto& branch : tree.branches) {
    const auto out = forward_branch(params, branch, dropout, rng);
    nn::add_inplace(pred.probs, out.probs);
    pred.branch_sigmas.push_back(out.sigma);
  }
  for (auto& p : pred.probs) p /= static_cast<double>(tree.branches.size());
  pred.predicted = nn::argmax(pred.probs);
  return pred;
}

TreePrediction predict_tree(const ModelParams& params, const EncodedTree& tree) {
  nn::Rng unused(0);
  return predict_tree(params, tree, nn::DropoutSpec::off(), unused);
}

}  // namespace veritas
