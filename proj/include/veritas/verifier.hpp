#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "veritas/conversation.hpp"
#include "veritas/embedding.hpp"
#include "veritas/layers.hpp"

namespace veritas {

using nn::Matrix;
using nn::Vector;

/// Weights of the branch-LSTM: LSTM -> ReLU stack -> {classifier head, variance head}.
struct ModelParams {
  nn::LstmWeights lstm;
  std::vector<nn::DenseWeights> relu_layers;
  nn::DenseWeights classifier;  // (C, H)
  nn::DenseWeights variance;    // (1, H)

  std::size_t input_dim() const noexcept { return lstm.input_dim(); }
  std::size_t hidden_size() const noexcept { return lstm.hidden_dim(); }
  std::size_t num_classes() const noexcept { return classifier.out_dim(); }

  /// Visits every tensor as (name, matrix) in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    f("lstm.input_weights", lstm.input_weights);
    f("lstm.recurrent_weights", lstm.recurrent_weights);
    f("lstm.bias", lstm.bias);
    for (std::size_t i = 0; i < relu_layers.size(); ++i) {
      f("relu" + std::to_string(i) + ".weight", relu_layers[i].weight);
      f("relu" + std::to_string(i) + ".bias", relu_layers[i].bias);
    }
    f("classifier.weight", classifier.weight);
    f("classifier.bias", classifier.bias);
    f("variance.weight", variance.weight);
    f("variance.bias", variance.bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each([&](const std::string& name, Matrix& m) { f(name, std::as_const(m)); });
  }

  /// Throws ShapeError unless all tensors agree on input/hidden/class dimensions and C >= 2.
  void validate() const;
  std::size_t parameter_count() const;
  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

struct ModelShape {
  std::size_t input_dim = 32;
  std::size_t hidden_size = 64;
  std::size_t num_relu_layers = 2;
  std::size_t num_classes = 3;
};

/// Xavier-uniform weights, zero biases except the LSTM forget gate (1.0).
ModelParams init_params(const ModelShape& shape, std::uint64_t seed);
ModelParams zeros_like(const ModelParams& params);

nn::NamedTensors to_tensors(const ModelParams& params);
/// Rebuilds parameters from checkpoint tensors; the ReLU depth is inferred from names.
ModelParams from_tensors(const nn::NamedTensors& tensors);
std::string save_checkpoint(const ModelParams& params);
ModelParams load_checkpoint(const std::string& json_text);

// ---------------------------------------------------------------------------
// Forward / backward for one branch

struct BranchOutput {
  Vector u;       // final-step representation after the ReLU stack
  Vector logits;  // v = W_v u + b_v
  double sigma = 0.0;  // softplus(W_sigma u + b_sigma)
  Vector probs;   // softmax(v)

  friend bool operator==(const BranchOutput&, const BranchOutput&) = default;
};

/// Execution record of one forward pass, consumed by backward_branch.
struct BranchRecord {
  bool completed = false;
  nn::LstmTrace lstm;
  std::vector<Vector> relu_inputs;
  std::vector<Vector> relu_outputs;   // before dropout
  std::vector<Vector> relu_masks;
  double sigma_preactivation = 0.0;
  BranchOutput output;
};

/// `inputs` is one embedding per tweet, root first. Dropout (when active) is
/// applied to the LSTM outputs and after every ReLU layer.
BranchOutput forward_branch(const ModelParams& params, std::span<const Vector> inputs,
                            const nn::DropoutSpec& dropout, nn::Rng& rng);
BranchOutput forward_branch(const ModelParams& params, std::span<const Vector> inputs,
                            const nn::DropoutSpec& dropout, nn::Rng& rng, BranchRecord& record);

/// Gradients of a scalar loss given dL/dlogits and dL/dsigma. Throws StateError
/// if `record` does not hold a completed forward pass.
ModelParams backward_branch(const ModelParams& params, const BranchRecord& record,
                            std::span<const double> grad_logits, double grad_sigma);

// ---------------------------------------------------------------------------
// Losses

/// Floor applied to probabilities inside every logarithm of a cross-entropy.
inline constexpr double kLogFloor = 1e-12;

/// -log max(p[gold], 1e-12).
double loss_l1(std::span<const double> probs, std::size_t gold);

/// How the T aleatoric noise samples are drawn.
enum class NoiseMode {
  per_logit,  // independent N(0,1) per logit
  shared,     // one N(0,1) per sample added to every logit (cancels in softmax)
};

/// How the T noisy softmax outputs are combined.
enum class AleatoricLoss {
  expected_likelihood,  // -log( mean_t softmax(d_t)[gold] )
  mean_cross_entropy,   // mean_t -log softmax(d_t)[gold]
};

std::string_view to_string(NoiseMode mode);
std::string_view to_string(AleatoricLoss form);
NoiseMode parse_noise_mode(std::string_view text);
AleatoricLoss parse_aleatoric_loss(std::string_view text);

/// T x C standard-normal draws; under NoiseMode::shared every row is constant.
Matrix draw_noise(std::size_t samples, std::size_t classes, NoiseMode mode, nn::Rng& rng);

struct AleatoricLossResult {
  double loss = 0.0;
  Vector grad_logits;
  double grad_sigma = 0.0;
};

/// Sampled loss over d_t = logits + sqrt(sigma) * noise[t]. Gradients use the
/// reparameterization with the given noise held fixed. grad_sigma is 0 at sigma == 0.
AleatoricLossResult loss_l2(std::span<const double> logits, double sigma, std::size_t gold, const Matrix& noise,
                            AleatoricLoss form = AleatoricLoss::expected_likelihood);
/// Draws T noise rows from `rng` and evaluates loss_l2.
double loss_l2(std::span<const double> logits, double sigma, std::size_t gold, std::size_t samples, nn::Rng& rng,
               NoiseMode mode = NoiseMode::per_logit, AleatoricLoss form = AleatoricLoss::expected_likelihood);

double total_loss(double l1, double l2, double w1, double w2);

// ---------------------------------------------------------------------------
// Training

struct TrainingConfig {
  std::size_t hidden_size = 64;
  std::size_t num_relu_layers = 2;
  double dropout_rate_train = 0.3;
  double learning_rate = 0.01;
  std::size_t epochs = 30;
  std::size_t aleatoric_samples = 50;  // T
  double w1 = 1.0;
  double w2 = 0.2;
  std::uint64_t seed = 0;
  NoiseMode noise_mode = NoiseMode::per_logit;
  AleatoricLoss aleatoric_loss = AleatoricLoss::expected_likelihood;
  std::optional<std::size_t> max_branch_length;
  /// Rescale each per-branch gradient to at most this L2 norm; 0 disables.
  double clip_norm = 0.0;

  /// Throws ConfigError when a knob is out of range.
  void validate() const;
};

std::string training_config_to_json(const TrainingConfig& config);
TrainingConfig training_config_from_json(std::string_view text);

/// A tree with its branches already embedded.
struct EncodedTree {
  std::string tree_id;
  Label label = Label::true_rumour;
  std::vector<std::vector<Vector>> branches;
};

EncodedTree encode_tree(const ConversationTree& tree, const Embedder& embedder,
                        std::optional<std::size_t> max_branch_length = std::nullopt);

struct EpochLoss {
  std::size_t epoch = 0;
  double total = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
};

struct TrainingHistory {
  std::vector<EpochLoss> epochs;
  /// "epoch,loss_total,loss_l1,loss_l2"
  std::string to_csv() const;
};

struct TrainedModel {
  ModelParams params;
  TrainingHistory history;
};

/// Per-branch SGD over every branch of `training` in a freshly shuffled order each
/// epoch. Losses in the history are means over branches of the pre-update values.
TrainedModel train_model(const std::vector<EncodedTree>& training, std::size_t num_classes,
                         const TrainingConfig& config);

/// Trains on every tree outside `test_fold` and the dev fold. Throws ConfigError if
/// nothing is left to train on.
TrainedModel train(const std::vector<ConversationTree>& trees, const FoldSpec& folds, int test_fold,
                   const TrainingConfig& config, const Embedder& embedder, std::size_t num_classes);

// ---------------------------------------------------------------------------
// Tree-level prediction

struct TreePrediction {
  Vector probs;
  std::size_t predicted = 0;
  Vector branch_sigmas;
};

/// Mean of branch probability vectors; argmax with ties to the lowest class.
/// With active dropout every branch draws its own masks from `rng`.
TreePrediction predict_tree(const ModelParams& params, const EncodedTree& tree,
                            const nn::DropoutSpec& dropout, nn::Rng& rng);
TreePrediction predict_tree(const ModelParams& params, const EncodedTree& tree);

}  // namespace veritas
