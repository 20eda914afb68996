#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "veritas/calibration.hpp"
#include "veritas/rejection.hpp"

namespace veritas {

// ---------------------------------------------------------------------------
// Statistics

/// Regularized upper incomplete gamma Q(a, x), by series for x < a + 1 and a
/// continued fraction otherwise. Throws InvalidInput for a <= 0 or x < 0.
double gamma_q(double a, double x);

struct KruskalWallis {
  double h = 0.0;
  double p = 1.0;
  std::size_t df = 0;
};

/// Rank-based H with tie correction; p from the chi-square upper tail with
/// (groups - 1) degrees of freedom. Identical values everywhere give H = 0, p = 1.
/// Throws InvalidInput for fewer than two groups or an empty group.
KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups);

// ---------------------------------------------------------------------------
// Grouping

enum class GroupKey { class_label, conversation_size };

std::string_view to_string(GroupKey key);
GroupKey parse_group_key(std::string_view text);

struct UncertaintyGroup {
  std::string name;
  std::vector<std::string> tree_ids;
  std::vector<double> values;
};

/// class_label: one group per gold label present, in class order.
/// conversation_size: records sorted by (tweet count, tree_id) and cut into `size_bins`
/// groups of near-equal count (earlier groups take the remainder). Sizes are looked up
/// in `tree_sizes`; a missing id throws DataError.
std::vector<UncertaintyGroup> group_uncertainty_by(const std::vector<PredictionRecord>& records, GroupKey key,
                                                   Measure measure,
                                                   const std::map<std::string, std::size_t>& tree_sizes = {},
                                                   std::size_t size_bins = 3);

// ---------------------------------------------------------------------------
// Synthetic data

/// Trees whose tweets draw tokens from their class vocabulary or a shared filler
/// vocabulary. A tree's clarity, uniform in [signal_min, signal_max], is the chance
/// that a token is a class token; the root always opens with one. Labels are moved to
/// another class exactly when the tree's clarity quantile falls below `label_noise`, so
/// the vaguest trees carry the noise.
struct SyntheticSpec {
  std::size_t trees_per_class = 100;
  std::size_t num_classes = 3;
  std::size_t class_vocab = 5;
  std::size_t filler_vocab = 20;
  double signal_min = 0.3;
  double signal_max = 0.8;
  std::size_t min_tokens = 5;
  std::size_t max_tokens = 10;
  double reply_prob = 0.75;  // chance of adding another reply, checked before each one
  std::size_t max_tweets = 12;
  std::size_t depth_cap = 4;
  double label_noise = 0.0;
  std::size_t n_events = 5;
  std::uint64_t seed = 0;

  /// Throws ConfigError unless noise is in [0, 0.5) and the ranges are sensible.
  void validate() const;
};

std::string synthetic_spec_to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(std::string_view text);

struct SyntheticData {
  std::vector<ConversationTree> trees;
  std::vector<Label> content_class;  // class whose vocabulary dominates each tree
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// ---------------------------------------------------------------------------
// Experiment configuration

struct EmbedderConfig {
  Embedder::Kind kind = Embedder::Kind::hashing;
  std::size_t dimension = 32;
  std::uint64_t seed = 0;
  std::optional<double> magnitude;  // hashing only; default 1/sqrt(dimension)
  std::string path;                 // table embeddings

  Embedder make() const;
};

struct ExperimentConfig {
  TrainingConfig training;
  UncertaintyConfig uncertainty;
  EmbedderConfig embedder;
  MetaConfig meta;
  std::optional<int> dev_fold;
  std::size_t threads = 0;  // 0 = hardware concurrency
};

std::string experiment_config_to_json(const ExperimentConfig& config);
/// Sections: training, uncertainty, embedder, meta, plus dev_fold and threads.
/// Missing sections keep defaults; unknown keys throw ConfigError.
ExperimentConfig experiment_config_from_json(std::string_view text);

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldRun {
  int test_fold = 0;
  TrainedModel model;
};

struct CrossValidation {
  std::vector<PredictionRecord> records;      // one per non-dev tree, ordered by (fold, tree_id)
  std::vector<PredictionRecord> dev_records;  // dev trees scored by each fold's model; fold = that test fold
  std::vector<FoldRun> runs;                  // ordered by test fold
};

/// Each non-dev fold is the test set once; the model trains on every other non-dev fold.
/// with_dev requires folds.dev_fold (or config.dev_fold) and also scores the dev fold with
/// every model. Throws ConfigError when folds and dataset disagree.
CrossValidation cross_validate(const std::vector<ConversationTree>& trees, const FoldSpec& folds,
                               const ExperimentConfig& config, bool with_dev);

/// The training seed used for a given test fold.
std::uint64_t fold_seed(std::uint64_t seed, int test_fold);

/// Trains a meta-classifier per test fold on that fold's dev records and pools the
/// retained test records.
SupervisedSplit supervised_reject_per_fold(const std::vector<PredictionRecord>& dev_records,
                                           const std::vector<PredictionRecord>& test_records,
                                           const MetaConfig& config);

// ---------------------------------------------------------------------------
// Timelines

struct TimelineStep {
  std::size_t n_tweets = 0;
  std::string added_tweet;
  std::optional<Stance> stance;
  Label predicted = Label::true_rumour;
  UncertaintyBundle bundle;
};

struct TimelineSeries {
  std::string tree_id;
  Label gold = Label::true_rumour;
  std::vector<TimelineStep> steps;
  std::vector<OrderingRepair> repairs;
};

/// Bundle of every timeline prefix under the same uncertainty config.
TimelineSeries timeline_report(const ModelParams& params, const ConversationTree& tree, const Embedder& embedder,
                               const UncertaintyConfig& config,
                               std::optional<std::size_t> max_branch_length = std::nullopt);

/// Prediction at the step with the lowest uncertainty for `measure`; ties go to the latest step.
Label min_uncertainty_prediction(const TimelineSeries& series, Measure measure);

/// tree_id,step,n_tweets,added_tweet,stance,pred,vr,entropy,variance,aleatoric,lcs,margin,ratio,softmax_entropy
std::string timeline_to_csv(const TimelineSeries& series);

}  // namespace veritas
