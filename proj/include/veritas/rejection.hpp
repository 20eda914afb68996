#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "veritas/records.hpp"

namespace veritas {

struct RejectionSplit {
  std::vector<PredictionRecord> retained;  // input order
  std::vector<PredictionRecord> removed;   // most uncertain first (unsupervised) or input order
};

/// floor(f * n) with a small tolerance for fractions that are not exact in binary.
std::size_t retained_count(std::size_t n, double retain_fraction);

/// Removes the n - floor(f * n) most uncertain records; ties go to the smaller tree_id first.
/// Throws ConfigError unless f is in (0, 1].
RejectionSplit unsupervised_reject(const std::vector<PredictionRecord>& records, Measure measure,
                                   double retain_fraction);

/// Keeps a uniform sample of floor(f * n) records without replacement.
RejectionSplit random_reject(const std::vector<PredictionRecord>& records, double retain_fraction,
                             std::uint64_t seed);

/// Unsupervised rejection inside each fold, retained records pooled in fold order.
RejectionSplit per_fold_reject(const std::vector<PredictionRecord>& records, Measure measure,
                               double retain_fraction);

struct RejectionPoint {
  double retain_fraction = 1.0;
  std::size_t n_remaining = 0;
  bool defined = false;  // false when nothing is retained
  double accuracy = 0.0;
  double macro_f = 0.0;
};

struct RejectionCurve {
  std::string measure;
  std::vector<RejectionPoint> points;
};

/// Default grid: 1.0, 0.95, ..., 0.5.
std::vector<double> default_fractions();

/// Throws ConfigError unless fractions are in (0, 1] and strictly decreasing.
RejectionCurve rejection_curve(const std::vector<PredictionRecord>& records, Measure measure,
                               const std::vector<double>& fractions);
RejectionCurve random_curve(const std::vector<PredictionRecord>& records, const std::vector<double>& fractions,
                            std::uint64_t seed);
RejectionCurve per_fold_curve(const std::vector<PredictionRecord>& records, Measure measure,
                              const std::vector<double>& fractions);

RejectionPoint score_retained(const std::vector<PredictionRecord>& retained, std::size_t num_classes,
                              double retain_fraction);

/// measure,retain_fraction,n_remaining,accuracy,macro_f (undefined points print NA).
std::string curves_to_csv(const std::vector<RejectionCurve>& curves);

// ---------------------------------------------------------------------------
// Supervised rejection

enum class MetaBackend { linear_hinge, random_forest };

std::string_view to_string(MetaBackend backend);
MetaBackend parse_meta_backend(std::string_view text);

struct MetaConfig {
  MetaBackend backend = MetaBackend::linear_hinge;
  double l2 = 1e-3;
  std::size_t epochs = 200;
  double learning_rate = 0.05;
  std::size_t n_trees = 100;
  std::size_t max_depth = 8;
  double bootstrap_fraction = 1.0;
  std::size_t min_samples_split = 2;
  double threshold = 0.5;  // records scoring below are rejected
  bool balanced = false;   // linear_hinge: weight each class by n / (2 * class count)
  std::uint64_t seed = 0;

  void validate() const;
};

std::string meta_config_to_json(const MetaConfig& config);
/// Missing keys keep their defaults; unknown keys throw ConfigError.
MetaConfig meta_config_from_json(std::string_view text);

/// [aleatoric, variance, entropy, variation_ratio, p_0..p_{C-1}, one-hot predicted class]
Vector meta_features(const PredictionRecord& record);

struct ForestNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // fraction of correct training records reaching the node

  friend bool operator==(const ForestNode&, const ForestNode&) = default;
};

using ForestTree = std::vector<ForestNode>;  // node 0 is the root

struct MetaClassifier {
  MetaBackend backend = MetaBackend::linear_hinge;
  std::size_t num_classes = 0;
  double threshold = 0.5;
  std::optional<bool> constant;  // set when the dev labels had a single class

  Vector feature_mean;
  Vector feature_scale;
  Vector weights;
  double bias = 0.0;

  std::vector<ForestTree> forest;

  std::size_t n_features() const noexcept { return 4 + 2 * num_classes; }
  /// In [0, 1]; higher means more likely correct.
  double score(const PredictionRecord& record) const;
  bool predicts_correct(const PredictionRecord& record) const;

  friend bool operator==(const MetaClassifier&, const MetaClassifier&) = default;
};

/// Binary correct-vs-incorrect classifier on dev records. A single-class dev set gives a
/// constant classifier and a warning.
MetaClassifier train_meta(const std::vector<PredictionRecord>& dev, const MetaConfig& config);

struct SupervisedSplit {
  std::vector<PredictionRecord> retained;
  std::vector<PredictionRecord> removed;
  std::size_t n_removed = 0;
};

/// Removes records the classifier labels incorrect. Throws ConfigError on a class-count mismatch.
SupervisedSplit supervised_reject(const MetaClassifier& meta, const std::vector<PredictionRecord>& records);

std::string meta_to_json(const MetaClassifier& meta);
/// Throws ParseError on malformed input.
MetaClassifier meta_from_json(std::string_view text);
void save_meta(const std::string& path, const MetaClassifier& meta);
MetaClassifier load_meta(const std::string& path);

}  // namespace veritas
