#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>

#include "veritas/verifier.hpp"

namespace veritas {

/// N stochastic probability vectors for one instance, one per row.
struct SampleSet {
  Matrix samples;  // (N, C)

  std::size_t n_samples() const noexcept { return samples.rows(); }
  std::size_t num_classes() const noexcept { return samples.cols(); }
  /// Throws InvalidInput unless N >= 1 and every row is a distribution (sum 1 +- 1e-9).
  void validate() const;
  Vector mean() const;
};

/// Where MC-dropout samples are taken.
enum class SamplingMode {
  tree,    // each sample is a full branch-averaged tree prediction
  branch,  // each branch is sampled separately; per-branch measures are averaged
};

std::string_view to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(std::string_view text);

struct UncertaintyConfig {
  std::size_t n_samples = 25;
  double dropout_rate_test = 0.3;
  std::uint64_t seed = 0;
  SamplingMode mode = SamplingMode::tree;

  void validate() const;
};

/// Sample i runs predict_tree with dropout at `rate` on the stream Rng::derive(seed, i),
/// so results do not depend on evaluation order.
SampleSet mc_sample(const ModelParams& params, const EncodedTree& tree, std::size_t n_samples, double rate,
                    std::uint64_t seed);

/// 1 - (rows whose argmax is the mode class) / N. Argmax and mode ties go to the lowest index.
double variation_ratio(const SampleSet& s);
/// Natural-log entropy of the row mean, with 0 ln 0 = 0.
double predictive_entropy(const SampleSet& s);
/// Largest per-class population variance across rows; 0 when N < 2.
double max_variance(const SampleSet& s);

double entropy(std::span<const double> p);

struct SoftmaxConfidences {
  double lcs = 0.0;      // highest probability (confidence)
  double margin = 0.0;   // top1 - top2 (confidence)
  double ratio = 0.0;    // top2 / top1 (uncertainty)
  double entropy = 0.0;  // (uncertainty)
};

SoftmaxConfidences softmax_confidences(std::span<const double> p);

/// Mean of the branch variance-head outputs with dropout off.
double aleatoric_score(const ModelParams& params, const EncodedTree& tree);

struct UncertaintyBundle {
  double variation_ratio = 0.0;
  double entropy = 0.0;
  double variance = 0.0;
  double aleatoric = 0.0;
  double softmax_lcs = 0.0;
  double softmax_margin = 0.0;
  double softmax_ratio = 0.0;
  double softmax_entropy = 0.0;
  Vector mean_probs;  // deterministic branch-averaged softmax output
  std::size_t predicted_class = 0;

  friend bool operator==(const UncertaintyBundle&, const UncertaintyBundle&) = default;
};

/// Every estimator from one deterministic pass plus one SampleSet.
UncertaintyBundle bundle(const ModelParams& params, const EncodedTree& tree, const UncertaintyConfig& config);
/// Assembles a bundle from precomputed pieces (tree sampling mode).
UncertaintyBundle bundle_from(const TreePrediction& deterministic, const SampleSet& samples);

// ---------------------------------------------------------------------------
// Named measures

enum class Measure { variation_ratio, entropy, variance, aleatoric, lcs, margin, ratio, softmax_entropy };

inline constexpr std::array<Measure, 8> kAllMeasures{Measure::variation_ratio, Measure::entropy, Measure::variance,
                                                     Measure::aleatoric,       Measure::lcs,     Measure::margin,
                                                     Measure::ratio,           Measure::softmax_entropy};

std::string_view to_string(Measure m);
/// Throws ConfigError for unknown names.
Measure parse_measure(std::string_view name);
/// lcs and margin grow with certainty; every other measure grows with uncertainty.
bool is_confidence(Measure m);
double measure_value(const UncertaintyBundle& b, Measure m);
/// The value oriented so that larger means less certain (1 - value for lcs and margin).
double uncertainty_value(const UncertaintyBundle& b, Measure m);

}  // namespace veritas
