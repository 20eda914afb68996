#include "veritas/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "veritas/errors.hpp"

namespace veritas {

void SampleSet::validate() const {
  if (n_samples() < 1) throw InvalidInput("SampleSet needs at least one sample");
  for (std::size_t r = 0; r < n_samples(); ++r) {
    double total = 0.0;
    for (double p : samples.row(r)) {
      if (!(p >= 0.0)) throw InvalidInput("SampleSet row has a negative or non-finite entry");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("SampleSet row does not sum to 1");
  }
}

Vector SampleSet::mean() const {
  Vector m(num_classes(), 0.0);
  for (std::size_t r = 0; r < n_samples(); ++r) nn::add_inplace(m, samples.row(r));
  for (auto& v : m) v /= static_cast<double>(n_samples());
  return m;
}

std::string_view to_string(SamplingMode mode) { return mode == SamplingMode::tree ? "tree" : "branch"; }

SamplingMode parse_sampling_mode(std::string_view text) {
  if (text == "tree") return SamplingMode::tree;
  if (text == "branch") return SamplingMode::branch;
  throw ConfigError("unknown sampling mode '" + std::string(text) + "'");
}

void UncertaintyConfig::validate() const {
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (!(dropout_rate_test >= 0.0 && dropout_rate_test < 1.0)) throw ConfigError("dropout_rate_test must be in [0, 1)");
}

SampleSet mc_sample(const ModelParams& params, const EncodedTree& tree, std::size_t n_samples, double rate,
                    std::uint64_t seed) {
  if (n_samples < 1) throw ConfigError("mc_sample needs n_samples >= 1");
  const auto dropout = nn::DropoutSpec::on(rate);
  nn::validate(dropout);
  SampleSet s{Matrix(n_samples, params.num_classes())};
  for (std::size_t i = 0; i < n_samples; ++i) {
    nn::Rng rng = nn::Rng::derive(seed, i);
    const auto pred = predict_tree(params, tree, dropout, rng);
    for (std::size_t k = 0; k < pred.probs.size(); ++k) s.samples(i, k) = pred.probs[k];
  }
  return s;
}

double variation_ratio(const SampleSet& s) {
  if (s.n_samples() == 0) throw InvalidInput("variation_ratio of an empty SampleSet");
  std::vector<std::size_t> counts(s.num_classes(), 0);
  for (std::size_t r = 0; r < s.n_samples(); ++r) ++counts[nn::argmax(s.samples.row(r))];
  std::size_t mode = 0;
  for (std::size_t k = 1; k < counts.size(); ++k) {
    if (counts[k] > counts[mode]) mode = k;
  }
  return 1.0 - static_cast<double>(counts[mode]) / static_cast<double>(s.n_samples());
}

double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return std::max(h, 0.0);
}

double predictive_entropy(const SampleSet& s) {
  if (s.n_samples() == 0) throw InvalidInput("predictive_entropy of an empty SampleSet");
  return entropy(s.mean());
}

double max_variance(const SampleSet& s) {
  const std::size_t n = s.n_samples();
  if (n < 2) return 0.0;
  double best = 0.0;
  for (std::size_t k = 0; k < s.num_classes(); ++k) {
    // shifted by the first row so constant columns are exactly zero
    const double shift = s.samples(0, k);
    double mean = 0.0;
    for (std::size_t r = 0; r < n; ++r) mean += s.samples(r, k) - shift;
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const double d = (s.samples(r, k) - shift) - mean;
      ss += d * d;
    }
    best = std::max(best, ss / static_cast<double>(n));
  }
  return best;
}

SoftmaxConfidences softmax_confidences(std::span<const double> p) {
  if (p.size() < 2) throw InvalidInput("softmax_confidences needs at least 2 classes");
  double first = -1.0, second = -1.0;
  for (double x : p) {
    if (x > first) {
      second = first;
      first = x;
    } else if (x > second) {
      second = x;
    }
  }
  SoftmaxConfidences c;
  c.lcs = first;
  c.margin = first - second;
  c.ratio = first > 0.0 ? second / first : 1.0;
  c.entropy = entropy(p);
  return c;
}

double aleatoric_score(const ModelParams& params, const EncodedTree& tree) {
  const auto pred = predict_tree(params, tree);
  double total = 0.0;
  for (double s : pred.branch_sigmas) total += s;
  return total / static_cast<double>(pred.branch_sigmas.size());
}

namespace {

void fill_softmax(UncertaintyBundle& b, const TreePrediction& deterministic) {
  const auto c = softmax_confidences(deterministic.probs);
  b.softmax_lcs = c.lcs;
  b.softmax_margin = c.margin;
  b.softmax_ratio = c.ratio;
  b.softmax_entropy = c.entropy;
  b.mean_probs = deterministic.probs;
  b.predicted_class = deterministic.predicted;
  double total = 0.0;
  for (double s : deterministic.branch_sigmas) total += s;
  b.aleatoric = deterministic.branch_sigmas.empty() ? 0.0 : total / static_cast<double>(deterministic.branch_sigmas.size());
}

}  // namespace

UncertaintyBundle bundle_from(const TreePrediction& deterministic, const SampleSet& samples) {
  UncertaintyBundle b;
  fill_softmax(b, deterministic);
  b.variation_ratio = variation_ratio(samples);
  b.entropy = predictive_entropy(samples);
  b.variance = max_variance(samples);
  return b;
}

UncertaintyBundle bundle(const ModelParams& params, const EncodedTree& tree, const UncertaintyConfig& config) {
  config.validate();
  const auto deterministic = predict_tree(params, tree);
  if (config.mode == SamplingMode::tree) {
    return bundle_from(deterministic, mc_sample(params, tree, config.n_samples, config.dropout_rate_test, config.seed));
  }
  UncertaintyBundle b;
  fill_softmax(b, deterministic);
  for (std::size_t i = 0; i < tree.branches.size(); ++i) {
    const EncodedTree single{tree.tree_id, tree.label, {tree.branches[i]}};
    const auto s = mc_sample(params, single, config.n_samples, config.dropout_rate_test, nn::Rng::mix(config.seed, i));
    b.variation_ratio += variation_ratio(s);
    b.entropy += predictive_entropy(s);
    b.variance += max_variance(s);
  }
  const double n = static_cast<double>(tree.branches.size());
  b.variation_ratio /= n;
  b.entropy /= n;
  b.variance /= n;
  return b;
}

// ---------------------------------------------------------------------------

std::string_view to_string(Measure m) {
  switch (m) {
    case Measure::variation_ratio: return "variation_ratio";
    case Measure::entropy: return "entropy";
    case Measure::variance: return "variance";
    case Measure::aleatoric: return "aleatoric";
    case Measure::lcs: return "lcs";
    case Measure::margin: return "margin";
    case Measure::ratio: return "ratio";
    case Measure::softmax_entropy: return "softmax_entropy";
  }
  return "?";
}

Measure parse_measure(std::string_view name) {
  for (auto m : kAllMeasures) {
    if (to_string(m) == name) return m;
  }
  if (name == "vr") return Measure::variation_ratio;
  throw ConfigError("unknown uncertainty measure '" + std::string(name) + "'");
}

bool is_confidence(Measure m) { return m == Measure::lcs || m == Measure::margin; }

double measure_value(const UncertaintyBundle& b, Measure m) {
  switch (m) {
    case Measure::variation_ratio: return b.variation_ratio;
    case Measure::entropy: return b.entropy;
    case Measure::variance: return b.variance;
    case Measure::aleatoric: return b.aleatoric;
    case Measure::lcs: return b.softmax_lcs;
    case Measure::margin: return b.softmax_margin;
    case Measure::ratio: return b.softmax_ratio;
    case Measure::softmax_entropy: return b.softmax_entropy;
  }
  return 0.0;
}

double uncertainty_value(const UncertaintyBundle& b, Measure m) {
  const double v = measure_value(b, m);
  return is_confidence(m) ? 1.0 - v : v;
}

}  // namespace veritas
