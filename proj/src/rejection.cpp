#include "veritas/rejection.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "veritas/errors.hpp"
#include "veritas/io.hpp"
#include "veritas/parallel.hpp"
#include "veritas/rng.hpp"

namespace veritas {

using json = nlohmann::json;

namespace {

void check_fraction(double f) {
  if (!(f > 0.0 && f <= 1.0)) throw ConfigError("retain fraction must be in (0, 1], got " + format_double(f));
}

void check_fractions(const std::vector<double>& fractions) {
  if (fractions.empty()) throw ConfigError("no retain fractions given");
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    check_fraction(fractions[i]);
    if (i > 0 && !(fractions[i] < fractions[i - 1])) throw ConfigError("retain fractions must be strictly decreasing");
  }
}

}  // namespace

std::size_t retained_count(std::size_t n, double retain_fraction) {
  check_fraction(retain_fraction);
  return static_cast<std::size_t>(std::floor(retain_fraction * static_cast<double>(n) + 1e-9));
}

RejectionSplit unsupervised_reject(const std::vector<PredictionRecord>& records, Measure measure,
                                   double retain_fraction) {
  const std::size_t keep = retained_count(records.size(), retain_fraction);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> u(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) u[i] = uncertainty_value(records[i].bundle, measure);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (u[a] != u[b]) return u[a] > u[b];
    return records[a].tree_id < records[b].tree_id;
  });
  const std::size_t n_remove = records.size() - keep;
  std::vector<bool> removed(records.size(), false);
  RejectionSplit split;
  for (std::size_t i = 0; i < n_remove; ++i) {
    removed[order[i]] = true;
    split.removed.push_back(records[order[i]]);
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (!removed[i]) split.retained.push_back(records[i]);
  }
  return split;
}

RejectionSplit random_reject(const std::vector<PredictionRecord>& records, double retain_fraction,
                             std::uint64_t seed) {
  const std::size_t keep = retained_count(records.size(), retain_fraction);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  nn::Rng rng(seed);
  nn::shuffle(order, rng);
  std::vector<bool> kept(records.size(), false);
  for (std::size_t i = 0; i < keep; ++i) kept[order[i]] = true;
  RejectionSplit split;
  for (std::size_t i = 0; i < records.size(); ++i) (kept[i] ? split.retained : split.removed).push_back(records[i]);
  return split;
}

RejectionSplit per_fold_reject(const std::vector<PredictionRecord>& records, Measure measure,
                               double retain_fraction) {
  check_fraction(retain_fraction);
  std::map<int, std::vector<PredictionRecord>> by_fold;
  for (const auto& r : records) by_fold[r.fold].push_back(r);
  RejectionSplit pooled;
  for (const auto& [fold, members] : by_fold) {
    auto split = unsupervised_reject(members, measure, retain_fraction);
    pooled.retained.insert(pooled.retained.end(), split.retained.begin(), split.retained.end());
    pooled.removed.insert(pooled.removed.end(), split.removed.begin(), split.removed.end());
  }
  return pooled;
}

std::vector<double> default_fractions() {
  std::vector<double> f;
  for (int pct = 100; pct >= 50; pct -= 5) f.push_back(pct / 100.0);
  return f;
}

RejectionPoint score_retained(const std::vector<PredictionRecord>& retained, std::size_t num_classes,
                              double retain_fraction) {
  RejectionPoint p;
  p.retain_fraction = retain_fraction;
  p.n_remaining = retained.size();
  if (retained.empty()) return p;
  const auto m = evaluate(retained, num_classes);
  p.defined = true;
  p.accuracy = m.accuracy;
  p.macro_f = m.macro_f;
  return p;
}

namespace {

template <typename Reject>
RejectionCurve build_curve(const std::vector<PredictionRecord>& records, std::string name,
                           const std::vector<double>& fractions, Reject reject) {
  check_fractions(fractions);
  const std::size_t c = record_class_count(records);
  RejectionCurve curve{std::move(name), {}};
  for (double f : fractions) curve.points.push_back(score_retained(reject(f).retained, c, f));
  return curve;
}

}  // namespace

RejectionCurve rejection_curve(const std::vector<PredictionRecord>& records, Measure measure,
                               const std::vector<double>& fractions) {
  return build_curve(records, std::string(to_string(measure)), fractions,
                     [&](double f) { return unsupervised_reject(records, measure, f); });
}

RejectionCurve random_curve(const std::vector<PredictionRecord>& records, const std::vector<double>& fractions,
                            std::uint64_t seed) {
  return build_curve(records, "random", fractions, [&](double f) { return random_reject(records, f, seed); });
}

RejectionCurve per_fold_curve(const std::vector<PredictionRecord>& records, Measure measure,
                              const std::vector<double>& fractions) {
  return build_curve(records, std::string(to_string(measure)), fractions,
                     [&](double f) { return per_fold_reject(records, measure, f); });
}

std::string curves_to_csv(const std::vector<RejectionCurve>& curves) {
  std::ostringstream out;
  out << "measure,retain_fraction,n_remaining,accuracy,macro_f\n";
  for (const auto& curve : curves) {
    for (const auto& p : curve.points) {
      out << curve.measure << ',' << format_double(p.retain_fraction) << ',' << p.n_remaining << ',';
      if (p.defined) {
        out << format_double(p.accuracy) << ',' << format_double(p.macro_f) << '\n';
      } else {
        out << "NA,NA\n";
      }
    }
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Meta-classifier

std::string_view to_string(MetaBackend backend) {
  return backend == MetaBackend::linear_hinge ? "linear_hinge" : "random_forest";
}

MetaBackend parse_meta_backend(std::string_view text) {
  if (text == "linear_hinge" || text == "svm") return MetaBackend::linear_hinge;
  if (text == "random_forest" || text == "rf") return MetaBackend::random_forest;
  throw ConfigError("unknown meta backend '" + std::string(text) + "'");
}

void MetaConfig::validate() const {
  if (!(l2 >= 0.0)) throw ConfigError("meta l2 must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("meta learning_rate must be > 0");
  if (n_trees == 0) throw ConfigError("meta n_trees must be >= 1");
  if (max_depth == 0) throw ConfigError("meta max_depth must be >= 1");
  if (!(bootstrap_fraction > 0.0 && bootstrap_fraction <= 1.0)) throw ConfigError("meta bootstrap_fraction must be in (0, 1]");
  if (min_samples_split < 2) throw ConfigError("meta min_samples_split must be >= 2");
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("meta threshold must be in [0, 1]");
}

std::string meta_config_to_json(const MetaConfig& c) {
  nlohmann::ordered_json doc;
  doc["backend"] = std::string(to_string(c.backend));
  doc["l2"] = c.l2;
  doc["epochs"] = c.epochs;
  doc["learning_rate"] = c.learning_rate;
  doc["n_trees"] = c.n_trees;
  doc["max_depth"] = c.max_depth;
  doc["bootstrap_fraction"] = c.bootstrap_fraction;
  doc["min_samples_split"] = c.min_samples_split;
  doc["threshold"] = c.threshold;
  doc["balanced"] = c.balanced;
  doc["seed"] = c.seed;
  return doc.dump(2);
}

MetaConfig meta_config_from_json(std::string_view text) {
  MetaConfig c;
  try {
    const auto doc = json::parse(text);
    if (!doc.is_object()) throw ConfigError("meta config must be a JSON object");
    for (const auto& [key, value] : doc.items()) {
      if (key == "backend") c.backend = parse_meta_backend(value.get<std::string>());
      else if (key == "l2") c.l2 = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<std::size_t>();
      else if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "n_trees") c.n_trees = value.get<std::size_t>();
      else if (key == "max_depth") c.max_depth = value.get<std::size_t>();
      else if (key == "bootstrap_fraction") c.bootstrap_fraction = value.get<double>();
      else if (key == "min_samples_split") c.min_samples_split = value.get<std::size_t>();
      else if (key == "threshold") c.threshold = value.get<double>();
      else if (key == "balanced") c.balanced = value.get<bool>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else throw ConfigError("unknown meta config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("meta config: ") + e.what());
  }
  c.validate();
  return c;
}

Vector meta_features(const PredictionRecord& r) {
  const auto& b = r.bundle;
  Vector x{b.aleatoric, b.variance, b.entropy, b.variation_ratio};
  x.insert(x.end(), b.mean_probs.begin(), b.mean_probs.end());
  for (std::size_t k = 0; k < b.mean_probs.size(); ++k) x.push_back(k == b.predicted_class ? 1.0 : 0.0);
  return x;
}

namespace {

double forest_tree_score(const ForestTree& tree, const Vector& x) {
  std::size_t node = 0;
  while (tree[node].feature >= 0) {
    const auto& n = tree[node];
    node = static_cast<std::size_t>(x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right);
  }
  return tree[node].value;
}

class TreeBuilder {
 public:
  TreeBuilder(const std::vector<Vector>& x, const std::vector<int>& y, const MetaConfig& config, nn::Rng& rng)
      : x_(x), y_(y), config_(config), rng_(rng) {
    const std::size_t d = x.front().size();
    mtry_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(d)))));
  }

  ForestTree build(std::vector<std::size_t> sample) {
    tree_.clear();
    grow(std::move(sample), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::size_t> idx, std::size_t depth) {
    const int id = static_cast<int>(tree_.size());
    tree_.emplace_back();
    std::size_t positives = 0;
    for (auto i : idx) positives += static_cast<std::size_t>(y_[i]);
    const double n = static_cast<double>(idx.size());
    tree_[id].value = positives / n;
    if (depth >= config_.max_depth || idx.size() < config_.min_samples_split || positives == 0 ||
        positives == idx.size()) {
      return id;
    }

    std::vector<std::size_t> features(x_.front().size());
    std::iota(features.begin(), features.end(), 0);
    nn::shuffle(features, rng_);
    features.resize(mtry_);

    const double parent = n * gini(static_cast<double>(positives), n);
    double best = parent - 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    std::vector<std::size_t> sorted = idx;
    for (auto f : features) {
      std::sort(sorted.begin(), sorted.end(), [&](std::size_t a, std::size_t b) { return x_[a][f] < x_[b][f]; });
      double left_pos = 0.0;
      for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
        left_pos += y_[sorted[k]];
        const double lo = x_[sorted[k]][f], hi = x_[sorted[k + 1]][f];
        if (!(lo < hi)) continue;
        const double nl = static_cast<double>(k + 1), nr = n - nl;
        const double impurity = nl * gini(left_pos, nl) + nr * gini(static_cast<double>(positives) - left_pos, nr);
        if (impurity < best) {
          best = impurity;
          best_feature = static_cast<int>(f);
          best_threshold = lo + (hi - lo) / 2.0;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> left, right;
    for (auto i : idx) (x_[i][static_cast<std::size_t>(best_feature)] <= best_threshold ? left : right).push_back(i);
    tree_[id].feature = best_feature;
    tree_[id].threshold = best_threshold;
    const int l = grow(std::move(left), depth + 1);
    tree_[id].left = l;
    const int r = grow(std::move(right), depth + 1);
    tree_[id].right = r;
    return id;
  }

  static double gini(double pos, double n) {
    const double p = pos / n;
    return 2.0 * p * (1.0 - p);
  }

  const std::vector<Vector>& x_;
  const std::vector<int>& y_;
  const MetaConfig& config_;
  nn::Rng& rng_;
  std::size_t mtry_ = 1;
  ForestTree tree_;
};

void fit_linear(MetaClassifier& meta, const std::vector<Vector>& x, const std::vector<int>& y,
                const MetaConfig& config) {
  const std::size_t n = x.size(), d = x.front().size();
  meta.feature_mean.assign(d, 0.0);
  meta.feature_scale.assign(d, 1.0);
  for (const auto& row : x) {
    for (std::size_t j = 0; j < d; ++j) meta.feature_mean[j] += row[j] / static_cast<double>(n);
  }
  for (std::size_t j = 0; j < d; ++j) {
    double ss = 0.0;
    for (const auto& row : x) ss += (row[j] - meta.feature_mean[j]) * (row[j] - meta.feature_mean[j]);
    const double sd = std::sqrt(ss / static_cast<double>(n));
    meta.feature_scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  std::vector<Vector> z(n, Vector(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z[i][j] = (x[i][j] - meta.feature_mean[j]) / meta.feature_scale[j];
  }
  meta.weights.assign(d, 0.0);
  meta.bias = 0.0;
  const double positives = static_cast<double>(std::count(y.begin(), y.end(), 1));
  const double weight_pos = config.balanced ? static_cast<double>(n) / (2.0 * positives) : 1.0;
  const double weight_neg = config.balanced ? static_cast<double>(n) / (2.0 * (static_cast<double>(n) - positives)) : 1.0;
  Vector grad(d);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t j = 0; j < d; ++j) grad[j] = config.l2 * meta.weights[j];
    double grad_bias = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double target = y[i] ? 1.0 : -1.0;
      const double margin = target * (nn::dot(meta.weights, z[i]) + meta.bias);
      if (margin < 1.0) {
        const double w = (y[i] ? weight_pos : weight_neg) / static_cast<double>(n);
        for (std::size_t j = 0; j < d; ++j) grad[j] -= w * target * z[i][j];
        grad_bias -= w * target;
      }
    }
    for (std::size_t j = 0; j < d; ++j) meta.weights[j] -= config.learning_rate * grad[j];
    meta.bias -= config.learning_rate * grad_bias;
  }
}

}  // namespace

double MetaClassifier::score(const PredictionRecord& record) const {
  if (record.num_classes() != num_classes) {
    throw ConfigError("meta-classifier expects " + std::to_string(num_classes) + " classes, record " +
                      record.tree_id + " has " + std::to_string(record.num_classes()));
  }
  if (constant) return *constant ? 1.0 : 0.0;
  const Vector x = meta_features(record);
  if (backend == MetaBackend::linear_hinge) {
    double s = bias;
    for (std::size_t j = 0; j < x.size(); ++j) s += weights[j] * (x[j] - feature_mean[j]) / feature_scale[j];
    return nn::logistic(s);
  }
  double total = 0.0;
  for (const auto& tree : forest) total += forest_tree_score(tree, x);
  return total / static_cast<double>(forest.size());
}

bool MetaClassifier::predicts_correct(const PredictionRecord& record) const {
  if (constant) {
    score(record);  // schema check
    return *constant;
  }
  return score(record) >= threshold;
}

MetaClassifier train_meta(const std::vector<PredictionRecord>& dev, const MetaConfig& config) {
  config.validate();
  MetaClassifier meta;
  meta.backend = config.backend;
  meta.num_classes = record_class_count(dev);
  meta.threshold = config.threshold;

  std::vector<Vector> x;
  std::vector<int> y;
  std::size_t positives = 0;
  for (const auto& r : dev) {
    x.push_back(meta_features(r));
    y.push_back(r.correct ? 1 : 0);
    positives += r.correct ? 1 : 0;
  }
  if (positives == 0 || positives == dev.size()) {
    meta.constant = positives > 0;
    warn(std::string("meta-classifier dev set has a single class; predicting '") +
         (positives > 0 ? "correct" : "incorrect") + "' everywhere");
    return meta;
  }

  if (config.backend == MetaBackend::linear_hinge) {
    fit_linear(meta, x, y, config);
    return meta;
  }

  meta.forest.resize(config.n_trees);
  const std::size_t draw = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(config.bootstrap_fraction * static_cast<double>(dev.size()))));
  parallel_for(config.n_trees, [&](std::size_t t) {
    nn::Rng rng = nn::Rng::derive(config.seed, t);
    std::vector<std::size_t> sample(draw);
    for (auto& s : sample) s = static_cast<std::size_t>(rng.below(dev.size()));
    TreeBuilder builder(x, y, config, rng);
    meta.forest[t] = builder.build(std::move(sample));
  });
  return meta;
}

SupervisedSplit supervised_reject(const MetaClassifier& meta, const std::vector<PredictionRecord>& records) {
  SupervisedSplit split;
  for (const auto& r : records) (meta.predicts_correct(r) ? split.retained : split.removed).push_back(r);
  split.n_removed = split.removed.size();
  return split;
}

std::string meta_to_json(const MetaClassifier& meta) {
  json doc;
  doc["backend"] = std::string(to_string(meta.backend));
  doc["num_classes"] = meta.num_classes;
  doc["threshold"] = meta.threshold;
  doc["constant"] = meta.constant ? json(*meta.constant) : json(nullptr);
  doc["feature_mean"] = meta.feature_mean;
  doc["feature_scale"] = meta.feature_scale;
  doc["weights"] = meta.weights;
  doc["bias"] = meta.bias;
  json forest = json::array();
  for (const auto& tree : meta.forest) {
    json nodes = json::array();
    for (const auto& n : tree) nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    forest.push_back(nodes);
  }
  doc["forest"] = forest;
  return doc.dump();
}

MetaClassifier meta_from_json(std::string_view text) {
  MetaClassifier meta;
  try {
    const auto doc = json::parse(text);
    meta.backend = parse_meta_backend(doc.at("backend").get<std::string>());
    meta.num_classes = doc.at("num_classes").get<std::size_t>();
    meta.threshold = doc.at("threshold").get<double>();
    if (!doc.at("constant").is_null()) meta.constant = doc.at("constant").get<bool>();
    meta.feature_mean = doc.at("feature_mean").get<Vector>();
    meta.feature_scale = doc.at("feature_scale").get<Vector>();
    meta.weights = doc.at("weights").get<Vector>();
    meta.bias = doc.at("bias").get<double>();
    for (const auto& nodes : doc.at("forest")) {
      ForestTree tree;
      for (const auto& n : nodes) {
        tree.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(), n.at(3).get<int>(),
                        n.at(4).get<double>()});
      }
      meta.forest.push_back(std::move(tree));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("meta-classifier JSON: ") + e.what());
  } catch (const ConfigError& e) {
    throw ParseError(std::string("meta-classifier JSON: ") + e.what());
  }
  const std::size_t d = meta.n_features();
  if (meta.num_classes < 2) throw ParseError("meta-classifier JSON: num_classes must be >= 2");
  if (!meta.constant) {
    if (meta.backend == MetaBackend::linear_hinge &&
        (meta.weights.size() != d || meta.feature_mean.size() != d || meta.feature_scale.size() != d)) {
      throw ParseError("meta-classifier JSON: linear state does not match " + std::to_string(d) + " features");
    }
    if (meta.backend == MetaBackend::random_forest) {
      if (meta.forest.empty()) throw ParseError("meta-classifier JSON: empty forest");
      for (const auto& tree : meta.forest) {
        const int size = static_cast<int>(tree.size());
        if (size == 0) throw ParseError("meta-classifier JSON: empty tree");
        for (int i = 0; i < size; ++i) {
          const auto& n = tree[static_cast<std::size_t>(i)];
          if (n.feature >= static_cast<int>(d) ||
              (n.feature >= 0 && (n.left <= i || n.left >= size || n.right <= i || n.right >= size))) {
            throw ParseError("meta-classifier JSON: malformed tree node");
          }
        }
      }
    }
  }
  return meta;
}

void save_meta(const std::string& path, const MetaClassifier& meta) { write_file(path, meta_to_json(meta) + "\n"); }

MetaClassifier load_meta(const std::string& path) { return meta_from_json(read_file(path)); }

}  // namespace veritas
