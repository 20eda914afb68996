#include "veritas/harness.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "veritas/errors.hpp"
#include "veritas/io.hpp"
#include "veritas/parallel.hpp"
#include "veritas/rng.hpp"

namespace veritas {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Statistics

double gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw InvalidInput("gamma_q needs a > 0 and x >= 0");
  if (x == 0.0) return 1.0;
  if (std::isinf(x)) return 0.0;
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  const double log_prefactor = -x + a * std::log(x) - std::lgamma(a);
  if (x < a + 1.0) {
    // P(a, x) = e^{-x} x^a / Gamma(a + 1) * sum_n x^n / ((a + 1)...(a + n))
    double term = 1.0 / a, sum = term, ap = a;
    for (int n = 0; n < kMaxIterations; ++n) {
      ap += 1.0;
      term *= x / ap;
      sum += term;
      if (std::abs(term) < std::abs(sum) * kEps) break;
    }
    return std::clamp(1.0 - sum * std::exp(log_prefactor), 0.0, 1.0);
  }
  // Modified Lentz evaluation of the continued fraction for Q.
  constexpr double kTiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / kTiny, d = 1.0 / b, h = d;
  for (int i = 1; i < kMaxIterations; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kTiny) d = kTiny;
    c = b + an / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) break;
  }
  return std::clamp(std::exp(log_prefactor) * h, 0.0, 1.0);
}

KruskalWallis kruskal_wallis(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw InvalidInput("kruskal_wallis needs at least two groups");
  std::vector<std::pair<double, std::size_t>> pooled;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    if (groups[g].empty()) throw InvalidInput("kruskal_wallis group " + std::to_string(g) + " is empty");
    for (double v : groups[g]) {
      if (!std::isfinite(v)) throw InvalidInput("kruskal_wallis values must be finite");
      pooled.emplace_back(v, g);
    }
  }
  std::sort(pooled.begin(), pooled.end());
  const double n = static_cast<double>(pooled.size());
  std::vector<double> rank_sum(groups.size(), 0.0);
  double tie_sum = 0.0;
  for (std::size_t i = 0; i < pooled.size();) {
    std::size_t j = i;
    while (j < pooled.size() && pooled[j].first == pooled[i].first) ++j;
    const double average_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) rank_sum[pooled[k].second] += average_rank;
    const double t = static_cast<double>(j - i);
    tie_sum += t * t * t - t;
    i = j;
  }
  KruskalWallis result;
  result.df = groups.size() - 1;
  const double correction = 1.0 - tie_sum / (n * n * n - n);
  if (!(correction > 0.0)) return result;
  double h = 0.0;
  for (std::size_t g = 0; g < groups.size(); ++g) h += rank_sum[g] * rank_sum[g] / static_cast<double>(groups[g].size());
  h = 12.0 / (n * (n + 1.0)) * h - 3.0 * (n + 1.0);
  result.h = std::max(0.0, h / correction);
  result.p = gamma_q(static_cast<double>(result.df) / 2.0, result.h / 2.0);
  return result;
}

// ---------------------------------------------------------------------------
// Grouping

std::string_view to_string(GroupKey key) { return key == GroupKey::class_label ? "class_label" : "conversation_size"; }

GroupKey parse_group_key(std::string_view text) {
  if (text == "class_label" || text == "label") return GroupKey::class_label;
  if (text == "conversation_size" || text == "size") return GroupKey::conversation_size;
  throw ConfigError("unknown grouping key '" + std::string(text) + "'");
}

std::vector<UncertaintyGroup> group_uncertainty_by(const std::vector<PredictionRecord>& records, GroupKey key,
                                                   Measure measure,
                                                   const std::map<std::string, std::size_t>& tree_sizes,
                                                   std::size_t size_bins) {
  std::vector<UncertaintyGroup> groups;
  if (key == GroupKey::class_label) {
    std::map<int, UncertaintyGroup> by_label;
    for (const auto& r : records) {
      auto& g = by_label[class_index(r.gold)];
      g.name = std::string(to_string(r.gold));
      g.tree_ids.push_back(r.tree_id);
      g.values.push_back(measure_value(r.bundle, measure));
    }
    for (auto& [label, g] : by_label) groups.push_back(std::move(g));
    return groups;
  }

  if (size_bins == 0) throw ConfigError("size bin count must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> order;  // (size, record index)
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto it = tree_sizes.find(records[i].tree_id);
    if (it == tree_sizes.end()) throw DataError("no conversation size for tree '" + records[i].tree_id + "'");
    order.emplace_back(it->second, i);
  }
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return records[a.second].tree_id < records[b.second].tree_id;
  });
  const std::size_t bins = std::min(size_bins, std::max<std::size_t>(order.size(), 1));
  const std::size_t base = order.size() / bins, extra = order.size() % bins;
  std::size_t next = 0;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t count = base + (b < extra ? 1 : 0);
    UncertaintyGroup g;
    for (std::size_t k = 0; k < count; ++k, ++next) {
      const auto& r = records[order[next].second];
      g.tree_ids.push_back(r.tree_id);
      g.values.push_back(measure_value(r.bundle, measure));
    }
    if (count > 0) {
      g.name = "size " + std::to_string(order[next - count].first) + "-" + std::to_string(order[next - 1].first);
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticSpec::validate() const {
  if (num_classes < 2 || num_classes > static_cast<std::size_t>(kMaxClasses)) throw ConfigError("num_classes must be in [2, 4]");
  if (class_vocab == 0 || filler_vocab == 0) throw ConfigError("vocabularies must be nonempty");
  if (!(signal_min >= 0.0 && signal_min <= signal_max && signal_max <= 1.0)) {
    throw ConfigError("need 0 <= signal_min <= signal_max <= 1");
  }
  if (min_tokens == 0 || min_tokens > max_tokens) throw ConfigError("need 1 <= min_tokens <= max_tokens");
  if (!(reply_prob >= 0.0 && reply_prob < 1.0)) throw ConfigError("reply_prob must be in [0, 1)");
  if (max_tweets == 0 || depth_cap == 0) throw ConfigError("max_tweets and depth_cap must be >= 1");
  if (!(label_noise >= 0.0 && label_noise < 0.5)) throw ConfigError("label_noise must be in [0, 0.5)");
  if (n_events == 0) throw ConfigError("n_events must be >= 1");
}

std::string synthetic_spec_to_json(const SyntheticSpec& s) {
  ordered_json doc;
  doc["trees_per_class"] = s.trees_per_class;
  doc["num_classes"] = s.num_classes;
  doc["class_vocab"] = s.class_vocab;
  doc["filler_vocab"] = s.filler_vocab;
  doc["signal_min"] = s.signal_min;
  doc["signal_max"] = s.signal_max;
  doc["min_tokens"] = s.min_tokens;
  doc["max_tokens"] = s.max_tokens;
  doc["reply_prob"] = s.reply_prob;
  doc["max_tweets"] = s.max_tweets;
  doc["depth_cap"] = s.depth_cap;
  doc["label_noise"] = s.label_noise;
  doc["n_events"] = s.n_events;
  doc["seed"] = s.seed;
  return doc.dump(2);
}

SyntheticSpec synthetic_spec_from_json(std::string_view text) {
  SyntheticSpec s;
  try {
    const auto doc = json::parse(text);
    if (!doc.is_object()) throw ConfigError("synthetic spec must be a JSON object");
    for (const auto& [key, v] : doc.items()) {
      if (key == "trees_per_class") s.trees_per_class = v.get<std::size_t>();
      else if (key == "num_classes") s.num_classes = v.get<std::size_t>();
      else if (key == "class_vocab") s.class_vocab = v.get<std::size_t>();
      else if (key == "filler_vocab") s.filler_vocab = v.get<std::size_t>();
      else if (key == "signal_min") s.signal_min = v.get<double>();
      else if (key == "signal_max") s.signal_max = v.get<double>();
      else if (key == "min_tokens") s.min_tokens = v.get<std::size_t>();
      else if (key == "max_tokens") s.max_tokens = v.get<std::size_t>();
      else if (key == "reply_prob") s.reply_prob = v.get<double>();
      else if (key == "max_tweets") s.max_tweets = v.get<std::size_t>();
      else if (key == "depth_cap") s.depth_cap = v.get<std::size_t>();
      else if (key == "label_noise") s.label_noise = v.get<double>();
      else if (key == "n_events") s.n_events = v.get<std::size_t>();
      else if (key == "seed") s.seed = v.get<std::uint64_t>();
      else throw ConfigError("unknown synthetic spec key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  s.validate();
  return s;
}

namespace {

std::string padded(std::size_t value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
  return digits;
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  nn::Rng rng(spec.seed);
  std::vector<std::size_t> content;
  for (std::size_t c = 0; c < spec.num_classes; ++c) content.insert(content.end(), spec.trees_per_class, c);
  nn::shuffle(content, rng);

  SyntheticData data;
  for (std::size_t i = 0; i < content.size(); ++i) {
    const std::size_t z = content[i];
    // Noisier labels on vaguer trees: the flip chance 2 * noise * (1 - q) averages to `label_noise`.
    const double q = rng.uniform();
    const double clarity = spec.signal_min + (spec.signal_max - spec.signal_min) * q;
    std::size_t label = z;
    if (q < spec.label_noise) {
      label = (z + 1 + rng.below(spec.num_classes - 1)) % spec.num_classes;
    }

    ConversationTree tree;
    tree.tree_id = "syn" + padded(i, 5);
    tree.event = "event" + std::to_string(rng.below(spec.n_events));
    tree.label = label_from_index(static_cast<int>(label));

    auto class_token = [&] { return "k" + std::to_string(z) + "w" + std::to_string(rng.below(spec.class_vocab)); };
    auto make_text = [&](bool force_signal) {
      const std::size_t n = spec.min_tokens + rng.below(spec.max_tokens - spec.min_tokens + 1);
      std::string text;
      for (std::size_t t = 0; t < n; ++t) {
        if (t > 0) text += ' ';
        if ((force_signal && t == 0) || rng.uniform() < clarity) {
          text += class_token();
        } else {
          text += "f" + std::to_string(rng.below(spec.filler_vocab));
        }
      }
      return text;
    };

    std::int64_t clock = 1'500'000'000'000 + static_cast<std::int64_t>(i) * 86'400'000;
    std::vector<std::size_t> depth{0};
    tree.tweets.push_back({tree.tree_id + "_0", std::nullopt, clock, make_text(true), std::nullopt});
    while (tree.tweets.size() < spec.max_tweets && rng.uniform() < spec.reply_prob) {
      std::vector<std::size_t> open;
      for (std::size_t k = 0; k < depth.size(); ++k) {
        if (depth[k] < spec.depth_cap) open.push_back(k);
      }
      const std::size_t parent = open[rng.below(open.size())];
      clock += 1000 + static_cast<std::int64_t>(rng.below(600'000));
      const auto stance = static_cast<Stance>(rng.below(4));
      tree.tweets.push_back({tree.tree_id + "_" + std::to_string(tree.tweets.size()), tree.tweets[parent].id, clock,
                             make_text(false), stance});
      depth.push_back(depth[parent] + 1);
    }
    data.trees.push_back(std::move(tree));
    data.content_class.push_back(label_from_index(static_cast<int>(z)));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Experiment configuration

Embedder EmbedderConfig::make() const {
  if (kind == Embedder::Kind::table) {
    if (path.empty()) throw ConfigError("table embeddings need a path");
    return load_embedding_table(path);
  }
  if (dimension == 0) throw ConfigError("embedding dimension must be >= 1");
  return Embedder::hashing(dimension, seed, magnitude);
}

std::string experiment_config_to_json(const ExperimentConfig& c) {
  ordered_json doc;
  doc["training"] = ordered_json::parse(training_config_to_json(c.training));
  ordered_json u;
  u["n_samples"] = c.uncertainty.n_samples;
  u["dropout_rate_test"] = c.uncertainty.dropout_rate_test;
  u["seed"] = c.uncertainty.seed;
  u["mode"] = std::string(to_string(c.uncertainty.mode));
  doc["uncertainty"] = u;
  ordered_json e;
  e["kind"] = c.embedder.kind == Embedder::Kind::hashing ? "hashing" : "table";
  e["dimension"] = c.embedder.dimension;
  e["seed"] = c.embedder.seed;
  if (c.embedder.magnitude) e["magnitude"] = *c.embedder.magnitude;
  if (!c.embedder.path.empty()) e["path"] = c.embedder.path;
  doc["embedder"] = e;
  doc["meta"] = ordered_json::parse(meta_config_to_json(c.meta));
  doc["dev_fold"] = c.dev_fold ? ordered_json(*c.dev_fold) : ordered_json(nullptr);
  doc["threads"] = c.threads;
  return doc.dump(2) + "\n";
}

ExperimentConfig experiment_config_from_json(std::string_view text) {
  ExperimentConfig c;
  try {
    const auto doc = json::parse(text);
    if (!doc.is_object()) throw ConfigError("experiment config must be a JSON object");
    for (const auto& [key, v] : doc.items()) {
      if (key == "training") {
        c.training = training_config_from_json(v.dump());
      } else if (key == "uncertainty") {
        for (const auto& [k, x] : v.items()) {
          if (k == "n_samples") c.uncertainty.n_samples = x.get<std::size_t>();
          else if (k == "dropout_rate_test") c.uncertainty.dropout_rate_test = x.get<double>();
          else if (k == "seed") c.uncertainty.seed = x.get<std::uint64_t>();
          else if (k == "mode") c.uncertainty.mode = parse_sampling_mode(x.get<std::string>());
          else throw ConfigError("unknown uncertainty config key '" + k + "'");
        }
        c.uncertainty.validate();
      } else if (key == "embedder") {
        for (const auto& [k, x] : v.items()) {
          if (k == "kind") {
            const auto kind = x.get<std::string>();
            if (kind == "hashing") c.embedder.kind = Embedder::Kind::hashing;
            else if (kind == "table") c.embedder.kind = Embedder::Kind::table;
            else throw ConfigError("unknown embedder kind '" + kind + "'");
          } else if (k == "dimension") c.embedder.dimension = x.get<std::size_t>();
          else if (k == "seed") c.embedder.seed = x.get<std::uint64_t>();
          else if (k == "path") c.embedder.path = x.get<std::string>();
          else if (k == "magnitude") {
            if (x.is_null()) c.embedder.magnitude.reset();
            else c.embedder.magnitude = x.get<double>();
          }
          else throw ConfigError("unknown embedder config key '" + k + "'");
        }
      } else if (key == "meta") {
        c.meta = meta_config_from_json(v.dump());
      } else if (key == "dev_fold") {
        if (v.is_null()) c.dev_fold.reset();
        else c.dev_fold = v.get<int>();
      } else if (key == "threads") {
        c.threads = v.get<std::size_t>();
      } else {
        throw ConfigError("unknown experiment config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("experiment config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Cross-validation

std::uint64_t fold_seed(std::uint64_t seed, int test_fold) {
  return nn::Rng::mix(seed, static_cast<std::uint64_t>(test_fold));
}

CrossValidation cross_validate(const std::vector<ConversationTree>& trees, const FoldSpec& folds,
                               const ExperimentConfig& config, bool with_dev) {
  config.training.validate();
  config.uncertainty.validate();
  std::set<std::string> ids;
  for (const auto& t : trees) {
    ids.insert(t.tree_id);
    if (!folds.assignments.count(t.tree_id)) throw ConfigError("tree '" + t.tree_id + "' has no fold assignment");
  }
  for (const auto& [id, f] : folds.assignments) {
    if (!ids.count(id)) throw ConfigError("fold assignment for unknown tree '" + id + "'");
    if (f < 0) throw ConfigError("negative fold index for tree '" + id + "'");
  }

  FoldSpec spec = folds;
  if (!spec.dev_fold) spec.dev_fold = config.dev_fold;
  if (!with_dev) spec.dev_fold.reset();
  if (with_dev && !spec.dev_fold) throw ConfigError("the dev-fold protocol needs a dev fold");

  std::vector<int> test_folds;
  std::map<int, std::size_t> fold_sizes;
  for (const auto& [id, f] : spec.assignments) fold_sizes[f]++;
  for (const auto& [f, n] : fold_sizes) {
    if (!spec.dev_fold || f != *spec.dev_fold) test_folds.push_back(f);
  }
  if (spec.dev_fold && !fold_sizes.count(*spec.dev_fold)) {
    throw ConfigError("dev fold " + std::to_string(*spec.dev_fold) + " holds no trees");
  }
  if (test_folds.size() < 2) throw ConfigError("cross-validation needs at least two test folds");

  const auto num_classes = static_cast<std::size_t>(infer_class_count(trees));
  const Embedder embedder = config.embedder.make();
  const auto max_len = config.training.max_branch_length;

  std::vector<FoldRun> runs(test_folds.size());
  std::vector<std::vector<PredictionRecord>> test_records(test_folds.size()), dev_records(test_folds.size());
  parallel_for(
      test_folds.size(),
      [&](std::size_t i) {
        const int fold = test_folds[i];
        TrainingConfig tc = config.training;
        tc.seed = fold_seed(config.training.seed, fold);
        runs[i] = {fold, train(trees, spec, fold, tc, embedder, num_classes)};
        for (const auto& t : trees) {
          const int f = spec.fold_of(t.tree_id);
          const bool is_test = f == fold, is_dev = spec.dev_fold && f == *spec.dev_fold;
          if (!is_test && !is_dev) continue;
          auto b = bundle(runs[i].model.params, encode_tree(t, embedder, max_len), config.uncertainty);
          (is_test ? test_records[i] : dev_records[i]).push_back(make_record(t.tree_id, t.label, std::move(b), fold));
        }
      },
      config.threads);

  CrossValidation cv;
  auto by_id = [](const PredictionRecord& a, const PredictionRecord& b) { return a.tree_id < b.tree_id; };
  for (std::size_t i = 0; i < test_folds.size(); ++i) {
    std::sort(test_records[i].begin(), test_records[i].end(), by_id);
    std::sort(dev_records[i].begin(), dev_records[i].end(), by_id);
    cv.records.insert(cv.records.end(), test_records[i].begin(), test_records[i].end());
    cv.dev_records.insert(cv.dev_records.end(), dev_records[i].begin(), dev_records[i].end());
  }
  cv.runs = std::move(runs);
  return cv;
}

SupervisedSplit supervised_reject_per_fold(const std::vector<PredictionRecord>& dev_records,
                                           const std::vector<PredictionRecord>& test_records,
                                           const MetaConfig& config) {
  std::map<int, std::vector<PredictionRecord>> dev_by_fold, test_by_fold;
  for (const auto& r : dev_records) dev_by_fold[r.fold].push_back(r);
  for (const auto& r : test_records) test_by_fold[r.fold].push_back(r);
  SupervisedSplit pooled;
  for (const auto& [fold, test] : test_by_fold) {
    const auto it = dev_by_fold.find(fold);
    if (it == dev_by_fold.end()) throw ConfigError("no dev records for fold " + std::to_string(fold));
    const auto meta = train_meta(it->second, config);
    auto split = supervised_reject(meta, test);
    pooled.retained.insert(pooled.retained.end(), split.retained.begin(), split.retained.end());
    pooled.removed.insert(pooled.removed.end(), split.removed.begin(), split.removed.end());
  }
  pooled.n_removed = pooled.removed.size();
  return pooled;
}

// ---------------------------------------------------------------------------
// Timelines

TimelineSeries timeline_report(const ModelParams& params, const ConversationTree& tree, const Embedder& embedder,
                               const UncertaintyConfig& config, std::optional<std::size_t> max_branch_length) {
  const auto timeline = timeline_prefixes(tree);
  TimelineSeries series;
  series.tree_id = tree.tree_id;
  series.gold = tree.label;
  series.repairs = timeline.repairs;
  std::set<std::string> seen;
  for (const auto& prefix : timeline.prefixes) {
    TimelineStep step;
    step.n_tweets = prefix.size();
    for (const auto& t : prefix.tweets) {
      if (seen.insert(t.id).second) {
        step.added_tweet = t.id;
        step.stance = t.stance;
      }
    }
    step.bundle = bundle(params, encode_tree(prefix, embedder, max_branch_length), config);
    step.predicted = label_from_index(static_cast<int>(step.bundle.predicted_class));
    series.steps.push_back(std::move(step));
  }
  return series;
}

Label min_uncertainty_prediction(const TimelineSeries& series, Measure measure) {
  if (series.steps.empty()) throw InvalidInput("timeline series is empty");
  std::size_t best = 0;
  double lowest = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < series.steps.size(); ++i) {
    const double u = uncertainty_value(series.steps[i].bundle, measure);
    if (u <= lowest) {
      lowest = u;
      best = i;
    }
  }
  return series.steps[best].predicted;
}

std::string timeline_to_csv(const TimelineSeries& series) {
  std::ostringstream out;
  out << "tree_id,step,n_tweets,added_tweet,stance,pred,vr,entropy,variance,aleatoric,lcs,margin,ratio,softmax_entropy\n";
  for (std::size_t i = 0; i < series.steps.size(); ++i) {
    const auto& s = series.steps[i];
    const auto& b = s.bundle;
    out << series.tree_id << ',' << i + 1 << ',' << s.n_tweets << ',' << s.added_tweet << ','
        << (s.stance ? std::string(to_string(*s.stance)) : "") << ',' << to_string(s.predicted);
    for (double v : {b.variation_ratio, b.entropy, b.variance, b.aleatoric, b.softmax_lcs, b.softmax_margin,
                     b.softmax_ratio, b.softmax_entropy}) {
      out << ',' << format_double(v);
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace veritas
