#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "test_support.hpp"
#include "veritas/errors.hpp"
#include "veritas/io.hpp"
#include "veritas/rejection.hpp"

using namespace veritas;
using nn::Rng;

namespace {

PredictionRecord record(std::string id, int gold, int pred, double u, std::size_t c = 3, int fold = 0) {
  UncertaintyBundle b;
  b.mean_probs.assign(c, 0.0);
  b.mean_probs[static_cast<std::size_t>(pred)] = 1.0;
  b.predicted_class = static_cast<std::size_t>(pred);
  b.variation_ratio = b.entropy = b.variance = b.aleatoric = b.softmax_ratio = b.softmax_entropy = u;
  b.softmax_lcs = b.softmax_margin = 1.0 - u;
  return make_record(std::move(id), label_from_index(gold), b, fold);
}

std::string pad(int i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%04d", i);
  return buf;
}

std::vector<PredictionRecord> random_records(Rng& rng, std::size_t n, std::size_t c = 3, int folds = 1) {
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    UncertaintyBundle b;
    b.mean_probs = testing::random_simplex(c, rng);
    b.predicted_class = nn::argmax(b.mean_probs);
    b.variation_ratio = rng.uniform() * 0.8;
    b.entropy = rng.uniform();
    b.variance = rng.uniform() * 0.25;
    b.aleatoric = rng.uniform() * 3.0;
    const auto conf = softmax_confidences(b.mean_probs);
    b.softmax_lcs = conf.lcs;
    b.softmax_margin = conf.margin;
    b.softmax_ratio = conf.ratio;
    b.softmax_entropy = conf.entropy;
    const int gold = rng.uniform() < 0.6 ? static_cast<int>(b.predicted_class) : static_cast<int>(rng.below(c));
    out.push_back(make_record(pad(static_cast<int>(i)), label_from_index(gold), b,
                              static_cast<int>(rng.below(static_cast<std::uint64_t>(folds)))));
  }
  return out;
}

std::set<std::string> ids(const std::vector<PredictionRecord>& rs) {
  std::set<std::string> s;
  for (const auto& r : rs) s.insert(r.tree_id);
  return s;
}

/// Sort-and-slice oracle written against the measure values directly.
std::set<std::string> oracle_retained(std::vector<PredictionRecord> rs, Measure m, double f) {
  std::stable_sort(rs.begin(), rs.end(), [](const auto& a, const auto& b) { return a.tree_id < b.tree_id; });
  std::stable_sort(rs.begin(), rs.end(), [&](const auto& a, const auto& b) {
    const double ua = is_confidence(m) ? -measure_value(a.bundle, m) : measure_value(a.bundle, m);
    const double ub = is_confidence(m) ? -measure_value(b.bundle, m) : measure_value(b.bundle, m);
    return ua > ub;
  });
  const auto keep = static_cast<std::size_t>(std::llround(std::floor(f * rs.size() + 1e-9)));
  std::set<std::string> out;
  for (std::size_t i = rs.size() - keep; i < rs.size(); ++i) out.insert(rs[i].tree_id);
  return out;
}

double accuracy_of(const std::vector<PredictionRecord>& rs) {
  double hits = 0;
  for (const auto& r : rs) hits += r.correct;
  return hits / rs.size();
}

}  // namespace

TEST_CASE("records csv round trip") {
  Rng rng(1);
  auto rs = random_records(rng, 20, 3, 4);
  const auto csv = records_to_csv(rs);
  CHECK(csv.rfind("tree_id,label,pred,vr,entropy,variance,aleatoric,lcs,margin,ratio,softmax_entropy,p_0,p_1,p_2,fold\n", 0) == 0);
  CHECK(records_from_csv(csv) == rs);

  auto four = random_records(rng, 5, 4);
  CHECK(records_from_csv(records_to_csv(four)) == four);
}

TEST_CASE("records csv errors and optional fold") {
  const std::string header = "tree_id,label,pred,vr,entropy,variance,aleatoric,lcs,margin,ratio,softmax_entropy,p_0,p_1\n";
  auto rs = records_from_csv(header + "a,true,false,0,0,0,1,0.6,0.2,0.5,0.6,0.4,0.6\n");
  REQUIRE(rs.size() == 1);
  CHECK(rs[0].fold == 0);
  CHECK(!rs[0].correct);
  CHECK(rs[0].bundle.predicted_class == 1);
  CHECK_THROWS_AS(records_from_csv(header + "a,true,false,x,0,0,1,0.6,0.2,0.5,0.6,0.4,0.6\n"), ParseError);
  CHECK_THROWS_AS(records_from_csv(header + "a,maybe,false,0,0,0,1,0.6,0.2,0.5,0.6,0.4,0.6\n"), ParseError);
  CHECK_THROWS_AS(records_from_csv(header + "a,true\n"), ParseError);
  CHECK_THROWS_AS(records_from_csv("tree_id,label\n"), ParseError);
}

TEST_CASE("evaluate examples") {
  auto perfect = evaluate({0, 1, 2, 1}, {0, 1, 2, 1}, 3);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f == 1.0);

  auto m = evaluate({0, 0, 1}, {0, 1, 1}, 2);
  CHECK(m.accuracy == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class_f1[0] == doctest::Approx(2.0 / 3.0));
  CHECK(m.per_class_f1[1] == doctest::Approx(2.0 / 3.0));
  CHECK(m.macro_f == doctest::Approx(2.0 / 3.0));

  // All predictions class 0 on balanced gold: precision 1/3, recall 1 for class 0.
  auto flat = evaluate({0, 1, 2, 0, 1, 2}, {0, 0, 0, 0, 0, 0}, 3);
  const double p = 1.0 / 3.0, r = 1.0;
  CHECK(flat.accuracy == doctest::Approx(1.0 / 3.0));
  CHECK(flat.per_class_f1[0] == doctest::Approx(2 * p * r / (p + r)));
  CHECK(flat.macro_f == doctest::Approx(2 * p * r / (p + r) / 3.0));
  CHECK(flat.f1_undefined == std::vector<bool>{false, true, true});

  // A class absent from both gold and predictions still counts in the average.
  CHECK(evaluate({0, 1}, {0, 1}, 3).macro_f == doctest::Approx(2.0 / 3.0));

  CHECK_THROWS_AS(evaluate({0, 3}, {0, 1}, 3), DataError);
  CHECK_THROWS_AS(evaluate({0, 1}, {0, -1}, 3), DataError);
  CHECK_THROWS_AS(evaluate({}, {}, 3), InvalidInput);
}

TEST_CASE("evaluate matches a confusion-matrix oracle and is permutation invariant") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng.below(3), n = 1 + rng.below(40);
    std::vector<int> g(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      g[i] = static_cast<int>(rng.below(c));
      p[i] = static_cast<int>(rng.below(c));
    }
    std::vector<std::vector<double>> cm(c, std::vector<double>(c, 0.0));
    for (std::size_t i = 0; i < n; ++i) cm[g[i]][p[i]] += 1;
    double trace = 0, macro = 0;
    for (std::size_t k = 0; k < c; ++k) {
      trace += cm[k][k];
      double row = 0, col = 0;
      for (std::size_t j = 0; j < c; ++j) {
        row += cm[k][j];
        col += cm[j][k];
      }
      const double prec = col > 0 ? cm[k][k] / col : 0.0, rec = row > 0 ? cm[k][k] / row : 0.0;
      macro += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    }
    auto m = evaluate(g, p, c);
    CHECK(m.accuracy == doctest::Approx(trace / n).epsilon(1e-12));
    CHECK(m.macro_f == doctest::Approx(macro / c).epsilon(1e-12));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    nn::shuffle(perm, rng);
    std::vector<int> g2, p2;
    for (auto i : perm) {
      g2.push_back(g[i]);
      p2.push_back(p[i]);
    }
    auto m2 = evaluate(g2, p2, c);
    CHECK(m2.accuracy == m.accuracy);
    CHECK(m2.macro_f == doctest::Approx(m.macro_f).epsilon(1e-14));
  }
}

TEST_CASE("unsupervised rejection examples") {
  std::vector<PredictionRecord> rs{record("a", 0, 0, 0.9), record("b", 0, 0, 0.1), record("c", 0, 1, 0.5)};
  auto all = unsupervised_reject(rs, Measure::variation_ratio, 1.0);
  CHECK(all.retained.size() == 3);
  CHECK(all.removed.empty());
  auto cut = unsupervised_reject(rs, Measure::variation_ratio, 2.0 / 3.0);
  REQUIRE(cut.removed.size() == 1);
  CHECK(cut.removed[0].tree_id == "a");
  // lcs is a confidence: the lowest lcs goes first
  auto cut_lcs = unsupervised_reject(rs, Measure::lcs, 2.0 / 3.0);
  CHECK(cut_lcs.removed[0].tree_id == "a");

  std::vector<PredictionRecord> tied{record("z", 0, 0, 0.5), record("m", 0, 0, 0.5), record("a", 0, 0, 0.5)};
  auto t = unsupervised_reject(tied, Measure::entropy, 0.4);
  REQUIRE(t.removed.size() == 2);
  CHECK(t.removed[0].tree_id == "a");
  CHECK(t.removed[1].tree_id == "m");

  CHECK_THROWS_AS(unsupervised_reject(rs, Measure::entropy, 0.0), ConfigError);
  CHECK_THROWS_AS(unsupervised_reject(rs, Measure::entropy, 1.5), ConfigError);
  CHECK_THROWS_AS(parse_measure("confidence"), ConfigError);
}

TEST_CASE("unsupervised rejection matches the sort-and-slice oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    auto rs = random_records(rng, 100);
    for (auto m : kAllMeasures) {
      const double f = 0.05 + 0.95 * rng.uniform();
      auto split = unsupervised_reject(rs, m, f);
      CHECK(ids(split.retained) == oracle_retained(rs, m, f));
      CHECK(split.retained.size() == 100 - static_cast<std::size_t>(std::ceil((1.0 - f) * 100 - 1e-9)));
      auto joined = ids(split.retained);
      for (const auto& r : split.removed) CHECK(joined.insert(r.tree_id).second);
      CHECK(joined.size() == rs.size());
    }
  }
}

TEST_CASE("perfect ranking reaches accuracy 1") {
  Rng rng(4);
  std::vector<PredictionRecord> rs;
  std::size_t n_correct = 0;
  for (int i = 0; i < 50; ++i) {
    const bool ok = rng.uniform() < 0.7;
    n_correct += ok;
    rs.push_back(record(pad(i), 0, ok ? 0 : 1, ok ? 0.2 * rng.uniform() : 0.5 + 0.5 * rng.uniform()));
  }
  auto split = unsupervised_reject(rs, Measure::aleatoric, double(n_correct) / 50.0);
  CHECK(accuracy_of(split.retained) == 1.0);

  std::vector<double> grid;
  for (int k = 50; k >= 1; --k) grid.push_back(k / 50.0);
  auto curve = rejection_curve(rs, Measure::aleatoric, grid);
  for (std::size_t i = 1; i < curve.points.size(); ++i) CHECK(curve.points[i].accuracy >= curve.points[i - 1].accuracy);
  CHECK(curve.points[50 - n_correct].accuracy == 1.0);
}

TEST_CASE("rejection curves") {
  std::vector<PredictionRecord> good;
  for (int i = 0; i < 10; ++i) good.push_back(record(pad(i), i % 3, i % 3, i / 10.0));
  auto curve = rejection_curve(good, Measure::entropy, default_fractions());
  CHECK(curve.points.size() == 11);
  for (const auto& p : curve.points) CHECK(p.accuracy == 1.0);

  auto tiny = rejection_curve(good, Measure::entropy, {1.0, 0.05});
  CHECK(!tiny.points[1].defined);
  CHECK(tiny.points[1].n_remaining == 0);
  CHECK(curves_to_csv({tiny}) ==
        "measure,retain_fraction,n_remaining,accuracy,macro_f\nentropy,1,10,1,1\nentropy,0.05,0,NA,NA\n");

  CHECK_THROWS_AS(rejection_curve(good, Measure::entropy, {0.5, 0.8}), ConfigError);
  CHECK_THROWS_AS(rejection_curve(good, Measure::entropy, {}), ConfigError);

  // 200 records whose uncertainty is P(error) plus noise, against a direct recomputation.
  Rng rng(5);
  std::vector<PredictionRecord> rs;
  for (int i = 0; i < 200; ++i) {
    const double p_err = rng.uniform() * 0.6;
    const bool ok = rng.uniform() >= p_err;
    rs.push_back(record(pad(i), 1, ok ? 1 : 2, p_err + 0.05 * rng.normal()));
  }
  auto fractions = default_fractions();
  auto got = rejection_curve(rs, Measure::variance, fractions);
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const auto kept = oracle_retained(rs, Measure::variance, fractions[i]);
    std::vector<int> g, p;
    for (const auto& r : rs) {
      if (kept.count(r.tree_id)) {
        g.push_back(class_index(r.gold));
        p.push_back(class_index(r.predicted));
      }
    }
    const auto m = evaluate(g, p, 3);
    CHECK(got.points[i].n_remaining == kept.size());
    CHECK(got.points[i].accuracy == m.accuracy);
    CHECK(got.points[i].macro_f == m.macro_f);
  }
  CHECK(got.points.back().accuracy > got.points.front().accuracy);
}

TEST_CASE("random rejection") {
  Rng rng(6);
  auto rs = random_records(rng, 40);
  CHECK(random_reject(rs, 1.0, 3).retained == rs);
  CHECK(ids(random_reject(rs, 0.5, 3).retained) == ids(random_reject(rs, 0.5, 3).retained));
  CHECK(ids(random_reject(rs, 0.5, 3).retained) != ids(random_reject(rs, 0.5, 4).retained));
  CHECK(random_reject(rs, 0.5, 3).retained.size() == 20);
  CHECK(random_reject(rs, 0.26, 3).retained.size() == 10);

  std::vector<PredictionRecord> balanced;
  for (int i = 0; i < 200; ++i) balanced.push_back(record(pad(i), i % 3, (i % 5 == 0) ? (i + 1) % 3 : i % 3, 0.0));
  const double full = accuracy_of(balanced);
  double mean = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) mean += accuracy_of(random_reject(balanced, 0.5, seed).retained);
  CHECK(std::abs(mean / 1000.0 - full) <= 0.02);
}

TEST_CASE("per-fold rejection") {
  Rng rng(7);
  auto one = random_records(rng, 60);
  CHECK(ids(per_fold_reject(one, Measure::entropy, 0.7).retained) ==
        ids(unsupervised_reject(one, Measure::entropy, 0.7).retained));

  std::vector<PredictionRecord> split_folds;
  for (int i = 0; i < 10; ++i) split_folds.push_back(record(pad(i), 0, 0, 0.1 + 0.01 * i, 3, 0));
  for (int i = 10; i < 20; ++i) split_folds.push_back(record(pad(i), 0, 0, 0.8 + 0.01 * i, 3, 1));
  auto pooled = unsupervised_reject(split_folds, Measure::entropy, 0.8);
  auto per_fold = per_fold_reject(split_folds, Measure::entropy, 0.8);
  auto fold_counts = [](const std::vector<PredictionRecord>& rs) {
    std::map<int, int> c;
    for (const auto& r : rs) c[r.fold]++;
    return c;
  };
  CHECK(fold_counts(pooled.removed) == std::map<int, int>{{1, 4}});
  CHECK(fold_counts(per_fold.removed) == std::map<int, int>{{0, 2}, {1, 2}});

  for (int trial = 0; trial < 20; ++trial) {
    auto rs = random_records(rng, 80, 3, 5);
    const double f = 0.3 + 0.7 * rng.uniform();
    std::set<std::string> expected;
    for (int fold = 0; fold < 5; ++fold) {
      std::vector<PredictionRecord> members;
      for (const auto& r : rs) {
        if (r.fold == fold) members.push_back(r);
      }
      auto kept = oracle_retained(members, Measure::aleatoric, f);
      expected.insert(kept.begin(), kept.end());
    }
    CHECK(ids(per_fold_reject(rs, Measure::aleatoric, f).retained) == expected);
  }
  auto curve = per_fold_curve(random_records(rng, 50, 3, 3), Measure::lcs, default_fractions());
  CHECK(curve.points.size() == default_fractions().size());
}

TEST_CASE("meta features layout") {
  auto r = record("x", 0, 2, 0.3);
  r.bundle.aleatoric = 1.5;
  r.bundle.variance = 0.1;
  r.bundle.entropy = 0.7;
  r.bundle.variation_ratio = 0.2;
  CHECK(meta_features(r) == Vector{1.5, 0.1, 0.7, 0.2, 0, 0, 1, 0, 0, 1});
}

TEST_CASE("single-class dev set gives a constant classifier") {
  std::vector<std::string> warnings;
  set_warning_sink([&](std::string_view w) { warnings.emplace_back(w); });
  std::vector<PredictionRecord> dev;
  for (int i = 0; i < 10; ++i) dev.push_back(record(pad(i), 1, 1, i / 10.0));
  for (auto backend : {MetaBackend::linear_hinge, MetaBackend::random_forest}) {
    MetaConfig c;
    c.backend = backend;
    auto meta = train_meta(dev, c);
    CHECK(meta.constant == std::optional<bool>(true));
    Rng rng(8);
    auto split = supervised_reject(meta, random_records(rng, 30));
    CHECK(split.n_removed == 0);
  }
  set_warning_sink(nullptr);
  CHECK(warnings.size() == 2);
}

TEST_CASE("linear hinge separates separable records") {
  Rng rng(9);
  std::vector<PredictionRecord> dev;
  for (int i = 0; i < 200; ++i) {
    const bool ok = i % 3 != 0;
    auto r = record(pad(i), 0, ok ? 0 : 1, 0.0);
    r.bundle.aleatoric = ok ? rng.uniform() : 1.5 + rng.uniform();
    r.bundle.entropy = rng.uniform();
    dev.push_back(r);
  }
  // the predicted class also leaks correctness here, so hide it
  for (auto& r : dev) {
    r.bundle.mean_probs = {0.5, 0.5, 0.0};
    r.bundle.predicted_class = 0;
  }
  auto meta = train_meta(dev, MetaConfig{});
  double hits = 0;
  for (const auto& r : dev) hits += meta.predicts_correct(r) == r.correct;
  CHECK(hits / dev.size() == 1.0);
}

TEST_CASE("balanced hinge flags more of the rare incorrect class") {
  Rng rng(19);
  std::vector<PredictionRecord> dev;
  for (int i = 0; i < 400; ++i) {
    const bool ok = i % 10 != 0;
    auto r = record(pad(i), 0, ok ? 0 : 1, 0.0);
    r.bundle.aleatoric = rng.normal() + (ok ? 0.0 : 1.5);
    r.bundle.mean_probs = {0.5, 0.5, 0.0};
    r.bundle.predicted_class = 0;
    dev.push_back(r);
  }
  MetaConfig balanced;
  balanced.balanced = true;
  const auto plain_meta = train_meta(dev, MetaConfig{});
  const auto balanced_meta = train_meta(dev, balanced);
  std::size_t plain_caught = 0, balanced_caught = 0;
  for (const auto& r : dev) {
    if (r.correct) continue;
    plain_caught += !plain_meta.predicts_correct(r);
    balanced_caught += !balanced_meta.predicts_correct(r);
  }
  CHECK(balanced_caught > plain_caught);
  CHECK(balanced_caught >= 25);
  CHECK(meta_config_from_json(meta_config_to_json(balanced)).balanced);
}

TEST_CASE("random forest learns a two-feature rule") {
  Rng rng(10);
  std::vector<PredictionRecord> dev;
  for (int i = 0; i < 500; ++i) {
    auto r = random_records(rng, 1)[0];
    r.tree_id = pad(i);
    r.bundle.aleatoric = rng.uniform();
    r.bundle.variance = rng.uniform();
    r.correct = r.bundle.aleatoric + r.bundle.variance < 1.0;
    dev.push_back(r);
  }
  MetaConfig c;
  c.backend = MetaBackend::random_forest;
  c.seed = 3;
  auto meta = train_meta(dev, c);
  double hits = 0;
  for (const auto& r : dev) hits += meta.predicts_correct(r) == r.correct;
  CHECK(hits / dev.size() >= 0.9);
  CHECK(train_meta(dev, c) == meta);
  CHECK(meta_from_json(meta_to_json(meta)) == meta);
}

TEST_CASE("oracle meta-classifier retains only correct records") {
  MetaClassifier oracle;
  oracle.backend = MetaBackend::random_forest;
  oracle.num_classes = 3;
  oracle.forest = {{{0, 0.5, 1, 2, 0.5}, {-1, 0, -1, -1, 1.0}, {-1, 0, -1, -1, 0.0}}};
  Rng rng(11);
  auto rs = random_records(rng, 100);
  for (auto& r : rs) r.bundle.aleatoric = r.correct ? 0.0 : 1.0;
  auto split = supervised_reject(oracle, rs);
  CHECK(accuracy_of(split.retained) == 1.0);
  CHECK(split.n_removed == split.removed.size());
  CHECK(split.retained.size() + split.removed.size() == rs.size());

  auto wide = random_records(rng, 3, 4);
  CHECK_THROWS_AS(supervised_reject(oracle, wide), ConfigError);
}

TEST_CASE("threshold sweep raises retained precision") {
  Rng rng(12);
  std::vector<PredictionRecord> dev, test;
  for (int i = 0; i < 400; ++i) {
    auto r = record(pad(i), 0, 0, 0.0);
    r.bundle.mean_probs = {0.5, 0.5, 0.0};
    r.bundle.aleatoric = rng.uniform();
    r.correct = r.bundle.aleatoric < 0.6;
    (i < 200 ? dev : test).push_back(r);
  }
  auto meta = train_meta(dev, MetaConfig{});
  double last = 0.0;
  for (int step = 0; step <= 20; ++step) {
    meta.threshold = step / 20.0;
    auto split = supervised_reject(meta, test);
    if (split.retained.empty()) continue;
    const double precision = accuracy_of(split.retained);
    CHECK(precision >= last - 1e-12);
    last = precision;
  }
}

TEST_CASE("retained accuracy equals the meta-classifier's precision for 'correct'") {
  Rng rng(13);
  auto dev = random_records(rng, 150);
  auto test = random_records(rng, 150);
  for (auto backend : {MetaBackend::linear_hinge, MetaBackend::random_forest}) {
    MetaConfig c;
    c.backend = backend;
    auto meta = train_meta(dev, c);
    auto split = supervised_reject(meta, test);
    double tp = 0, fp = 0;
    for (const auto& r : test) {
      if (meta.predicts_correct(r)) (r.correct ? tp : fp) += 1;
    }
    if (!split.retained.empty()) CHECK(accuracy_of(split.retained) == doctest::Approx(tp / (tp + fp)).epsilon(1e-15));
    CHECK(meta_from_json(meta_to_json(meta)) == meta);
  }
}

TEST_CASE("meta config json") {
  auto c = meta_config_from_json(R"({"backend": "rf", "n_trees": 7, "threshold": 0.3})");
  CHECK(c.backend == MetaBackend::random_forest);
  CHECK(c.n_trees == 7);
  CHECK(meta_config_from_json(meta_config_to_json(c)).n_trees == 7);
  CHECK_THROWS_AS(meta_config_from_json(R"({"trees": 7})"), ConfigError);
  CHECK_THROWS_AS(meta_config_from_json(R"({"threshold": 2})"), ConfigError);
  CHECK_THROWS_AS(meta_from_json("{}"), ParseError);
}
