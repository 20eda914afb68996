#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "test_support.hpp"
#include "veritas/errors.hpp"
#include "veritas/verifier.hpp"

using namespace veritas;
using nn::DropoutSpec;
using nn::Rng;
using testing::max_gradient_error;
using testing::random_vector;

namespace {

ModelParams random_params(std::size_t in, std::size_t hidden, std::size_t relu, std::size_t classes, std::uint64_t seed,
                          double scale = 0.6) {
  auto p = init_params({in, hidden, relu, classes}, seed);
  Rng rng(seed + 1000);
  p.for_each([&](const std::string&, Matrix& m) {
    for (auto& v : m.values()) v = scale * (2.0 * rng.uniform() - 1.0);
  });
  return p;
}

std::vector<Vector> random_sequence(std::size_t steps, std::size_t dim, Rng& rng) {
  std::vector<Vector> xs;
  for (std::size_t s = 0; s < steps; ++s) xs.push_back(random_vector(dim, rng));
  return xs;
}

}  // namespace

TEST_CASE("forward_branch is deterministic with dropout off") {
  auto p = random_params(4, 5, 2, 3, 1);
  Rng rng(2);
  auto xs = random_sequence(3, 4, rng);
  Rng a(0), b(99);
  CHECK(forward_branch(p, xs, DropoutSpec::off(), a) == forward_branch(p, xs, DropoutSpec::off(), b));
}

TEST_CASE("forward_branch with zero heads") {
  auto p = random_params(3, 4, 1, 3, 5);
  p.classifier.weight.fill(0.0);
  p.variance.weight.fill(0.0);
  p.classifier.bias = Matrix(3, 1, std::vector<double>{0.3, -0.2, 1.5});
  p.variance.bias(0, 0) = -0.7;
  Rng rng(3);
  auto out = forward_branch(p, random_sequence(2, 3, rng), DropoutSpec::off(), rng);
  CHECK(out.logits == Vector{0.3, -0.2, 1.5});
  CHECK(out.sigma == nn::softplus(-0.7));
  CHECK(out.sigma > 0.0);
}

TEST_CASE("forward_branch matches the scalar-loop oracle of the full stack") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto p = random_params(4, 5, seed % 3, 3, seed);
    Rng rng(seed);
    auto xs = random_sequence(3, 4, rng);
    auto out = forward_branch(p, xs, DropoutSpec::off(), rng);
    auto expected = oracle::branch(p, xs);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(out.logits[k] == doctest::Approx(expected.logits[k]).epsilon(1e-12));
      CHECK(out.probs[k] == doctest::Approx(expected.probs[k]).epsilon(1e-12));
    }
    CHECK(out.sigma == doctest::Approx(expected.sigma).epsilon(1e-12));
  }
}

TEST_CASE("forward_branch shape errors") {
  auto p = random_params(4, 5, 1, 3, 1);
  Rng rng(0);
  CHECK_THROWS_AS(forward_branch(p, random_sequence(2, 3, rng), DropoutSpec::off(), rng), ShapeError);
}

TEST_CASE("loss_l1 examples") {
  CHECK(loss_l1(Vector{0, 1, 0}, 1) <= 1e-11);
  CHECK(loss_l1(Vector{1.0 / 3, 1.0 / 3, 1.0 / 3}, 2) == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  CHECK(loss_l1(Vector{0.7, 0.2, 0.1}, 1) == doctest::Approx(-std::log(0.2)).epsilon(1e-14));
  CHECK(loss_l1(Vector{0.7, 0.2, 0.1}, 1) == doctest::Approx(1.60944).epsilon(1e-5));
  CHECK(loss_l1(Vector{1, 0}, 1) == doctest::Approx(-std::log(1e-12)));
  CHECK(std::isfinite(loss_l1(Vector{1, 0}, 1)));
}

TEST_CASE("loss_l2 reduces to loss_l1 at zero variance") {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t c = 2 + rng.below(3);
    auto v = random_vector(c, rng, 5.0);
    const std::size_t gold = rng.below(c);
    const std::size_t samples = 1 + rng.below(60);
    for (auto form : {AleatoricLoss::expected_likelihood, AleatoricLoss::mean_cross_entropy}) {
      Rng noise(trial);
      const double l2 = loss_l2(v, 0.0, gold, samples, noise, NoiseMode::per_logit, form);
      CHECK(std::abs(l2 - loss_l1(nn::softmax(v), gold)) <= 1e-12);
    }
  }
}

TEST_CASE("loss_l2 with T = 1 equals direct evaluation with the recorded noise") {
  const Vector v{0.4, -1.2, 2.0};
  const double sigma = 0.8;
  Rng a(123);
  const double got = loss_l2(v, sigma, 0, 1, a);
  Rng b(123);
  Vector d(3);
  for (std::size_t k = 0; k < 3; ++k) d[k] = v[k] + std::sqrt(sigma) * b.normal();
  CHECK(got == doctest::Approx(-std::log(nn::softmax(d)[0])).epsilon(1e-14));
  Rng c(123);
  CHECK(loss_l2(v, sigma, 0, 1, c) == got);
}

TEST_CASE("loss_l2 matches a brute-force Monte-Carlo estimate") {
  // v = [1, 0], sigma = 0.25, gold 0, T = 10,000, against an estimate from an
  // independent generator.
  const Vector v{1.0, 0.0};
  const double sigma = 0.25;
  const std::size_t n = 10000;

  std::mt19937_64 gen(2024);
  std::normal_distribution<double> normal;
  double sum_s = 0.0, sum_s2 = 0.0, sum_ce = 0.0, sum_ce2 = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double d0 = 1.0 + 0.5 * normal(gen);
    const double d1 = 0.0 + 0.5 * normal(gen);
    const double s = 1.0 / (1.0 + std::exp(d1 - d0));
    sum_s += s;
    sum_s2 += s * s;
    sum_ce += -std::log(s);
    sum_ce2 += std::log(s) * std::log(s);
  }
  const double mean_s = sum_s / n;
  const double sd_s = std::sqrt(sum_s2 / n - mean_s * mean_s);
  const double oracle_el = -std::log(mean_s);
  const double se_el = sd_s / std::sqrt(double(n)) / mean_s;  // delta method
  const double mean_ce = sum_ce / n;
  const double se_ce = std::sqrt(sum_ce2 / n - mean_ce * mean_ce) / std::sqrt(double(n));

  Rng rng(77);
  const double el = loss_l2(v, sigma, 0, n, rng, NoiseMode::per_logit, AleatoricLoss::expected_likelihood);
  Rng rng2(78);
  const double ce = loss_l2(v, sigma, 0, n, rng2, NoiseMode::per_logit, AleatoricLoss::mean_cross_entropy);
  // Both sides are estimates, so the difference has sqrt(2) times the standard error.
  CHECK(std::abs(el - oracle_el) <= 3.0 * std::sqrt(2.0) * se_el);
  CHECK(std::abs(ce - mean_ce) <= 3.0 * std::sqrt(2.0) * se_ce);
}

TEST_CASE("loss_l2 rewards variance on confidently wrong instances") {
  const Vector v{5.0, 0.0, 0.0};  // gold class 1 is 5 below the max
  const double l1 = loss_l1(nn::softmax(v), 1);
  bool found = false;
  for (double sigma : {1.0, 4.0, 9.0, 25.0, 49.0, 100.0}) {
    Rng rng(5);
    if (loss_l2(v, sigma, 1, 2000, rng) < l1) found = true;
  }
  CHECK(found);
}

TEST_CASE("shared noise cancels inside the softmax") {
  const Vector v{5.0, 0.0, 0.0};
  Rng rng(1);
  const double shared = loss_l2(v, 50.0, 1, 100, rng, NoiseMode::shared);
  CHECK(shared == doctest::Approx(loss_l1(nn::softmax(v), 1)).epsilon(1e-9));
}

TEST_CASE("total loss") {
  CHECK(total_loss(2.0, 7.0, 1.0, 0.0) == 2.0);
  CHECK(total_loss(2.0, 7.0, 0.0, 1.0) == 7.0);
  CHECK(total_loss(1.0, 0.5, 1.0, 0.2) == doctest::Approx(1.1).epsilon(1e-15));
}

TEST_CASE("loss_l2 gradient matches finite differences") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t c = 2 + rng.below(3);
    auto v = random_vector(c, rng, 3.0);
    double sigma = 0.05 + 3.0 * rng.uniform();
    const std::size_t gold = rng.below(c);
    const Matrix noise = draw_noise(1 + rng.below(20), c, NoiseMode::per_logit, rng);
    for (auto form : {AleatoricLoss::expected_likelihood, AleatoricLoss::mean_cross_entropy}) {
      auto r = loss_l2(v, sigma, gold, noise, form);
      auto loss = [&] { return loss_l2(v, sigma, gold, noise, form).loss; };
      CHECK(max_gradient_error(v, r.grad_logits, loss) < 1e-4);
      CHECK(testing::relative_error(r.grad_sigma, testing::central_difference(sigma, loss, 1e-6)) < 1e-4);
    }
  }
}

TEST_CASE("backward_branch state and zero-gradient cases") {
  auto p = random_params(3, 4, 2, 3, 8);
  BranchRecord empty;
  CHECK_THROWS_AS(backward_branch(p, empty, Vector{1, 0, 0}, 0.0), StateError);

  Rng rng(9);
  BranchRecord record;
  forward_branch(p, random_sequence(3, 3, rng), DropoutSpec::off(), rng, record);
  auto zero = backward_branch(p, record, Vector{0, 0, 0}, 0.0);
  zero.for_each([](const std::string& name, const Matrix& m) {
    for (double v : m.values()) CHECK_MESSAGE(v == 0.0, name);
  });

  // Only sigma receives gradient: the classifier head is unused.
  auto sigma_only = backward_branch(p, record, Vector{0, 0, 0}, 1.0);
  for (double v : sigma_only.classifier.weight.values()) CHECK(v == 0.0);
  CHECK(sigma_only.variance.bias(0, 0) != 0.0);
}

TEST_CASE("full loss gradient matches finite differences at fixed noise and masks") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto p = random_params(3, 4, 2, 3, seed + 40);
    Rng data(seed);
    auto xs = random_sequence(1 + data.below(3), 3, data);
    const std::size_t gold = data.below(3);
    const Matrix noise = draw_noise(5, 3, NoiseMode::per_logit, data);
    const double rate = seed % 2 ? 0.3 : 0.0;
    const double w1 = 1.0, w2 = 0.5;

    auto loss = [&] {
      Rng masks(seed + 7);
      auto out = forward_branch(p, xs, DropoutSpec::on(rate), masks);
      return total_loss(loss_l1(out.probs, gold), loss_l2(out.logits, out.sigma, gold, noise).loss, w1, w2);
    };
    Rng masks(seed + 7);
    BranchRecord record;
    auto out = forward_branch(p, xs, DropoutSpec::on(rate), masks, record);
    auto l2 = loss_l2(out.logits, out.sigma, gold, noise);
    Vector grad_logits(3);
    for (std::size_t k = 0; k < 3; ++k) {
      grad_logits[k] = w1 * (out.probs[k] - (k == gold ? 1.0 : 0.0)) + w2 * l2.grad_logits[k];
    }
    auto g = backward_branch(p, record, grad_logits, w2 * l2.grad_sigma);

    std::vector<Matrix*> params;
    p.for_each([&](const std::string&, Matrix& m) { params.push_back(&m); });
    std::size_t i = 0;
    g.for_each([&](const std::string& name, const Matrix& grad) {
      CHECK_MESSAGE(max_gradient_error(params[i]->values(), grad.values(), loss) < 1e-3, name);
      ++i;
    });
  }
}

TEST_CASE("checkpoint round trip") {
  auto p = random_params(3, 4, 2, 3, 1);
  p.lstm.bias(0, 0) = 0.1;
  CHECK(load_checkpoint(save_checkpoint(p)) == p);
  auto none = random_params(3, 4, 0, 2, 2);
  CHECK(load_checkpoint(save_checkpoint(none)) == none);
}

TEST_CASE("training config validation and JSON") {
  TrainingConfig c;
  c.validate();
  CHECK(c.hidden_size == 64);
  CHECK(c.num_relu_layers == 2);
  CHECK(c.aleatoric_samples == 50);
  CHECK(c.w2 == 0.2);
  auto back = training_config_from_json(training_config_to_json(c));
  CHECK(training_config_to_json(back) == training_config_to_json(c));

  CHECK_THROWS_AS(training_config_from_json(R"({"aleatoric_samples": 0})"), ConfigError);
  CHECK_THROWS_AS(training_config_from_json(R"({"w1": 0, "w2": 0})"), ConfigError);
  CHECK_THROWS_AS(training_config_from_json(R"({"dropout_rate_train": 1.0})"), ConfigError);
  CHECK_THROWS_AS(training_config_from_json(R"({"bogus": 1})"), ConfigError);
}

namespace {

std::vector<EncodedTree> memorization_set(std::size_t dim) {
  Rng rng(55);
  std::vector<EncodedTree> trees;
  for (int i = 0; i < 10; ++i) {
    EncodedTree t{"m" + std::to_string(i), label_from_index(i % 3), {}};
    t.branches.push_back(random_sequence(1 + rng.below(3), dim, rng));
    trees.push_back(std::move(t));
  }
  return trees;
}

}  // namespace

TEST_CASE("train: zero epochs returns the seeded initialization") {
  TrainingConfig c;
  c.hidden_size = 6;
  c.epochs = 0;
  c.seed = 17;
  auto m = train_model(memorization_set(4), 3, c);
  CHECK(m.params == init_params({4, 6, 2, 3}, 17));
  CHECK(m.history.epochs.empty());
}

TEST_CASE("train is deterministic and memorizes") {
  TrainingConfig c;
  c.hidden_size = 8;
  c.learning_rate = 0.05;
  c.epochs = 40;
  c.aleatoric_samples = 10;
  c.dropout_rate_train = 0.0;
  c.seed = 3;
  const auto data = memorization_set(5);
  auto a = train_model(data, 3, c);
  auto b = train_model(data, 3, c);
  CHECK(a.params == b.params);
  CHECK(a.history.to_csv() == b.history.to_csv());
  REQUIRE(a.history.epochs.size() == 40);
  CHECK(a.history.epochs.back().total < a.history.epochs.front().total);
  CHECK(a.history.to_csv().rfind("epoch,loss_total,loss_l1,loss_l2\n", 0) == 0);
}

TEST_CASE("train rejects an empty training set") {
  TrainingConfig c;
  CHECK_THROWS_AS(train_model({}, 3, c), ConfigError);
  std::vector<ConversationTree> trees{{"a", "e", Label::true_rumour, {{"1", std::nullopt, 0, "x", std::nullopt}}}};
  FoldSpec folds;
  folds.assignments = {{"a", 0}};
  CHECK_THROWS_AS(train(trees, folds, 0, c, Embedder::hashing(), 3), ConfigError);
}

TEST_CASE("predict_tree averages branches") {
  auto p = random_params(3, 4, 1, 3, 12);
  Rng rng(13);
  EncodedTree single{"s", Label::true_rumour, {random_sequence(2, 3, rng)}};
  Rng r0(0);
  auto direct = forward_branch(p, single.branches[0], DropoutSpec::off(), r0);
  CHECK(predict_tree(p, single).probs == direct.probs);

  EncodedTree five{"f", Label::true_rumour, {}};
  for (int i = 0; i < 5; ++i) five.branches.push_back(random_sequence(1 + rng.below(3), 3, rng));
  auto pred = predict_tree(p, five);
  Vector mean(3, 0.0);
  for (const auto& b : five.branches) {
    auto o = oracle::branch(p, b);
    for (std::size_t k = 0; k < 3; ++k) mean[k] += o.probs[k] / 5.0;
  }
  double total = 0.0;
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(pred.probs[k] == doctest::Approx(mean[k]).epsilon(1e-12));
    total += pred.probs[k];
  }
  CHECK(std::abs(total - 1.0) <= 1e-9);
  CHECK(pred.branch_sigmas.size() == 5);
}

TEST_CASE("predict_tree ties go to the lowest class") {
  // One hidden unit: the input and output gates saturate open, the forget gate
  // shut, and the cell candidate is tanh(100 x), so h = +-tanh(1) by the sign of x.
  // A large head then makes each branch's probabilities exactly one-hot.
  ModelParams p;
  p.lstm.input_weights = Matrix(4, 1, std::vector<double>{0, 0, 100, 0});
  p.lstm.recurrent_weights = Matrix(4, 1);
  p.lstm.bias = Matrix(4, 1, std::vector<double>{100, -100, 0, 100});
  p.classifier = {Matrix(2, 1, std::vector<double>{2000, -2000}), Matrix(2, 1)};
  p.variance = {Matrix(1, 1), Matrix(1, 1)};
  p.validate();

  CHECK(predict_tree(p, EncodedTree{"a", Label::true_rumour, {{{1.0}}}}).probs == Vector{1.0, 0.0});
  CHECK(predict_tree(p, EncodedTree{"b", Label::true_rumour, {{{-1.0}}}}).probs == Vector{0.0, 1.0});
  auto both = predict_tree(p, EncodedTree{"c", Label::true_rumour, {{{1.0}}, {{-1.0}}}});
  CHECK(both.probs == Vector{0.5, 0.5});
  CHECK(both.predicted == 0);
}
