#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "milsurv/adam.hpp"
#include "milsurv/checkpoint.hpp"
#include "milsurv/errors.hpp"
#include "milsurv/experiment.hpp"
#include "milsurv/model.hpp"
#include "milsurv/objective.hpp"
#include "milsurv/trainer.hpp"
#include "support/gradcheck.hpp"

using namespace milsurv;
using namespace milsurv::model;
using cohort::SurvivalOutcome;

namespace {

Architecture small(Modality m, int dim = 6) {
  Architecture a;
  a.modality = m;
  a.input_dim = m == Modality::Clinical ? 0 : dim;
  a.attention_dim = 5;
  a.head_hidden = 4;
  a.fusion_hidden = 4;
  return a;
}

TileMatrix random_tiles(int n, int dim, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> z;
  TileMatrix m(n, dim);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = z(rng);
  return m;
}

tiling::EmbeddingBag to_bag(const TileMatrix& m) {
  std::vector<float> d;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) d.push_back(static_cast<float>(m(r, c)));
  return tiling::EmbeddingBag("P", tiling::Encoder::Synthetic, static_cast<int>(m.cols()), std::move(d));
}

pipeline::LoadedCohort small_cohort(double beta, std::size_t n, std::uint64_t seed) {
  tiling::SyntheticSignalSpec s;
  s.dim = 8;
  s.beta = beta;
  s.baseline_hazard = 0.05;
  s.tiles_min = 4;
  s.tiles_max = 8;
  return pipeline::from_synthetic("dev", tiling::generate_synthetic_cohort(s, n, seed));
}

TrainConfig quick_config(Modality m) {
  TrainConfig c;
  c.modality = m;
  c.learning_rate = 1e-3;
  c.batch_size = 16;
  c.min_epochs = 3;
  c.max_epochs = 6;
  c.patience = 2;
  c.max_tiles = 6;
  c.attention_dim = 8;
  c.head_hidden = 8;
  c.fusion_hidden = 8;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_CASE("single-tile bag pools to itself") {
  const auto m = testing::random_model(small(Modality::Image), 1);
  const auto t = random_tiles(1, 6, 2);
  const auto r = m.attention_pool(t);
  CHECK(r.weights(0) == 1.0);
  CHECK(r.pooled.isApprox(t.row(0).transpose(), 0.0));
}

TEST_CASE("identical tiles get equal weights") {
  const auto m = testing::random_model(small(Modality::Image), 1);
  TileMatrix t = random_tiles(1, 6, 3).replicate(4, 1);
  const auto r = m.attention_pool(t);
  for (int k = 0; k < 4; ++k) CHECK(r.weights(k) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK((r.pooled - t.row(0).transpose()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("attention weights sum to one and pooling ignores tile order") {
  const auto m = testing::random_model(small(Modality::Image), 4);
  const auto t = random_tiles(7, 6, 5);
  const auto bag = to_bag(t);
  const auto r = attention_pool(bag, m);
  CHECK(r.weights.sum() == doctest::Approx(1.0).epsilon(1e-14));

  std::vector<std::size_t> perm(7);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937 rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    TileMatrix p(7, 6);
    for (int k = 0; k < 7; ++k) p.row(k) = t.row(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(k)]));
    const auto pbag = to_bag(p);
    const auto rp = attention_pool(pbag, m);
    CHECK(rp.pooled == r.pooled);
    for (int k = 0; k < 7; ++k) CHECK(rp.weights(k) == r.weights(static_cast<Eigen::Index>(perm[static_cast<std::size_t>(k)])));
    CHECK(predict(m, &bag, nullptr) == predict(m, &pbag, nullptr));
  }
}

TEST_CASE("empty bag is a precondition error") {
  const auto m = testing::random_model(small(Modality::Image), 1);
  CHECK_THROWS_AS(attention_pool(tiling::EmbeddingBag(), m), PreconditionError);
}

TEST_CASE("all-zero parameters score zero") {
  for (auto mod : {Modality::Clinical, Modality::Image, Modality::Multimodal}) {
    auto m = RiskModel::initialize(small(mod), 1);
    m.parameters().set_zero();
    const auto t = random_tiles(3, 6, 1);
    const cohort::Standardized z{0.3, -1.0, 2.0};
    CHECK(m.predict({&t, &z}) == 0.0);
  }
}

TEST_CASE("image model ignores clinical input exactly") {
  const auto m = testing::random_model(small(Modality::Image), 6);
  const auto t = random_tiles(3, 6, 7);
  const cohort::Standardized a{0.1, 0.2, 0.3}, b{-4.0, 9.0, 1.0};
  CHECK(m.predict({&t, &a}) == m.predict({&t, &b}));
  CHECK(m.predict({&t, &a}) == m.predict({&t, nullptr}));
}

TEST_CASE("multimodal score responds to clinical input") {
  const auto m = testing::random_model(small(Modality::Multimodal), 6);
  const auto t = random_tiles(3, 6, 7);
  const cohort::Standardized a{0.1, 0.2, 0.3}, b{-1.0, 1.5, 1.0};
  CHECK(m.predict({&t, &a}) != m.predict({&t, &b}));
}

TEST_CASE("modality input mismatch is a contract error") {
  const auto img = testing::random_model(small(Modality::Image), 1);
  const auto clin = testing::random_model(small(Modality::Clinical), 1);
  const auto mm = testing::random_model(small(Modality::Multimodal), 1);
  const auto t = random_tiles(2, 6, 1);
  const auto wrong = random_tiles(2, 5, 1);
  const cohort::Standardized z{};
  CHECK_THROWS_AS(img.predict({nullptr, &z}), ContractError);
  CHECK_THROWS_AS(img.predict({&wrong, nullptr}), ContractError);
  CHECK_THROWS_AS(clin.predict({&t, nullptr}), ContractError);
  CHECK_THROWS_AS(mm.predict({&t, nullptr}), ContractError);
  CHECK_THROWS_AS(mm.predict({nullptr, &z}), ContractError);
}

TEST_CASE("cox_loss closed forms") {
  const std::vector<SurvivalOutcome> y{{1.0, true}, {2.0, false}};
  CHECK(std::abs(cox_loss(std::vector<double>{0, 0}, y) - std::log(2.0)) < 1e-12);
  const double expected = -(5.0 - std::log(std::exp(5.0) + 1.0));
  CHECK(std::abs(cox_loss(std::vector<double>{5, 0}, y) - expected) < 1e-12);
  CHECK(std::abs(expected - 0.006715) < 1e-6);
}

TEST_CASE("cox_loss Breslow ties share a risk set") {
  // Both events at t=1: each risk set holds all three patients.
  const std::vector<SurvivalOutcome> y{{1.0, true}, {1.0, true}, {2.0, false}};
  const std::vector<double> s{0.5, -0.2, 1.0};
  const double lse = std::log(std::exp(0.5) + std::exp(-0.2) + std::exp(1.0));
  CHECK(std::abs(cox_loss(s, y) - (-(0.5 - lse) - (-0.2 - lse)) / 2) < 1e-12);
}

TEST_CASE("cox_loss is shift invariant and decreases in the earliest event score") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> z(0, 2);
  std::uniform_real_distribution<double> t(0.1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + trial % 20;
    std::vector<double> s(n);
    std::vector<SurvivalOutcome> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = z(rng);
      y[i] = {t(rng), i % 3 == 0};
    }
    const double base = cox_loss(s, y);
    const double c = z(rng) * 10;
    auto shifted = s;
    for (auto& v : shifted) v += c;
    CHECK(std::abs(cox_loss(shifted, y) - base) < 1e-9);
    // Raising the earliest event's score lowers the loss. Later events sit in
    // earlier risk sets, so for them the sign can go either way.
    y[0].time = 0.05;
    const double first = cox_loss(s, y);
    auto raised = s;
    raised[0] += 0.5;
    CHECK(cox_loss(raised, y) < first);
  }
}

TEST_CASE("cox_loss without events is an estimation error") {
  const std::vector<SurvivalOutcome> y{{1.0, false}, {2.0, false}};
  CHECK_THROWS_AS(cox_loss(std::vector<double>{0, 0}, y), EstimationError);
  const auto m = testing::random_model(small(Modality::Clinical), 1);
  auto b = testing::random_batch(m.architecture(), 3, 1);
  for (auto& o : b.batch.outcomes) o.event = false;
  CHECK_THROWS_AS(gradients(m, b.batch), EstimationError);
}

TEST_CASE("cox_loss score gradient matches finite differences") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> z(0, 1);
  const std::vector<SurvivalOutcome> y{{1.0, true}, {2.0, false}, {2.0, true}, {0.5, false}, {3.0, true}};
  std::vector<double> s(5);
  for (auto& v : s) v = z(rng);
  const auto g = cox_loss_with_grad(s, y);
  for (std::size_t k = 0; k < 5; ++k) {
    auto up = s, down = s;
    up[k] += 1e-5;
    down[k] -= 1e-5;
    CHECK(g.dscores[k] == doctest::Approx((cox_loss(up, y) - cox_loss(down, y)) / 2e-5).epsilon(1e-7));
  }
}

TEST_CASE("parameter gradients match central differences") {
  for (auto mod : {Modality::Clinical, Modality::Image, Modality::Multimodal}) {
    testing::GradCheckStats stats;
    for (std::uint64_t draw = 0; draw < 10; ++draw) {
      const auto m = testing::random_model(small(mod), 100 + draw);
      const auto b = testing::random_batch(m.architecture(), 6, 200 + draw);
      testing::check_gradients(m, b.batch, 300 + draw, 4, stats);
    }
    INFO(to_string(mod), " worst: ", stats.worst);
    CHECK(stats.failed == 0);
    CHECK(stats.checked > 0);
  }
}

TEST_CASE("a patient listed twice counts as two risk-set rows") {
  const auto m = testing::random_model(small(Modality::Image), 11);
  const auto b = testing::random_batch(m.architecture(), 3, 12);
  Batch dup = b.batch;
  dup.inputs.push_back(b.batch.inputs[1]);
  dup.outcomes.push_back(b.batch.outcomes[1]);
  const auto g = gradients(m, dup);

  std::vector<double> s;
  for (const auto& in : dup.inputs) s.push_back(m.predict(in));
  const auto loss = cox_loss_with_grad(s, dup.outcomes);
  auto expected = m.parameters().zeros_like();
  m.accumulate_gradient(dup.inputs[0], loss.dscores[0], expected);
  m.accumulate_gradient(dup.inputs[1], loss.dscores[1] + loss.dscores[3], expected);
  m.accumulate_gradient(dup.inputs[2], loss.dscores[2], expected);
  CHECK(g.loss == loss.value);
  for (std::size_t k = 0; k < expected.numel(); ++k) CHECK(g.grads.flat(k) == doctest::Approx(expected.flat(k)).epsilon(1e-12));
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
  ParameterSet p;
  p.add("x", Eigen::MatrixXd::Constant(1, 1, 2.0));
  auto g = p.zeros_like();
  g[0](0, 0) = 3.0;
  auto state = AdamState::zeros_like(p);
  adam_step(p, g, state, 0.1, 1);
  CHECK(std::abs(p[0](0, 0) - (2.0 - 0.1)) < 1e-6);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  ParameterSet p;
  p.add("x", Eigen::MatrixXd::Random(3, 2));
  const auto before = p;
  auto state = AdamState::zeros_like(p);
  for (long t = 1; t <= 5; ++t) adam_step(p, p.zeros_like(), state, 0.1, t);
  CHECK(p == before);
}

TEST_CASE("adam is deterministic and checks layouts") {
  ParameterSet p;
  p.add("x", Eigen::MatrixXd::Constant(2, 2, 1.0));
  auto g = p.zeros_like();
  g[0](1, 0) = -0.7;
  auto s1 = AdamState::zeros_like(p), s2 = AdamState::zeros_like(p);
  auto p1 = p, p2 = p;
  adam_step(p1, g, s1, 0.01, 1);
  adam_step(p2, g, s2, 0.01, 1);
  CHECK(p1 == p2);
  CHECK(s1.m == s2.m);
  ParameterSet other;
  other.add("y", Eigen::MatrixXd::Zero(1, 1));
  CHECK_THROWS_AS(adam_step(p1, other, s1, 0.01, 2), ContractError);
  CHECK_THROWS_AS(adam_step(p1, g, s1, 0.01, 0), PreconditionError);
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.min_epochs = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.min_epochs = 301;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c = {};
  c.patience = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("training is bit-reproducible and respects the epoch contract") {
  const auto dev = small_cohort(3.0, 60, 4);
  const PreparedCohort data(dev.patients, 6);
  std::vector<std::size_t> tr, va;
  for (std::size_t i = 0; i < data.size(); ++i) (i % 4 == 0 ? va : tr).push_back(i);
  for (auto mod : {Modality::Image, Modality::Clinical, Modality::Multimodal}) {
    const auto cfg = quick_config(mod);
    const auto a = train(data, tr, va, cfg);
    const auto b = train(data, tr, va, cfg);
    CHECK(a.model.parameters() == b.model.parameters());
    CHECK(a.best_epoch == b.best_epoch);
    CHECK(a.history.size() >= static_cast<std::size_t>(cfg.min_epochs));
    CHECK(a.history.size() <= static_cast<std::size_t>(cfg.max_epochs));
    double best = -1;
    int best_epoch = 0;
    for (const auto& h : a.history)
      if (h.val_c_index > best) {
        best = h.val_c_index;
        best_epoch = h.epoch;
      }
    CHECK(a.best_epoch == best_epoch);
    CHECK(a.best_val_c_index == best);
  }
}

TEST_CASE("training rejects degenerate splits") {
  const auto dev = small_cohort(1.0, 30, 2);
  const PreparedCohort data(dev.patients, 6);
  std::vector<std::size_t> tr, va, censored_val;
  for (std::size_t i = 0; i < data.size(); ++i) {
    (i % 3 == 0 ? va : tr).push_back(i);
    if (!data.patient(i).outcome.event) censored_val.push_back(i);
  }
  const auto cfg = quick_config(Modality::Image);
  CHECK_THROWS_AS(train(data, {}, va, cfg), PreconditionError);
  CHECK_THROWS_AS(train(data, tr, {}, cfg), PreconditionError);
  CHECK_THROWS_AS(train(data, tr, censored_val, cfg), PreconditionError);
}

TEST_CASE("ensemble prediction is the member mean") {
  auto a = RiskModel::initialize(small(Modality::Image), 1);
  auto b = RiskModel::initialize(small(Modality::Image), 2);
  a.parameters().set_zero();
  b.parameters().set_zero();
  a.parameters()[a.parameters().index_of("head.b2")](0, 0) = 0.2;
  b.parameters()[b.parameters().index_of("head.b2")](0, 0) = 0.6;
  const auto t = random_tiles(3, 6, 1);
  CHECK(ensemble_predict({a, b}, {&t, nullptr}) == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(ensemble_predict({b, a}, {&t, nullptr}) == ensemble_predict({a, b}, {&t, nullptr}));

  const auto r = testing::random_model(small(Modality::Image), 5);
  CHECK(ensemble_predict({r}, {&t, nullptr}) == r.predict({&t, nullptr}));
  const auto c = testing::random_model(small(Modality::Clinical), 5);
  CHECK_THROWS_AS(ensemble_predict({r, c}, {&t, nullptr}), ContractError);
  CHECK_THROWS_AS(ensemble_predict(std::vector<RiskModel>{}, {&t, nullptr}), PreconditionError);
}

TEST_CASE("checkpoint round-trip is byte-identical") {
  for (auto mod : {Modality::Clinical, Modality::Image, Modality::Multimodal}) {
    auto m = testing::random_model(small(mod), 17);
    cohort::NormalizationStats s;
    s.mean = {62.5, 7.25, 2.0};
    s.sd = {6.1, 3.3, 1.1};
    if (needs_clinical(mod)) m.set_normalization(s);
    const auto text = encode_checkpoint(m);
    const auto back = decode_checkpoint(text);
    CHECK(back.parameters() == m.parameters());
    CHECK(back.architecture() == m.architecture());
    CHECK(encode_checkpoint(back) == text);
  }
}

TEST_CASE("malformed checkpoints are format errors") {
  const auto m = testing::random_model(small(Modality::Image), 17);
  auto j = checkpoint_to_json(m);
  j["version"] = 99;
  CHECK_THROWS_AS(checkpoint_from_json(j), FormatError);
  j = checkpoint_to_json(m);
  j["parameters"][0]["rows"] = 1;
  CHECK_THROWS_AS(checkpoint_from_json(j), FormatError);
  CHECK_THROWS_AS(decode_checkpoint("{"), FormatError);
}
