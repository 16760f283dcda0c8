#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "msiprior/synthetic.hpp"
#include "msiprior/training.hpp"
#include "support.hpp"

using namespace msiprior;
using ad::Matrix;

namespace {

TrainConfig schedule(int epochs, int warmup) {
  TrainConfig c;
  c.lr_base = 1e-3;
  c.epochs = epochs;
  c.warmup_epochs = warmup;
  return c;
}

ModelParams scalar_params(double v) {
  ModelConfig c;
  return ModelParams(c, {{"p", Matrix::Constant(1, 1, v)}});
}

Cohort small_cohort(std::uint64_t seed) {
  CohortSpec s = default_train_spec(seed);
  s.n_slides = 10;
  s.msi_fraction = 0.3;
  s.tiles_min = 16;
  s.tiles_max = 40;
  s.feature_dim = 8;
  return generate_cohort(s, "T").cohort();
}

}  // namespace

TEST_SUITE("training_engine") {

TEST_CASE("learning rate schedule") {
  const TrainConfig c = schedule(10, 2);
  const long spe = 7;  // warmup 14 steps, 70 total
  CHECK(lr_at(0, spe, c) == doctest::Approx(1e-3 / 14));
  CHECK(lr_at(13, spe, c) == 1e-3);
  CHECK(lr_at(14, spe, c) == 1e-3);
  // Anneal spans steps 14..69; its midpoint is step 41.5, so check both neighbours.
  CHECK(lr_at(69, spe, c) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(std::abs(lr_at(69, spe, c)) < 1e-15);
  const TrainConfig odd = schedule(4, 1);  // 3 warmup steps, anneal 3..11, midpoint step 7
  CHECK(lr_at(7, 3, odd) == doctest::Approx(5e-4).epsilon(1e-12));
  double prev = 0.0;
  for (long s = 0; s < 70; ++s) {
    const double lr = lr_at(s, spe, c);
    if (s < 14) CHECK(lr >= prev);
    if (s > 14) CHECK(lr <= prev);
    prev = lr;
  }
  CHECK_THROWS_AS(lr_at(0, 0, c), Error);
  CHECK(lr_at(0, 5, schedule(3, 0)) == 1e-3);
}

TEST_CASE("adam step") {
  TrainConfig c;
  c.weight_decay = 0.0;
  SUBCASE("first step moves by lr") {
    ModelParams p = scalar_params(2.0);
    AdamState s = AdamState::zeros_like(p);
    adam_step(p, {Matrix::Constant(1, 1, 1.0)}, s, 0.01, c);
    CHECK(p.at("p")(0, 0) - 2.0 == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-14));
    CHECK(s.step == 1);
  }
  SUBCASE("zero gradient and no decay leaves params") {
    ModelParams p = scalar_params(2.0);
    AdamState s = AdamState::zeros_like(p);
    adam_step(p, {Matrix::Zero(1, 1)}, s, 0.01, c);
    CHECK(p.at("p")(0, 0) == 2.0);
  }
  SUBCASE("decay-only path") {
    c.weight_decay = 1e-5;
    ModelParams p = scalar_params(2.0);
    AdamState s = AdamState::zeros_like(p);
    adam_step(p, {Matrix::Zero(1, 1)}, s, 0.01, c);
    CHECK(p.at("p")(0, 0) == doctest::Approx(2.0 * (1.0 - 0.01 * 1e-5)).epsilon(1e-15));
  }
  SUBCASE("non-finite gradient aborts without touching state") {
    ModelParams p = scalar_params(2.0);
    AdamState s = AdamState::zeros_like(p);
    CHECK_THROWS_AS(adam_step(p, {Matrix::Constant(1, 1, NAN)}, s, 0.01, c), Error);
    CHECK(p.at("p")(0, 0) == 2.0);
    CHECK(s.step == 0);
  }
}

TEST_CASE("gradient clipping") {
  std::vector<Matrix> small = {Matrix::Constant(1, 1, 0.3), Matrix::Constant(1, 1, 0.4)};
  CHECK(clip_gradients(small, 1.0) == doctest::Approx(0.5));
  CHECK(small[1](0, 0) == 0.4);

  std::vector<Matrix> big = {Matrix::Constant(2, 2, 1.0)};  // norm 2
  clip_gradients(big, 1.0);
  CHECK(big[0](0, 0) == 0.5);
  CHECK(std::abs(global_norm(big) - 1.0) < 1e-12);

  std::vector<Matrix> one = {Matrix::Constant(1, 1, 3.0)};
  clip_gradients(one, 1.0);
  CHECK(one[0](0, 0) == doctest::Approx(1.0).epsilon(1e-15));

  CounterRng rng(1);
  for (int k = 0; k < 100; ++k) {
    std::vector<Matrix> g = {testing::random_matrix(3, 4, rng) * rng.uniform(0, 10),
                             testing::random_matrix(1, 5, rng)};
    clip_gradients(g, 1.0);
    CHECK(global_norm(g) <= 1.0 + 1e-9);
  }
}

TEST_CASE("tile subsampling") {
  CounterRng a(7);
  CHECK(subsample_indices(800, 4000, a).size() == 800);
  const auto s1 = subsample_indices(6000, 4000, a);
  CHECK(s1.size() == 4000);
  CHECK(std::set<std::size_t>(s1.begin(), s1.end()).size() == 4000);
  CHECK(s1.back() < 6000);
  CounterRng c1 = CounterRng(3).derive({1, 2}), c2 = CounterRng(3).derive({1, 2});
  CHECK(subsample_indices(6000, 4000, c1) == subsample_indices(6000, 4000, c2));

  CounterRng r(9);
  const SlideBag bag = testing::random_bag(50, 4, r);
  CHECK(subsample_tiles(bag, 100, r).features == bag.features);
  const SlideBag sub = subsample_tiles(bag, 20, r);
  CHECK(sub.n_tiles() == 20);
  CHECK(sub.features.rows() == 20);
}

TEST_CASE("class weights") {
  Cohort c(4);
  c[0].labels.msi = 1;
  c[1].labels.msi = 1;
  c[0].labels.hypermut = 1;
  const auto w = class_weights(c);
  CHECK(w[kMSI] == 2.0);
  CHECK(w[kMSS] == 2.0);
  CHECK(w[kHyper] == 4.0);
  Cohort none(3);
  CHECK(class_weights(none)[kMSI] == 1.0);
}

TEST_CASE("train_fold contract") {
  const Cohort all = small_cohort(1);
  const Cohort train(all.begin(), all.begin() + 7), val(all.begin() + 7, all.end());
  TrainConfig tc;
  tc.epochs = 6;
  tc.warmup_epochs = 1;
  tc.lr_base = 2e-3;
  ModelConfig mc;
  mc.aggregator = Aggregator::kABMIL;
  mc.input_dim = 8;
  mc.hidden_dim = 8;
  mc.n_heads = 2;

  const FoldResult a = train_fold(train, val, mc, tc, 0);
  REQUIRE(a.trace.size() == 6);
  double best = -1.0;
  int best_epoch = 0;
  for (const auto& r : a.trace) {
    if (std::isfinite(r.val_msi_auc) && r.val_msi_auc > best) {
      best = r.val_msi_auc;
      best_epoch = r.epoch;
    }
  }
  CHECK(a.best_epoch == (best_epoch == 0 ? 6 : best_epoch));

  const FoldResult b = train_fold(train, val, mc, tc, 0);
  std::ostringstream ta, tb;
  write_trace_csv(ta, a.trace);
  write_trace_csv(tb, b.trace);
  CHECK(ta.str() == tb.str());
  for (std::size_t i = 0; i < a.best.tensors().size(); ++i)
    CHECK(a.best.tensors()[i].value == b.best.tensors()[i].value);

  Cohort single = train;
  for (auto& s : single) s.labels.msi = 0;
  CHECK_THROWS_AS(train_fold(single, val, mc, tc, 0), Error);
}

TEST_CASE("training loss falls on a small cohort") {
  const Cohort all = small_cohort(2);
  for (auto agg : {Aggregator::kABMIL, Aggregator::kCLAM_SB, Aggregator::kTransMIL}) {
    CAPTURE(to_string(agg));
    ModelConfig mc;
    mc.aggregator = agg;
    mc.input_dim = 8;
    mc.hidden_dim = 16;
    mc.n_heads = 2;
    mc.clam_k = 4;
    TrainConfig tc;
    tc.lr_base = agg == Aggregator::kTransMIL ? 1e-4 : 2e-4;
    const FoldResult r = train_fold(all, {}, mc, tc, 0);
    REQUIRE(r.trace.size() == 30);
    CHECK(r.trace.back().mean_train_loss < r.trace.front().mean_train_loss);
    CHECK(r.best_epoch == 30);
  }
}

}  // TEST_SUITE
