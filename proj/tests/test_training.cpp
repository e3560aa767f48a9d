#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "igrad/datasets.hpp"
#include "igrad/training.hpp"
#include "oracle.hpp"
#include "test_util.hpp"

using namespace igrad;

namespace {

Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t k) {
  Tensor y = Tensor::zeros({labels.size(), k});
  for (std::size_t i = 0; i < labels.size(); ++i) y.at(i, labels[i]) = 1.0;
  return y;
}

struct Batch {
  Tensor X, y, A;
};

Batch random_batch(std::uint64_t seed, std::size_t n, std::size_t d, std::size_t k) {
  Rng rng(seed);
  Batch b;
  b.X = testutil::rand_tensor(rng, {n, d});
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = rng.integer(k);
  b.y = one_hot(labels, k);
  b.A = testutil::rand_binary(rng, {n, d});
  return b;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("plain cross-entropy matches a straight-line reimplementation") {
  const Batch b = random_batch(31, 8, 5, 3);
  const Params p = init_params(5, 3, 4);
  const LossBreakdown loss = rrr_loss(p, b.X, b.y, b.A, 0.0, 0.0);
  const double expect = oracle::cross_entropy(p, b.X, b.y);
  CHECK(std::abs(loss.total - expect) <= 1e-10);
  CHECK(loss.right_answers == loss.total);
  CHECK(loss.right_reasons == 0.0);
  CHECK(loss.regular == 0.0);
}

TEST_CASE("blank annotations contribute exactly nothing") {
  const Batch b = random_batch(32, 6, 4, 2);
  const Params p = init_params(4, 2, 9);
  const LossBreakdown loss = rrr_loss(p, b.X, b.y, Tensor::zeros({6, 4}), 1000.0, 0.0);
  CHECK(loss.right_reasons == 0.0);
  CHECK(loss.total == loss.right_answers);
}

TEST_CASE("an all-ones annotation equals the independent full-gradient penalty") {
  const Batch b = random_batch(33, 7, 5, 3);
  const Params p = init_params(5, 3, 2);
  const double lambda1 = 7.5;
  const LossBreakdown loss = rrr_loss(p, b.X, b.y, Tensor::full({7, 5}, 1.0), lambda1, 0.0);
  const double expect = lambda1 * oracle::full_gradient_penalty(p, b.X);
  CHECK(std::abs(loss.right_reasons - expect) <= 1e-10 * std::max(1.0, std::abs(expect)));
}

TEST_CASE("loss terms are nonnegative and sum to the total") {
  for (std::uint64_t seed = 40; seed < 44; ++seed) {
    const Batch b = random_batch(seed, 9, 6, 3);
    const Params p = init_params(6, 3, seed);
    const LossBreakdown loss = rrr_loss(p, b.X, b.y, b.A, 12.0, 0.3);
    CHECK(loss.right_answers >= 0.0);
    CHECK(loss.right_reasons >= 0.0);
    CHECK(loss.regular >= 0.0);
    CHECK(std::abs(loss.total - (loss.right_answers + loss.right_reasons + loss.regular)) <= 1e-9);
  }
}

TEST_CASE("loss rejects malformed labels and annotations") {
  const Batch b = random_batch(35, 4, 3, 2);
  const Params p = init_params(3, 2, 1);
  Tensor bad_y = b.y;
  bad_y.at(0, 0) = 0.5;
  bad_y.at(0, 1) = 0.5;
  CHECK_THROWS_AS(rrr_loss(p, b.X, bad_y, b.A, 1.0, 0.0), std::invalid_argument);
  Tensor two_hot = b.y;
  two_hot.at(1, 0) = 1.0;
  two_hot.at(1, 1) = 1.0;
  CHECK_THROWS_AS(rrr_loss(p, b.X, two_hot, b.A, 1.0, 0.0), std::invalid_argument);
  Tensor bad_A = b.A;
  bad_A.at(0, 0) = 0.25;
  CHECK_THROWS_AS(rrr_loss(p, b.X, b.y, bad_A, 1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(rrr_loss(p, b.X, b.y, Tensor::zeros({5, 3}), 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("full loss gradient with respect to parameters matches finite differences") {
  const Batch b = random_batch(36, 10, 4, 3);
  const Params p = init_params(4, 3, 17);
  std::vector<Tensor> point;
  for (const LayerParams& l : p.layers) {
    point.push_back(l.weights);
    point.push_back(l.bias);
  }
  const GraphBuilder builder = [&](Graph& g, const std::vector<NodeId>& leaves) {
    const ForwardGraph f = build_forward(g, leaves, b.X);
    return build_rrr_loss(g, f, b.y, b.A, 3.0, 0.05).total;
  };
  CHECK(check_grad(builder, point, 1e-5) <= 1e-4);
}

TEST_CASE("adam follows the constant-gradient closed form") {
  Params p;
  p.layers.push_back({Tensor({2, 2}, {0.5, -0.3, 0.1, 0.9}), Tensor({2}, {0.2, -0.7})});
  const Params original = p;
  AdamState state = init_adam(p);
  AdamConfig cfg;

  const double gw = 0.37, gb = -1.4;
  const std::vector<Tensor> grads = {Tensor::full({2, 2}, gw), Tensor::full({2}, gb)};
  const std::size_t steps = 9;
  for (std::size_t t = 0; t < steps; ++t) adam_step(state, p, grads, cfg);
  CHECK(state.step == steps);

  // With a constant gradient the bias-corrected moments are exactly g and
  // g^2, so every step moves by step_size * g / (|g| + eps).
  const double expect_w = original.layers[0].weights[0] -
                          double(steps) * cfg.step_size * gw / (std::abs(gw) + cfg.epsilon);
  const double expect_b = original.layers[0].bias[1] -
                          double(steps) * cfg.step_size * gb / (std::abs(gb) + cfg.epsilon);
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(std::abs(p.layers[0].weights[j] -
                   (original.layers[0].weights[j] -
                    double(steps) * cfg.step_size * gw / (std::abs(gw) + cfg.epsilon))) <= 1e-12);
  CHECK(std::abs(p.layers[0].weights[0] - expect_w) <= 1e-12);
  CHECK(std::abs(p.layers[0].bias[1] - expect_b) <= 1e-12);
}

TEST_CASE("adam guards its inputs") {
  Params p;
  p.layers.push_back({Tensor({2, 2}, {0.5, -0.3, 0.1, 0.9}), Tensor({2}, {0.2, -0.7})});
  AdamState state = init_adam(p);
  AdamConfig cfg;

  SUBCASE("zero gradients leave parameters untouched but advance the step") {
    const Params before = p;
    adam_step(state, p, {Tensor::zeros({2, 2}), Tensor::zeros({2})}, cfg);
    CHECK(p == before);
    CHECK(state.step == 1);
  }
  SUBCASE("a NaN component names the offending tensor") {
    Tensor gw = Tensor::zeros({2, 2});
    gw[3] = std::nan("");
    CHECK_THROWS_WITH_AS(adam_step(state, p, {gw, Tensor::zeros({2})}, cfg),
                         doctest::Contains("layer 0 weights"), std::runtime_error);
    Tensor gb = Tensor::zeros({2});
    gb[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(adam_step(state, p, {Tensor::zeros({2, 2}), gb}, cfg),
                         doctest::Contains("layer 0 bias"), std::runtime_error);
  }
  SUBCASE("shape and count mismatches are rejected") {
    CHECK_THROWS_AS(adam_step(state, p, {Tensor::zeros({2, 2})}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(adam_step(state, p, {Tensor::zeros({2, 3}), Tensor::zeros({2})}, cfg),
                    std::invalid_argument);
  }
}

TEST_CASE("training runs are reproducible and obey the epoch contract") {
  const auto ds = data::gen_2d_toy(data::Toy2dKind::kTwoClass, 120, 5);
  RrrConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 32;
  cfg.seed = 3;
  cfg.stall_window = 0;

  const TrainResult a = train(cfg, ds.X, ds.y, ds.A);
  const TrainResult b = train(cfg, ds.X, ds.y, ds.A);
  CHECK(a.params == b.params);
  REQUIRE(a.history.size() == 6);
  REQUIRE(b.history.size() == 6);
  for (std::size_t e = 0; e < 6; ++e) {
    CHECK(a.history[e].epoch == e);
    CHECK(a.history[e].loss == b.history[e].loss);
    CHECK(a.history[e].train_accuracy == b.history[e].train_accuracy);
    CHECK_FALSE(a.history[e].heldout_accuracy.has_value());
  }
  CHECK(a.history[1].loss.total < a.history[0].loss.total);

  SUBCASE("zero epochs returns the seeded initialization untouched") {
    RrrConfig none = cfg;
    none.epochs = 0;
    const TrainResult r = train(none, ds.X, ds.y, ds.A);
    CHECK(r.history.empty());
    CHECK(r.params == init_params(2, 2, cfg.seed));
  }
  SUBCASE("held-out accuracy is recorded when a split is supplied") {
    const auto tt = data::split(ds, 0.5, 1);
    const TrainResult r = train(cfg, tt.train.X, tt.train.y, tt.train.A,
                                EvalSplit{tt.test.X, tt.test.y});
    REQUIRE(r.history.size() == 6);
    for (const EpochRecord& rec : r.history) {
      REQUIRE(rec.heldout_accuracy.has_value());
      CHECK(*rec.heldout_accuracy >= 0.0);
      CHECK(*rec.heldout_accuracy <= 1.0);
    }
  }
  SUBCASE("a custom start overrides the seeded initialization") {
    RrrConfig none = cfg;
    none.epochs = 0;
    const Params custom = init_params(2, 2, 999);
    const TrainResult r = train(none, ds.X, ds.y, ds.A, std::nullopt, custom);
    CHECK(r.params == custom);
    CHECK_THROWS_AS(train(none, ds.X, ds.y, ds.A, std::nullopt, init_params(3, 2, 1)),
                    std::invalid_argument);
  }
}

TEST_CASE("stalled training stops early with a truncated history") {
  const auto ds = data::gen_2d_toy(data::Toy2dKind::kTwoClass, 60, 2);
  RrrConfig cfg;
  cfg.epochs = 64;
  cfg.batch_size = 60;
  cfg.seed = 1;
  cfg.stall_tolerance = 1e9;  // every change counts as a stall
  cfg.stall_window = 3;
  const TrainResult r = train(cfg, ds.X, ds.y, ds.A);
  CHECK(r.history.size() == 4);  // window + 1 epochs, then the check fires
}

TEST_CASE("pinning annotated rows only matters when batches exclude them") {
  auto ds = data::gen_toy_color(96, 21);
  ds.A = data::toy_color_mask(data::ToyColorMask::kCorners, 96);
  // Only annotate the first 8 rows.
  for (std::size_t i = 8; i < 96; ++i)
    for (std::size_t j = 0; j < 75; ++j) ds.A.at(i, j) = 0.0;

  RrrConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 96;
  cfg.seed = 11;
  cfg.lambda1 = 10.0;
  cfg.stall_window = 0;

  RrrConfig pinned = cfg;
  pinned.pin_annotated = true;
  CHECK(train(cfg, ds.X, ds.y, ds.A).params == train(pinned, ds.X, ds.y, ds.A).params);

  cfg.batch_size = 32;
  pinned.batch_size = 32;
  CHECK_FALSE(train(cfg, ds.X, ds.y, ds.A).params == train(pinned, ds.X, ds.y, ds.A).params);
}

TEST_CASE("default training separates the color classes almost perfectly") {
  const auto ds = data::gen_toy_color(1000, 0);
  RrrConfig cfg;
  cfg.seed = 0;
  const TrainResult r = train(cfg, ds.X, ds.y, ds.A);
  REQUIRE_FALSE(r.history.empty());
  CHECK(r.history.back().train_accuracy >= 0.99);
}

TEST_CASE("relabeling classes permutes the trained model's outputs") {
  const auto ds = data::gen_2d_toy(data::Toy2dKind::kThreeClass, 150, 9);
  const std::size_t perm[3] = {2, 0, 1};  // new label = perm[old label]
  Tensor y_perm = Tensor::zeros({150, 3});
  for (std::size_t i = 0; i < 150; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      if (ds.y.at(i, k) == 1.0) y_perm.at(i, perm[k]) = 1.0;

  RrrConfig cfg;
  cfg.epochs = 6;
  cfg.batch_size = 50;
  cfg.seed = 4;
  cfg.stall_window = 0;

  const Params p0 = init_params(2, 3, cfg.seed);
  Params p0_perm = p0;
  for (std::size_t r = 0; r < p0.layers.back().weights.rows(); ++r)
    for (std::size_t k = 0; k < 3; ++k)
      p0_perm.layers.back().weights.at(r, perm[k]) = p0.layers.back().weights.at(r, k);
  for (std::size_t k = 0; k < 3; ++k)
    p0_perm.layers.back().bias[perm[k]] = p0.layers.back().bias[k];

  const TrainResult base = train(cfg, ds.X, ds.y, ds.A, std::nullopt, p0);
  const TrainResult moved = train(cfg, ds.X, y_perm, ds.A, std::nullopt, p0_perm);

  const Tensor probs_base = forward(base.params, ds.X).probs;
  const Tensor probs_moved = forward(moved.params, ds.X).probs;
  double worst = 0.0;
  for (std::size_t i = 0; i < 150; ++i)
    for (std::size_t k = 0; k < 3; ++k)
      worst = std::max(worst, std::abs(probs_moved.at(i, perm[k]) - probs_base.at(i, k)));
  CHECK(worst <= 1e-6);
}

TEST_CASE("penalty weight selection follows the documented band rule") {
  const auto ds = data::gen_2d_toy(data::Toy2dKind::kTwoClass, 80, 6);
  RrrConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 40;
  cfg.seed = 2;
  cfg.stall_window = 0;

  SUBCASE("no annotations forces the fallback with a warning flag") {
    const auto choice = select_lambda1(ds.X, ds.y, ds.A, {1.0, 10.0, 100.0}, cfg);
    CHECK(choice.fallback);
    CHECK(choice.lambda1 == 1.0);
    for (const auto& row : choice.rows) {
      CHECK(row.initial_ratio == 0.0);
      CHECK(row.final_ratio == 0.0);
    }
  }
  SUBCASE("a single-element grid is a forced choice") {
    Tensor A = Tensor::full({80, 2}, 1.0);
    const auto choice = select_lambda1(ds.X, ds.y, A, {5.0}, cfg);
    CHECK(choice.lambda1 == 5.0);
    CHECK(choice.rows.size() == 1);
  }
  SUBCASE("degenerate grids are rejected") {
    CHECK_THROWS_AS(select_lambda1(ds.X, ds.y, ds.A, {}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(select_lambda1(ds.X, ds.y, ds.A, {2.0, 2.0}, cfg), std::invalid_argument);
    CHECK_THROWS_AS(select_lambda1(ds.X, ds.y, ds.A, {3.0, 1.0}, cfg), std::invalid_argument);
  }
}

TEST_CASE("the selected penalty weight balances the loss terms on color data") {
  auto ds = data::gen_toy_color(400, 14);
  ds.A = data::toy_color_mask(data::ToyColorMask::kCorners, 400);
  RrrConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 128;
  cfg.seed = 1;

  const std::vector<double> grid = {1.0, 10.0, 100.0, 1000.0, 1e4, 1e5, 1e6};
  const auto choice = select_lambda1(ds.X, ds.y, ds.A, grid, cfg);
  CHECK_FALSE(choice.fallback);
  CHECK(choice.lambda1 >= 100.0);
  CHECK(choice.lambda1 <= 10000.0);

  // Converged raw penalty magnitude decreases as its weight grows (one 5%
  // violation allowed across the grid).
  std::size_t violations = 0;
  for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
    const double raw_a = choice.rows[i].final_loss.right_reasons / grid[i];
    const double raw_b = choice.rows[i + 1].final_loss.right_reasons / grid[i + 1];
    if (raw_b > raw_a * 1.05) ++violations;
  }
  CHECK(violations <= 1);
}

}  // TEST_SUITE
