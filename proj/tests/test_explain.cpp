#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "igrad/explain.hpp"
#include "igrad/training.hpp"
#include "json.hpp"
#include "test_util.hpp"

using namespace igrad;

namespace {

double target_total(const Params& p, const Tensor& X, const ExplainTarget& t,
                    const std::vector<std::size_t>& pred) {
  const ForwardResult r = forward(p, X);
  double total = 0.0;
  for (std::size_t i = 0; i < X.rows(); ++i) {
    switch (t.kind) {
      case Target::kSumLogProb:
        for (std::size_t k = 0; k < r.logprobs.cols(); ++k) total += r.logprobs.at(i, k);
        break;
      case Target::kPredictedProb:
        total += r.probs.at(i, pred[i]);
        break;
      case Target::kClassProb:
        total += r.probs.at(i, t.class_index);
        break;
    }
  }
  return total;
}

ExplanationSet explanation_of(Tensor gradients) {
  ExplanationSet e;
  e.gradients = std::move(gradients);
  return e;
}

}  // namespace

TEST_SUITE("explain") {

TEST_CASE("every target's gradients match finite differences") {
  Rng rng(51);
  const Tensor X = testutil::rand_tensor(rng, {5, 4});
  const Params p = init_params(4, 3, 23);
  const std::vector<std::size_t> pred = predict(p, X);

  for (const ExplainTarget t : {ExplainTarget{Target::kSumLogProb, 0},
                                ExplainTarget{Target::kPredictedProb, 0},
                                ExplainTarget{Target::kClassProb, 2}}) {
    CAPTURE(target_name(t));
    const ExplanationSet e = explain(p, X, t);
    CHECK(e.model_fingerprint == params_fingerprint(p));
    const double h = 1e-5;
    for (std::size_t i = 0; i < 5; ++i) {
      for (std::size_t j = 0; j < 4; ++j) {
        Tensor hi = X, lo = X;
        hi.at(i, j) += h;
        lo.at(i, j) -= h;
        const double fd = (target_total(p, hi, t, pred) - target_total(p, lo, t, pred)) / (2 * h);
        const double an = e.gradients.at(i, j);
        const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
        CHECK(rel <= 1e-5);
      }
    }
  }
}

TEST_CASE("a constant model explains nothing") {
  Params p = init_params(4, 2, 1);
  for (LayerParams& l : p.layers) {
    l.weights = Tensor::zeros(l.weights.shape());
    l.bias = Tensor::zeros(l.bias.shape());
  }
  Rng rng(8);
  const Tensor X = testutil::rand_tensor(rng, {3, 4});
  const ExplanationSet e = explain(p, X);
  for (const double v : e.gradients.data()) CHECK(v == 0.0);
}

TEST_CASE("per-class targets are bounds-checked") {
  const Params p = init_params(4, 3, 1);
  Rng rng(9);
  const Tensor X = testutil::rand_tensor(rng, {2, 4});
  CHECK_THROWS_AS(explain(p, X, ExplainTarget{Target::kClassProb, 3}), std::invalid_argument);
  CHECK_NOTHROW(explain(p, X, ExplainTarget{Target::kClassProb, 2}));
}

TEST_CASE("the magnitude-ratio rule selects documented rows") {
  const ExplanationSet e = explanation_of(Tensor({3, 3}, {3.0, -2.0, 1.0,   //
                                                          2.0, -2.0, 1.0,   //
                                                          0.0, 0.0, 0.0}));
  const Mask m67 = mask_top(e, 0.67);
  // 2/3 = 0.666... sits just below the 0.67 cutoff.
  CHECK(m67.bits.at(0, 0) == 1.0);
  CHECK(m67.bits.at(0, 1) == 0.0);
  CHECK(m67.bits.at(0, 2) == 0.0);

  const Mask m1 = mask_top(e, 1.0);
  CHECK(m1.bits.at(1, 0) == 1.0);  // exact ties both survive c = 1
  CHECK(m1.bits.at(1, 1) == 1.0);
  CHECK(m1.bits.at(1, 2) == 0.0);

  for (std::size_t j = 0; j < 3; ++j) CHECK(m67.bits.at(2, j) == 0.0);  // zero row, empty mask

  CHECK(m67.cutoff == 0.67);
  CHECK_THROWS_AS(mask_top(e, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(mask_top(e, -0.5), std::invalid_argument);
  CHECK_THROWS_AS(mask_top(e, 1.0001), std::invalid_argument);
  CHECK_THROWS_AS(mask_top(e, std::nan("")), std::invalid_argument);
}

TEST_CASE("masks are idempotent, scale-invariant, and monotone in the cutoff") {
  Rng rng(77);
  const Tensor G = testutil::rand_tensor(rng, {20, 15});
  const ExplanationSet e = explanation_of(G);

  const Mask a = mask_top(e, 0.4);
  const Mask b = mask_top(e, 0.4);
  CHECK(a.bits == b.bits);

  for (const double factor : {4.0, 3.0, 0.001}) {
    Tensor scaled = G;
    for (std::size_t i = 0; i < scaled.size(); ++i) scaled[i] *= factor;
    CHECK(mask_top(explanation_of(scaled), 0.4).bits == a.bits);
  }

  double prev_fraction = 1.0;
  Mask prev = mask_top(e, 0.05);
  for (int step = 1; step <= 10; ++step) {
    const double c = 0.05 + 0.095 * step;
    const Mask cur = mask_top(e, c);
    for (std::size_t i = 0; i < G.size(); ++i)
      if (cur.bits[i] == 1.0) CHECK(prev.bits[i] == 1.0);  // tighter masks nest inside looser
    const double frac = selected_fraction(cur);
    CHECK(frac <= prev_fraction);
    prev_fraction = frac;
    prev = cur;
  }
}

TEST_CASE("rendering aggregates grid channels and reports opacities") {
  ExplanationSet e = explanation_of(Tensor({2, 8}, {0.1, -0.5, 0.0, 0.0, 0.25, 0.25, 1.0, -0.2,  //
                                                    0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0}));
  e.model_fingerprint = 0xdeadbeefULL;
  const Mask m = mask_top(e, 0.67);

  data::DatasetMeta meta;
  meta.kind = data::Kind::kGrid;
  meta.grid_h = 2;
  meta.grid_w = 2;
  meta.grid_channels = 2;

  const auto doc = nlohmann::json::parse(render(e, m, meta));
  CHECK(doc["kind"] == "grid");
  CHECK(doc["target"] == "sum-logprob");
  CHECK(doc["cutoff"] == 0.67);
  CHECK(doc["model"] == "00000000deadbeef");
  CHECK(doc["grid"]["height"] == 2);
  CHECK(doc["grid"]["channels"] == 2);
  REQUIRE(doc["examples"].size() == 2);

  const auto& ex0 = doc["examples"][0];
  REQUIRE(ex0["entries"].size() == 3);  // pixel 1 is all zeros and omitted
  // Pixel 0: channels (0.1, -0.5) keep the signed dominant channel.
  CHECK(ex0["entries"][0]["feature"] == 0);
  CHECK(ex0["entries"][0]["weight"] == -0.5);
  CHECK(ex0["entries"][0]["opacity"] == 0.5);
  // Pixel 2: an exact channel tie keeps the lower channel.
  CHECK(ex0["entries"][1]["feature"] == 2);
  CHECK(ex0["entries"][1]["weight"] == 0.25);
  // Pixel 3 dominates and carries opacity 1.
  CHECK(ex0["entries"][2]["feature"] == 3);
  CHECK(ex0["entries"][2]["weight"] == 1.0);
  CHECK(ex0["entries"][2]["opacity"] == 1.0);
  // Only pixel 3's channel clears the 0.67 ratio.
  REQUIRE(ex0["selected"].size() == 1);
  CHECK(ex0["selected"][0] == 3);

  const auto& ex1 = doc["examples"][1];
  CHECK(ex1["entries"].empty());
  CHECK(ex1["selected"].empty());
}

TEST_CASE("rendering lists named features and keeps gradient signs") {
  ExplanationSet e = explanation_of(Tensor({1, 3}, {-0.75, 0.0, 0.3}));
  e.target = ExplainTarget{Target::kClassProb, 1};
  const Mask m = mask_top(e, 0.3);

  data::DatasetMeta meta;
  meta.kind = data::Kind::kText;
  meta.feature_names = {"alpha", "beta", "gamma"};

  const auto doc = nlohmann::json::parse(render(e, m, meta));
  CHECK(doc["kind"] == "text");
  CHECK(doc["target"] == "class-prob-1");
  REQUIRE(doc["feature_names"].size() == 3);
  const auto& ex = doc["examples"][0];
  REQUIRE(ex["entries"].size() == 2);
  CHECK(ex["entries"][0]["feature"] == 0);
  CHECK(ex["entries"][0]["weight"] == -0.75);
  CHECK(ex["entries"][1]["feature"] == 2);
  CHECK(ex["entries"][1]["weight"] == 0.3);

  meta.feature_names = {"alpha", "beta"};
  CHECK_THROWS_AS(render(e, m, meta), std::invalid_argument);

  data::DatasetMeta grid_meta;
  grid_meta.kind = data::Kind::kGrid;
  grid_meta.grid_h = 2;
  grid_meta.grid_w = 2;
  grid_meta.grid_channels = 1;
  CHECK_THROWS_AS(render(e, m, grid_meta), std::invalid_argument);
}

TEST_CASE("a baseline color model explains itself through the shortcut pixels") {
  const auto train_ds = data::gen_toy_color(1000, 0);
  RrrConfig cfg;
  cfg.seed = 0;
  const TrainResult r = train(cfg, train_ds.X, train_ds.y, train_ds.A);

  const auto probe = data::gen_toy_color(500, 100);
  const ExplanationSet e = explain(r.params, probe.X);
  const Mask m = mask_top(e, 0.67);

  // Mass is measured over the components the mask keeps: the four corners
  // matter equally, so roughly one channel per corner survives the cutoff
  // and nearly all kept mass sits in the rule pixels.
  const Tensor corners = data::toy_color_mask(data::ToyColorMask::kCorners, 1);
  const Tensor top = data::toy_color_mask(data::ToyColorMask::kTopMiddle, 1);
  double corner_mass = 0.0, rule_mass = 0.0, kept_mass = 0.0;
  for (std::size_t i = 0; i < e.gradients.rows(); ++i)
    for (std::size_t j = 0; j < 75; ++j) {
      if (m.bits.at(i, j) == 0.0) continue;
      const double g = std::abs(e.gradients.at(i, j));
      kept_mass += g;
      if (corners.at(0, j) == 1.0) corner_mass += g;
      if (corners.at(0, j) == 1.0 || top.at(0, j) == 1.0) rule_mass += g;
    }
  CHECK(rule_mass / kept_mass >= 0.9);
  CHECK(corner_mass / kept_mass >= 0.8);

  // One surviving channel per corner is 4/75 = 5.3%, the sparsity floor for
  // a model that weights the corners symmetrically.
  const double fraction = selected_fraction(m);
  CHECK(fraction >= 0.02);
  CHECK(fraction <= 0.08);
}

}  // TEST_SUITE
