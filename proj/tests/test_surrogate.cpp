#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "igrad/explain.hpp"
#include "igrad/surrogate.hpp"
#include "igrad/training.hpp"
#include "test_util.hpp"

using namespace igrad;

namespace {

// Straight-line weighted ridge: builds the normal equations with a free
// intercept and solves by Gaussian elimination with partial pivoting.
std::vector<double> ridge_oracle(const Tensor& codes, const Tensor& y, const Tensor& w) {
  const std::size_t s = codes.rows(), m = codes.cols(), n = m + 1;
  std::vector<std::vector<double>> a(n, std::vector<double>(n + 1, 0.0));
  const auto z = [&](std::size_t i, std::size_t j) {
    return j == 0 ? 1.0 : codes.at(i, j - 1);
  };
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < s; ++i) acc += w[i] * z(i, r) * z(i, c);
      if (r == c && r > 0) acc += 1.0;
      a[r][c] = acc;
    }
    double rhs = 0.0;
    for (std::size_t i = 0; i < s; ++i) rhs += w[i] * z(i, r) * y[i];
    a[r][n] = rhs;
  }
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    std::swap(a[col], a[pivot]);
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (std::size_t c = col; c <= n; ++c) a[r][c] -= f * a[col][c];
    }
  }
  std::vector<double> beta(n);
  for (std::size_t r = 0; r < n; ++r) beta[r] = a[r][n] / a[r][r];
  return beta;
}

Tensor random_codes(Rng& rng, std::size_t s, std::size_t m) {
  Tensor codes = Tensor::zeros({s, m});
  for (std::size_t i = 1; i < s; ++i)
    for (std::size_t j = 0; j < m; ++j) codes.at(i, j) = rng.integer(2) ? 1.0 : 0.0;
  for (std::size_t j = 0; j < m; ++j) codes.at(0, j) = 1.0;
  return codes;
}

double coef_of(const LocalExplanation& e, std::size_t unit) {
  for (const auto& [u, c] : e.features)
    if (u == unit) return c;
  return 0.0;
}

bool same_explanation(const LocalExplanation& a, const LocalExplanation& b) {
  return a.features == b.features && a.intercept == b.intercept &&
         a.fit_quality == b.fit_quality && a.min_norm_fallback == b.min_norm_fallback;
}

}  // namespace

TEST_SUITE("surrogate") {

TEST_CASE("unit layouts follow the dataset kind") {
  data::DatasetMeta tab;
  tab.kind = data::Kind::kTabular;
  const PerturbationScheme st = scheme_for(tab, 100);
  Tensor x({4}, {0.0, 1.0, 0.0, 2.0});
  const auto tab_units = scheme_units(x, st);
  REQUIRE(tab_units.size() == 4);  // every column, zeros included
  CHECK(tab_units[0] == std::vector<std::size_t>{0});
  CHECK(tab_units[3] == std::vector<std::size_t>{3});

  data::DatasetMeta text;
  text.kind = data::Kind::kText;
  const auto text_units = scheme_units(x, scheme_for(text, 100));
  REQUIRE(text_units.size() == 2);  // only the nonzero columns
  CHECK(text_units[0] == std::vector<std::size_t>{1});
  CHECK(text_units[1] == std::vector<std::size_t>{3});

  data::DatasetMeta mnist;
  mnist.kind = data::Kind::kGrid;
  mnist.grid_h = 28;
  mnist.grid_w = 28;
  mnist.grid_channels = 1;
  const auto blocks = scheme_units(Tensor::zeros({784}), scheme_for(mnist, 100));
  REQUIRE(blocks.size() == 49);
  for (const auto& b : blocks) CHECK(b.size() == 16);
  // Block row 1, column 0 starts at pixel (4, 0).
  CHECK(blocks[7][0] == 4 * 28);

  data::DatasetMeta toy;
  toy.kind = data::Kind::kGrid;
  toy.grid_h = 5;
  toy.grid_w = 5;
  toy.grid_channels = 3;
  const auto edge = scheme_units(Tensor::zeros({75}), scheme_for(toy, 100));
  REQUIRE(edge.size() == 4);  // 2x2 blocks, ragged at the right and bottom
  CHECK(edge[0].size() == 48);
  CHECK(edge[1].size() == 12);
  CHECK(edge[2].size() == 12);
  CHECK(edge[3].size() == 3);

  PerturbationScheme bad = scheme_for(mnist, 100);
  bad.grid_w = 27;
  CHECK_THROWS_AS(scheme_units(Tensor::zeros({784}), bad), std::invalid_argument);
}

TEST_CASE("perturbation keeps the original and masks whole units") {
  data::DatasetMeta toy;
  toy.kind = data::Kind::kGrid;
  toy.grid_h = 5;
  toy.grid_w = 5;
  toy.grid_channels = 3;
  PerturbationScheme scheme = scheme_for(toy, 400);

  Rng rng(31);
  const Tensor x = testutil::rand_tensor(rng, {75});
  const PerturbationSet set = perturb(x, scheme, 7);

  REQUIRE(set.samples.rows() == 400);
  REQUIRE(set.codes.cols() == 4);
  CHECK(set.kernel_width == doctest::Approx(0.75 * 2.0));

  for (std::size_t j = 0; j < 75; ++j) CHECK(set.samples.at(0, j) == x[j]);
  for (std::size_t u = 0; u < 4; ++u) CHECK(set.codes.at(0, u) == 1.0);
  CHECK(set.weights[0] == 1.0);

  bool saw_all_masked = false;
  for (std::size_t i = 0; i < 400; ++i) {
    std::size_t masked = 0;
    for (std::size_t u = 0; u < 4; ++u) {
      const bool present = set.codes.at(i, u) == 1.0;
      masked += !present;
      for (const std::size_t col : set.units[u])
        CHECK(set.samples.at(i, col) == (present ? x[col] : 0.0));
    }
    // Binary codes make the squared sample distance the masked-unit count.
    const double d2 = static_cast<double>(masked);
    CHECK(set.weights[i] ==
          doctest::Approx(std::exp(-d2 / (set.kernel_width * set.kernel_width)))
              .epsilon(1e-12));
    if (masked == 4) {
      saw_all_masked = true;
      for (std::size_t j = 0; j < 75; ++j) CHECK(set.samples.at(i, j) == 0.0);
    }
  }
  CHECK(saw_all_masked);

  const PerturbationSet again = perturb(x, scheme, 7);
  CHECK(again.samples == set.samples);
  CHECK(again.codes == set.codes);
  CHECK(again.weights == set.weights);
  CHECK(perturb(x, scheme, 8).codes != set.codes);
}

TEST_CASE("the local fit solves weighted ridge regression exactly") {
  Rng rng(13);
  const std::size_t s = 80, m = 5;
  const Tensor codes = random_codes(rng, s, m);
  Tensor y({s}), uniform({s}), skewed({s});
  for (std::size_t i = 0; i < s; ++i) {
    y[i] = rng.normal();
    uniform[i] = 1.0;
    skewed[i] = 0.25 + rng.uniform();
  }

  for (const Tensor& w : {uniform, skewed}) {
    const std::vector<double> beta = ridge_oracle(codes, y, w);
    const LocalExplanation e = fit_local(codes, y, w, m);
    CHECK(!e.min_norm_fallback);
    CHECK(e.intercept == doctest::Approx(beta[0]).epsilon(1e-9));
    for (std::size_t j = 0; j < m; ++j)
      CHECK(coef_of(e, j) == doctest::Approx(beta[j + 1]).epsilon(1e-9));
  }
}

TEST_CASE("a noiseless linear target is recovered up to ridge shrinkage") {
  Rng rng(29);
  const std::size_t s = 2000, m = 5;
  const Tensor codes = random_codes(rng, s, m);
  const std::vector<double> truth = {1.5, -2.0, 0.5, 0.0, 3.0};
  Tensor y({s}), w({s});
  for (std::size_t i = 0; i < s; ++i) {
    double v = 2.0;
    for (std::size_t j = 0; j < m; ++j) v += truth[j] * codes.at(i, j);
    y[i] = v;
    w[i] = 1.0;
  }

  const LocalExplanation e = fit_local(codes, y, w, m);
  CHECK(e.intercept == doctest::Approx(2.0).epsilon(0.01));
  for (std::size_t j = 0; j < m; ++j)
    CHECK(coef_of(e, j) == doctest::Approx(truth[j]).epsilon(0.01).scale(1.0));
  CHECK(e.fit_quality >= 0.999);

  // The same system solved by the independent oracle matches to 1e-9; the
  // unit penalty keeps either fit from reproducing the generator exactly.
  const std::vector<double> beta = ridge_oracle(codes, y, w);
  CHECK(e.intercept == doctest::Approx(beta[0]).epsilon(1e-9));
  for (std::size_t j = 0; j < m; ++j)
    CHECK(coef_of(e, j) == doctest::Approx(beta[j + 1]).epsilon(1e-9));
}

TEST_CASE("degenerate fits stay well defined") {
  Rng rng(41);
  const Tensor codes = random_codes(rng, 20, 3);

  Tensor constant({20}), w({20});
  for (std::size_t i = 0; i < 20; ++i) {
    constant[i] = 0.75;
    w[i] = 1.0;
  }
  const LocalExplanation e = fit_local(codes, constant, w, 3);
  CHECK(e.intercept == doctest::Approx(0.75).epsilon(1e-12));
  for (const auto& [unit, coef] : e.features) CHECK(std::abs(coef) <= 1e-9);
  CHECK(e.fit_quality == 1.0);

  const Tensor zero_w = Tensor::zeros({20});
  const LocalExplanation fallback = fit_local(codes, constant, zero_w, 3);
  CHECK(fallback.min_norm_fallback);
  CHECK(std::isfinite(fallback.intercept));

  CHECK_THROWS_AS(fit_local(codes, constant, w, 20), std::invalid_argument);
  Tensor negative = w;
  negative[0] = -1.0;
  CHECK_THROWS_AS(fit_local(codes, constant, negative, 3), std::invalid_argument);
}

TEST_CASE("selection keeps the largest coefficients and refits") {
  Rng rng(59);
  const std::size_t s = 600, m = 6;
  const Tensor codes = random_codes(rng, s, m);
  const std::vector<double> truth = {4.0, 0.01, -3.0, 0.02, 2.0, -0.03};
  Tensor y({s}), w({s});
  for (std::size_t i = 0; i < s; ++i) {
    double v = 1.0;
    for (std::size_t j = 0; j < m; ++j) v += truth[j] * codes.at(i, j);
    y[i] = v;
    w[i] = 1.0;
  }

  const LocalExplanation top3 = fit_local(codes, y, w, 3);
  REQUIRE(top3.features.size() == 3);
  std::set<std::size_t> picked;
  for (const auto& [unit, coef] : top3.features) picked.insert(unit);
  CHECK(picked == std::set<std::size_t>{0, 2, 4});
  CHECK(top3.features[0].first == 0);  // ordered by magnitude

  const LocalExplanation all = fit_local(codes, y, w, m);
  CHECK(all.features.size() == m);
  const LocalExplanation clamped = fit_local(codes, y, w, m + 10);
  CHECK(same_explanation(all, clamped));
}

TEST_CASE("instance explanations are deterministic and find the corner rule") {
  const auto ds = data::gen_toy_color(5000, 0);
  RrrConfig cfg;
  cfg.seed = 0;
  const TrainResult r = train(cfg, ds.X, ds.y, ds.A);
  const ProbFn model = [&](const Tensor& batch) { return forward(r.params, batch).probs; };

  PerturbationScheme scheme;  // per-feature masking of all 75 columns
  scheme.num_samples = 2000;

  const Tensor corners = data::toy_color_mask(data::ToyColorMask::kCorners, 1);
  const Tensor top = data::toy_color_mask(data::ToyColorMask::kTopMiddle, 1);

  // Rule-satisfying generated images: the four corner units of the shared
  // color lead the ranking with positive weights.
  const auto probe = data::gen_toy_color(4, 400);
  for (const std::size_t i : {0u, 2u}) {
    Tensor row({1, 75});
    for (std::size_t j = 0; j < 75; ++j) row.at(0, j) = probe.X.at(i, j);
    const LocalExplanation e = explain_instance(model, row, scheme, 6, 21 + i);
    REQUIRE(e.features.size() == 6);
    for (std::size_t rank = 0; rank < 4; ++rank) {
      const auto& [unit, coef] = e.features[rank];
      CHECK(corners.at(0, unit) == 1.0);
      CHECK(row.at(0, unit) == 1.0);
      CHECK(coef > 0.0);
    }
    CHECK(same_explanation(e, explain_instance(model, row, scheme, 6, 21 + i)));
  }

  // Yellow corners light two channels per corner pixel, eight corner units
  // in all, and the whole top six lands inside them.
  const double palette[4][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}};
  Rng crng(9);
  for (int variant = 0; variant < 2; ++variant) {
    Tensor row = Tensor::zeros({1, 75});
    for (std::size_t px = 0; px < 25; ++px) {
      const auto& color = palette[crng.integer(4)];
      for (std::size_t ch = 0; ch < 3; ++ch) row.at(0, px * 3 + ch) = color[ch];
    }
    for (std::size_t j = 0; j < 75; ++j) {
      if (corners.at(0, j) == 1.0) row.at(0, j) = palette[3][j % 3];
      if (top.at(0, j) == 1.0) row.at(0, j) = palette[(j / 3 - 1) % 3][j % 3];
    }
    CHECK(predict(r.params, row)[0] == 0);
    const LocalExplanation e = explain_instance(model, row, scheme, 6, 100 + variant);
    REQUIRE(e.features.size() == 6);
    for (const auto& [unit, coef] : e.features) {
      CHECK(corners.at(0, unit) == 1.0);
      CHECK(coef > 0.0);
    }
  }
}

TEST_CASE("gradient explanations resample identically; surrogates may not") {
  const std::size_t d = 2000;
  const Params p = init_params(d, 2, 3);
  Rng rng(71);
  Tensor x({d});
  for (std::size_t j = 0; j < d; ++j) x[j] = 0.1 + rng.uniform();

  data::DatasetMeta meta;
  meta.kind = data::Kind::kText;
  PerturbationScheme scheme = scheme_for(meta, 500);
  const ProbFn model = [&](const Tensor& batch) { return forward(p, batch).probs; };

  const std::size_t k = 6;
  Tensor row({1, d});
  for (std::size_t j = 0; j < d; ++j) row.at(0, j) = x[j];

  const ExplanationSet g1 = explain(p, row), g2 = explain(p, row);
  CHECK(g1.gradients == g2.gradients);  // reseeding cannot touch this path

  const auto top_grad = [&](const ExplanationSet& g) {
    std::vector<std::size_t> idx(d);
    for (std::size_t j = 0; j < d; ++j) idx[j] = j;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      const double ma = std::abs(g.gradients.at(0, a)), mb = std::abs(g.gradients.at(0, b));
      return ma != mb ? ma > mb : a < b;
    });
    return std::set<std::size_t>(idx.begin(), idx.begin() + k);
  };
  CHECK(top_grad(g1) == top_grad(g2));

  std::vector<std::set<std::size_t>> tops;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const LocalExplanation e = explain_instance(model, row, scheme, k, seed);
    std::set<std::size_t> top;
    for (const auto& [unit, coef] : e.features) top.insert(unit);
    tops.push_back(std::move(top));
  }
  double overlap_sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < tops.size(); ++a)
    for (std::size_t b = a + 1; b < tops.size(); ++b) {
      std::vector<std::size_t> inter;
      std::set_intersection(tops[a].begin(), tops[a].end(), tops[b].begin(), tops[b].end(),
                            std::back_inserter(inter));
      overlap_sum +=
          static_cast<double>(inter.size()) / static_cast<double>(2 * k - inter.size());
      ++pairs;
    }
  const double mean_overlap = overlap_sum / static_cast<double>(pairs);
  MESSAGE("surrogate top-", k, " resampling overlap: ", mean_overlap);
  CHECK(mean_overlap <= 1.0);
  CHECK(mean_overlap > 0.0);
}

TEST_CASE("timing runs cover all three methods") {
  Rng rng(83);
  const Tensor X = testutil::rand_tensor(rng, {2, 12});
  const Params p = init_params(12, 3, 5);
  PerturbationScheme scheme;
  scheme.num_samples = 64;

  const BenchResult b = bench(p, X, scheme, 4, 3);
  CHECK(b.surrogate_mean_s > 0.0);
  CHECK(b.gradient_mean_s > 0.0);
  CHECK(b.forward_mean_s > 0.0);
  CHECK(b.ratio == doctest::Approx(b.surrogate_mean_s / b.gradient_mean_s));
  CHECK(b.surrogate_std_s >= 0.0);

  CHECK_THROWS_AS(bench(p, X, scheme, 4, 2), std::invalid_argument);
}

}  // TEST_SUITE
