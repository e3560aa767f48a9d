#include "igrad/surrogate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "igrad/explain.hpp"
#include "igrad/rng.hpp"

namespace igrad {

namespace {

Tensor as_row(const Tensor& x) {
  if (x.rank() == 1) return Tensor({1, x.size()}, {x.data().begin(), x.data().end()});
  if (x.rank() == 2 && x.rows() == 1) return x;
  throw std::invalid_argument("perturb: instance must be a single row");
}

void check_scheme(const PerturbationScheme& s, std::size_t d) {
  if (s.num_samples < 1) throw std::invalid_argument("perturb: num_samples must be >= 1");
  if (s.kind == SchemeKind::kBlockMask) {
    if (s.block_size == 0) throw std::invalid_argument("perturb: block_size must be >= 1");
    if (s.grid_h * s.grid_w * s.grid_channels != d)
      throw std::invalid_argument("perturb: grid dimensions do not cover the instance");
  }
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

struct RidgeFit {
  Eigen::VectorXd beta;  // [m + 1], intercept first
  bool min_norm = false;
};

// Minimizes sum_s w_s (y_s - b0 - z_s . b)^2 + |b|^2 with a free intercept.
RidgeFit ridge_solve(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                     const Eigen::VectorXd& w) {
  const Eigen::Index s = Z.rows(), m = Z.cols();
  Eigen::MatrixXd design(s, m + 1);
  design.col(0).setOnes();
  design.rightCols(m) = Z;

  const Eigen::MatrixXd wd = w.asDiagonal() * design;
  Eigen::MatrixXd normal = design.transpose() * wd;
  for (Eigen::Index j = 1; j <= m; ++j) normal(j, j) += 1.0;
  const Eigen::VectorXd rhs = design.transpose() * (w.asDiagonal() * y);

  RidgeFit fit;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  const Eigen::VectorXd pivots = ldlt.vectorD();
  const bool singular =
      pivots.minCoeff() <= 1e-12 * std::max(1.0, pivots.maxCoeff());
  if (ldlt.info() == Eigen::Success && !singular) {
    fit.beta = ldlt.solve(rhs);
    if (fit.beta.allFinite() && (normal * fit.beta - rhs).norm() <= 1e-8 * (1.0 + rhs.norm()))
      return fit;
  }
  fit.beta = normal.completeOrthogonalDecomposition().solve(rhs);
  fit.min_norm = true;
  return fit;
}

}  // namespace

PerturbationScheme scheme_for(const data::DatasetMeta& meta, std::size_t num_samples) {
  PerturbationScheme s;
  s.num_samples = num_samples;
  switch (meta.kind) {
    case data::Kind::kTabular:
      break;
    case data::Kind::kText:
      s.nonzero_units_only = true;
      break;
    case data::Kind::kGrid:
      s.kind = SchemeKind::kBlockMask;
      s.grid_h = meta.grid_h;
      s.grid_w = meta.grid_w;
      s.grid_channels = meta.grid_channels;
      break;
  }
  return s;
}

std::vector<std::vector<std::size_t>> scheme_units(const Tensor& x,
                                                   const PerturbationScheme& scheme) {
  const Tensor row = as_row(x);
  const std::size_t d = row.cols();
  check_scheme(scheme, d);

  std::vector<std::vector<std::size_t>> units;
  if (scheme.kind == SchemeKind::kFeatureMask) {
    for (std::size_t j = 0; j < d; ++j) {
      if (scheme.nonzero_units_only && row.at(0, j) == 0.0) continue;
      units.push_back({j});
    }
    return units;
  }

  const std::size_t b = scheme.block_size;
  const std::size_t bh = (scheme.grid_h + b - 1) / b, bw = (scheme.grid_w + b - 1) / b;
  for (std::size_t br = 0; br < bh; ++br)
    for (std::size_t bc = 0; bc < bw; ++bc) {
      std::vector<std::size_t> cols;
      for (std::size_t r = br * b; r < std::min(scheme.grid_h, (br + 1) * b); ++r)
        for (std::size_t c = bc * b; c < std::min(scheme.grid_w, (bc + 1) * b); ++c)
          for (std::size_t ch = 0; ch < scheme.grid_channels; ++ch)
            cols.push_back((r * scheme.grid_w + c) * scheme.grid_channels + ch);
      units.push_back(std::move(cols));
    }
  return units;
}

PerturbationSet perturb(const Tensor& x, const PerturbationScheme& scheme, std::uint64_t seed) {
  const Tensor row = as_row(x);
  const std::size_t d = row.cols(), s = scheme.num_samples;

  PerturbationSet set;
  set.units = scheme_units(row, scheme);
  const std::size_t m = set.units.size();
  set.kernel_width = scheme.kernel_width > 0.0
                         ? scheme.kernel_width
                         : 0.75 * std::sqrt(static_cast<double>(m));

  set.samples = Tensor::zeros({s, d});
  set.codes = Tensor::zeros({s, m});
  set.weights = Tensor::zeros({s});
  Rng rng(seed);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t j = 0; j < d; ++j) set.samples.at(i, j) = row.at(0, j);
    std::size_t masked = 0;
    for (std::size_t u = 0; u < m; ++u) {
      const bool present = i == 0 || rng.integer(2) == 1;
      set.codes.at(i, u) = present ? 1.0 : 0.0;
      if (present) continue;
      ++masked;
      for (const std::size_t col : set.units[u]) set.samples.at(i, col) = 0.0;
    }
    // Squared Euclidean distance between binary presence codes is the count
    // of masked units.
    const double dist2 = static_cast<double>(masked);
    set.weights[i] = m == 0 ? 1.0 : std::exp(-dist2 / (set.kernel_width * set.kernel_width));
  }
  return set;
}

LocalExplanation fit_local(const Tensor& codes, const Tensor& outputs, const Tensor& weights,
                           std::size_t k) {
  if (codes.rank() != 2) throw std::invalid_argument("fit: presence codes must be rank 2");
  const std::size_t s = codes.rows(), m = codes.cols();
  if (outputs.size() != s || weights.size() != s)
    throw std::invalid_argument("fit: outputs and weights must have one entry per sample");
  if (s < k + 1) throw std::invalid_argument("fit: need more samples than selected features");
  for (const double w : weights.data())
    if (!(w >= 0.0)) throw std::invalid_argument("fit: sample weights must be >= 0");

  Eigen::MatrixXd Z(s, m);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < m; ++j) Z(i, j) = codes.at(i, j);
  Eigen::VectorXd y(s), w(s);
  for (std::size_t i = 0; i < s; ++i) {
    y(i) = outputs[i];
    w(i) = weights[i];
  }

  LocalExplanation out;
  RidgeFit fit = ridge_solve(Z, y, w);
  out.min_norm_fallback = fit.min_norm;

  std::vector<std::size_t> picked(m);
  std::iota(picked.begin(), picked.end(), 0);
  if (k < m) {
    std::sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
      const double ma = std::abs(fit.beta(1 + a)), mb = std::abs(fit.beta(1 + b));
      return ma != mb ? ma > mb : a < b;
    });
    picked.resize(k);
    std::sort(picked.begin(), picked.end());

    Eigen::MatrixXd Zk(s, k);
    for (std::size_t j = 0; j < k; ++j) Zk.col(j) = Z.col(picked[j]);
    RidgeFit refit = ridge_solve(Zk, y, w);
    out.min_norm_fallback = out.min_norm_fallback || refit.min_norm;
    fit = std::move(refit);
  }

  out.intercept = fit.beta(0);
  for (std::size_t j = 0; j < picked.size(); ++j)
    out.features.emplace_back(picked[j], fit.beta(1 + j));
  std::sort(out.features.begin(), out.features.end(), [](const auto& a, const auto& b) {
    const double ma = std::abs(a.second), mb = std::abs(b.second);
    return ma != mb ? ma > mb : a.first < b.first;
  });

  double wsum = 0.0, wmean = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    wsum += w(i);
    wmean += w(i) * y(i);
  }
  wmean = wsum > 0.0 ? wmean / wsum : 0.0;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    double pred = out.intercept;
    for (const auto& [unit, coef] : out.features) pred += coef * Z(i, unit);
    ss_res += w(i) * (y(i) - pred) * (y(i) - pred);
    ss_tot += w(i) * (y(i) - wmean) * (y(i) - wmean);
  }
  out.fit_quality = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res > 0.0 ? 0.0 : 1.0);
  return out;
}

LocalExplanation explain_instance(const ProbFn& model, const Tensor& x,
                                  const PerturbationScheme& scheme, std::size_t k,
                                  std::uint64_t seed) {
  const PerturbationSet set = perturb(x, scheme, seed);
  const Tensor probs = model(set.samples);
  if (probs.rank() != 2 || probs.rows() != set.samples.rows())
    throw std::invalid_argument("explain: model must return one probability row per sample");

  const std::size_t cls = argmax_rows(probs)[0];
  Tensor outputs({set.samples.rows()});
  for (std::size_t i = 0; i < outputs.size(); ++i) outputs[i] = probs.at(i, cls);
  return fit_local(set.codes, outputs, set.weights, k);
}

BenchResult bench(const Params& p, const Tensor& X, const PerturbationScheme& scheme,
                  std::size_t k, std::size_t repetitions) {
  if (repetitions < 3) throw std::invalid_argument("bench: need at least 3 repetitions");
  if (X.rank() != 2 || X.rows() == 0)
    throw std::invalid_argument("bench: X must be a nonempty rank-2 tensor");

  const ProbFn model = [&p](const Tensor& batch) { return forward(p, batch).probs; };
  const std::size_t n = X.rows(), d = X.cols();
  std::vector<double> sur, grad, fwd;
  const auto timed = [](auto&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(t1 - t0).count();
  };

  for (std::size_t rep = 0; rep < repetitions; ++rep) {
    for (std::size_t i = 0; i < n; ++i) {
      Tensor row({1, d});
      for (std::size_t j = 0; j < d; ++j) row.at(0, j) = X.at(i, j);
      const std::uint64_t seed = mix_seed(17, rep * n + i);
      sur.push_back(timed([&] { explain_instance(model, row, scheme, k, seed); }));
      grad.push_back(timed([&] { explain(p, row); }));
      fwd.push_back(timed([&] { forward(p, row); }));
    }
  }

  BenchResult r;
  r.surrogate_mean_s = mean_of(sur);
  r.surrogate_std_s = std_of(sur, r.surrogate_mean_s);
  r.gradient_mean_s = mean_of(grad);
  r.gradient_std_s = std_of(grad, r.gradient_mean_s);
  r.forward_mean_s = mean_of(fwd);
  r.forward_std_s = std_of(fwd, r.forward_mean_s);
  r.ratio = r.surrogate_mean_s / r.gradient_mean_s;
  return r;
}

}  // namespace igrad
