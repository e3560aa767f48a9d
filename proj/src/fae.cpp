#include "igrad/fae.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "igrad/explain.hpp"
#include "igrad/model.hpp"

namespace igrad {

namespace {

void check_config(const data::TrainTest& split, const FaeConfig& cfg) {
  if (split.train.size() == 0) throw std::invalid_argument("fae: empty train split");
  if (split.test.size() == 0) throw std::invalid_argument("fae: empty test split");
  if (!(cfg.cutoff > 0.0) || !(cfg.cutoff <= 1.0))
    throw std::invalid_argument("fae: cutoff must be in (0, 1]");
  if (cfg.lambda1_schedule.empty())
    throw std::invalid_argument("fae: lambda1 schedule must not be empty");
  for (const double v : cfg.lambda1_schedule)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("fae: lambda1 schedule values must be finite and >= 0");
  if (cfg.max_iterations == 0) throw std::invalid_argument("fae: max_iterations must be >= 1");
  if (!(cfg.overlap_ceiling >= 0.0) || !(cfg.overlap_ceiling <= 1.0))
    throw std::invalid_argument("fae: overlap_ceiling must be in [0, 1]");
}

}  // namespace

FaeTrace run_fae(const data::TrainTest& split, const FaeConfig& cfg) {
  check_config(split, cfg);

  Tensor annotations = Tensor::zeros({split.train.size(), split.train.num_features()});
  double floor = cfg.accuracy_floor.value_or(0.0);
  FaeTrace trace;
  for (std::size_t i = 0; i < cfg.max_iterations; ++i) {
    RrrConfig run_cfg = cfg.base;
    run_cfg.lambda1 = cfg.lambda1_schedule[std::min(i, cfg.lambda1_schedule.size() - 1)];

    const TrainResult r = train(run_cfg, split.train.X, split.train.y, annotations);
    const Mask mask = mask_top(explain(r.params, split.train.X), cfg.cutoff);
    Tensor next = annotations;
    for (std::size_t q = 0; q < next.size(); ++q)
      if (mask.bits[q] != 0.0) next[q] = 1.0;

    FaeIteration it;
    it.annotations = annotations;
    it.params = r.params;
    it.lambda1 = run_cfg.lambda1;
    it.train_accuracy = r.history.back().train_accuracy;
    it.test_accuracy = accuracy(r.params, split.test.X, split.test.y);
    it.new_mask_fraction = 1.0 - explanation_overlap(next, annotations);
    trace.iterations.push_back(std::move(it));

    const FaeIteration& done = trace.iterations.back();
    if (i == 0 && !cfg.accuracy_floor) floor = done.test_accuracy - 0.05;
    if (done.test_accuracy < floor) break;
    if (done.new_mask_fraction < 1.0 - cfg.overlap_ceiling) break;
    annotations = std::move(next);
  }
  return trace;
}

double explanation_overlap(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("explanation overlap: mask shapes differ");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool in_a = a[i] != 0.0, in_b = b[i] != 0.0;
    inter += in_a && in_b;
    uni += in_a || in_b;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

Tensor ensemble_disagreement(const std::vector<Params>& models, const Tensor& X) {
  if (models.size() < 2)
    throw std::invalid_argument("ensemble disagreement: need at least two models");
  std::vector<std::vector<std::size_t>> labels;
  labels.reserve(models.size());
  for (const Params& p : models) labels.push_back(predict(p, X));

  const std::size_t n = X.rows(), m = models.size();
  const double pairs = static_cast<double>(m * (m - 1) / 2);
  Tensor scores = Tensor::zeros({n});
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t differing = 0;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b) differing += labels[a][i] != labels[b][i];
    scores[i] = static_cast<double>(differing) / pairs;
  }
  return scores;
}

}  // namespace igrad
