#pragma once

// Find-another-explanation loop: train, mask the largest input-gradient
// components, fold the mask into the annotations, and retrain until the
// model runs out of distinct decision rules.

#include <cstddef>
#include <optional>
#include <vector>

#include "igrad/datasets.hpp"
#include "igrad/tensor.hpp"
#include "igrad/training.hpp"

namespace igrad {

struct FaeConfig {
  double cutoff = 0.67;
  // lambda1 for iteration i is schedule[min(i, size - 1)]; iteration 0 trains
  // with empty annotations, so its entry only matters for bookkeeping.
  std::vector<double> lambda1_schedule = {1000.0};
  std::size_t max_iterations = 3;
  // Stop once test accuracy drops below the floor. Unset means 5 points
  // below the iteration-0 test accuracy.
  std::optional<double> accuracy_floor;
  // Stop once the accumulated mask grows by less than 1 - ceiling.
  double overlap_ceiling = 0.98;
  RrrConfig base;  // lambda1 is overridden by the schedule
};

struct FaeIteration {
  Tensor annotations;  // A_i the iteration trained against
  Params params;       // theta_i
  double lambda1 = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  // 1 - overlap(A_{i+1}, A_i) where A_{i+1} folds in this model's mask.
  double new_mask_fraction = 0.0;
};

struct FaeTrace {
  std::vector<FaeIteration> iterations;
};

// Runs A_0 = 0; theta_i = argmin L(theta, X, y, A_i); A_{i+1} = M_c union A_i
// over the train split, measuring accuracy on the test split. Stops at
// max_iterations, below the accuracy floor, or when the mask stops growing.
// Iteration 0 is bit-identical to train() with all-zero annotations.
FaeTrace run_fae(const data::TrainTest& split, const FaeConfig& config);

// Jaccard overlap of the set bits of two equal-shape binary masks; two empty
// masks overlap fully.
double explanation_overlap(const Tensor& a, const Tensor& b);

// Per-example fraction of model pairs whose predicted labels differ.
// Requires at least two models; returns a rank-1 tensor of length X rows.
Tensor ensemble_disagreement(const std::vector<Params>& models, const Tensor& X);

}  // namespace igrad
