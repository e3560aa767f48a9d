#pragma once

// Training: the annotation-penalized loss, Adam, shuffled minibatches (with
// an option to pin every annotated example into every batch), and the
// penalty-weight balancing heuristic.
//
// The loss over a batch is
//   sum_n sum_k -y_nk log p_nk                      (right answers)
// + lambda1 * sum_n sum_d (A_nd * d/dx_nd sum_k log p_nk)^2   (right reasons)
// + lambda2 * sum_i theta_i^2                       (regular)
// with sums, not means, over the batch.

#include <cstdint>
#include <optional>
#include <vector>

#include "igrad/graph.hpp"
#include "igrad/model.hpp"
#include "igrad/tensor.hpp"

namespace igrad {

struct AdamConfig {
  double step_size = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct RrrConfig {
  double lambda1 = 1000.0;
  double lambda2 = 1e-4;
  std::size_t batch_size = 256;
  std::size_t epochs = 64;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool pin_annotated = false;
  // Stop early when train accuracy and total loss both move less than
  // stall_tolerance over stall_window epochs. A zero window disables this.
  double stall_tolerance = 1e-4;
  std::size_t stall_window = 5;

  friend bool operator==(const RrrConfig&, const RrrConfig&) = default;
};

// Throws std::invalid_argument on out-of-range fields.
void validate_config(const RrrConfig& config);

struct LossBreakdown {
  double right_answers = 0.0;
  double right_reasons = 0.0;  // lambda1-weighted
  double regular = 0.0;        // lambda2-weighted
  double total = 0.0;

  friend bool operator==(const LossBreakdown&, const LossBreakdown&) = default;
};

// Graph handles for one loss evaluation. Terms that are structurally zero
// (lambda of zero, or no annotations at all) carry invalid node ids and
// contribute nothing to the graph.
struct LossNodes {
  NodeId total;
  NodeId right_answers;
  NodeId right_reasons;
  NodeId regular;
  ForwardGraph forward;
};

// Extends an already-built forward pass with the three loss terms.
LossNodes build_rrr_loss(Graph& g, const ForwardGraph& f, const Tensor& y, const Tensor& A,
                         double lambda1, double lambda2);

LossNodes rrr_loss_nodes(Graph& g, const Params& p, const Tensor& X, const Tensor& y,
                         const Tensor& A, double lambda1, double lambda2);

LossBreakdown loss_values(const Graph& g, const LossNodes& nodes);

// Value-level evaluation over the whole batch, chunked to bound graph size.
LossBreakdown rrr_loss(const Params& p, const Tensor& X, const Tensor& y, const Tensor& A,
                       double lambda1, double lambda2);

struct AdamState {
  std::vector<Tensor> first_moment;   // ordered weights0, bias0, weights1, ...
  std::vector<Tensor> second_moment;
  std::size_t step = 0;
};

AdamState init_adam(const Params& p);

// Standard bias-corrected Adam update; gradients follow the AdamState tensor
// order. Throws on shape mismatch or non-finite gradient components.
void adam_step(AdamState& state, Params& p, const std::vector<Tensor>& gradients,
               const AdamConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 0-based index of the completed epoch
  LossBreakdown loss;     // over the full training set at end of epoch
  double train_accuracy = 0.0;
  std::optional<double> heldout_accuracy;
};
using TrainHistory = std::vector<EpochRecord>;

struct EvalSplit {
  Tensor X;
  Tensor y;
};

struct TrainResult {
  Params params;
  TrainHistory history;
};

// Runs `epochs` passes of seeded shuffled minibatches (the final short batch
// included). With pin_annotated, every batch is extended by all rows whose
// annotation row is nonzero. Two runs with identical arguments produce
// bit-identical results. `start` overrides the seeded initialization.
TrainResult train(const RrrConfig& config, const Tensor& X, const Tensor& y, const Tensor& A,
                  const std::optional<EvalSplit>& heldout = std::nullopt,
                  const std::optional<Params>& start = std::nullopt);

// Penalty-weight selection: train once per grid value and compare the
// magnitudes of the right-reasons and right-answers terms. Picks the smallest
// grid value whose converged ratio lies in [0.1, 10]; if none does, falls
// back to the ratio nearest 1 (flagged).
struct Lambda1Row {
  double lambda1 = 0.0;
  double initial_ratio = 0.0;  // at freshly initialized parameters
  double final_ratio = 0.0;    // at trained parameters
  double train_accuracy = 0.0;
  LossBreakdown final_loss;
};

struct Lambda1Choice {
  double lambda1 = 0.0;
  bool fallback = false;  // no grid value reached the target band
  std::vector<Lambda1Row> rows;
};

Lambda1Choice select_lambda1(const Tensor& X, const Tensor& y, const Tensor& A,
                             const std::vector<double>& grid, const RrrConfig& config);

}  // namespace igrad
