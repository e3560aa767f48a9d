#pragma once

// Multilayer perceptron classifier built on the operation graph: two relu
// hidden layers of 50 and 30 units between the input and a log-softmax output
// head. Forward passes hand back graph nodes so losses can keep
// differentiating through them, including through the per-example input
// gradients of the summed log-probabilities.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "igrad/graph.hpp"
#include "igrad/tensor.hpp"

namespace igrad {

inline constexpr std::array<std::size_t, 2> kHiddenSizes = {50, 30};

struct LayerParams {
  Tensor weights;  // [fan_in, fan_out]
  Tensor bias;     // [fan_out]

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct Params {
  std::vector<LayerParams> layers;

  std::size_t input_dim() const { return layers.front().weights.shape()[0]; }
  std::size_t output_dim() const { return layers.back().weights.shape()[1]; }
  std::vector<std::size_t> layer_sizes() const;
  bool all_finite() const;

  friend bool operator==(const Params&, const Params&) = default;
};

// Seed-deterministic initialization: weights uniform in ±sqrt(3)/sqrt(fan_in)
// (zero mean, standard deviation 1/sqrt(fan_in)), biases zero.
// Requires input_dim >= 1 and output_dim >= 2.
Params init_params(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed);

// Graph handles produced by one forward pass.
struct ForwardGraph {
  NodeId input;                                  // [n, d] variable
  std::vector<std::pair<NodeId, NodeId>> layers; // (weights, bias) variables
  NodeId logits;                                 // [n, k]
  NodeId logprobs;                               // [n, k]
  NodeId probs;                                  // [n, k], exp(logprobs)

  std::vector<NodeId> param_nodes() const;
};

ForwardGraph build_forward(Graph& g, const Params& p, const Tensor& X);

// Same network over caller-supplied parameter leaves ordered as
// weights0, bias0, weights1, bias1, ...; shapes are read from the graph.
ForwardGraph build_forward(Graph& g, std::span<const NodeId> param_nodes, const Tensor& X);

// Plain-value forward pass.
struct ForwardResult {
  Tensor probs;
  Tensor logprobs;
};
ForwardResult forward(const Params& p, const Tensor& X);

// Node holding d/dX of sum over examples and classes of log probs; row n is
// the gradient of example n's summed class log-probabilities. Recorded in the
// graph, so it can appear inside a differentiable loss.
NodeId input_logprob_gradients_node(Graph& g, const ForwardGraph& f);
Tensor input_logprob_gradients(const Params& p, const Tensor& X);

// Argmax class per row; ties resolve to the lowest class index.
std::vector<std::size_t> predict(const Params& p, const Tensor& X);
std::vector<std::size_t> argmax_rows(const Tensor& probs);

double accuracy(const Params& p, const Tensor& X, const Tensor& y_onehot);

// Content hash over layer shapes and raw parameter bits.
std::uint64_t params_fingerprint(const Params& p);

}  // namespace igrad
