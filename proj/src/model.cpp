#include "igrad/model.hpp"

#include <cmath>
#include <stdexcept>

#include "igrad/fingerprint.hpp"
#include "igrad/rng.hpp"

namespace igrad {

std::vector<std::size_t> Params::layer_sizes() const {
  std::vector<std::size_t> sizes;
  sizes.push_back(input_dim());
  for (const LayerParams& l : layers) sizes.push_back(l.weights.shape()[1]);
  return sizes;
}

bool Params::all_finite() const {
  for (const LayerParams& l : layers)
    if (!l.weights.all_finite() || !l.bias.all_finite()) return false;
  return true;
}

Params init_params(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed) {
  if (input_dim < 1) throw std::invalid_argument("init_params: input_dim must be at least 1");
  if (output_dim < 2) throw std::invalid_argument("init_params: output_dim must be at least 2");
  std::vector<std::size_t> sizes;
  sizes.push_back(input_dim);
  sizes.insert(sizes.end(), kHiddenSizes.begin(), kHiddenSizes.end());
  sizes.push_back(output_dim);

  Rng rng(seed);
  Params p;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const std::size_t fan_in = sizes[i], fan_out = sizes[i + 1];
    const double bound = std::sqrt(3.0) / std::sqrt(static_cast<double>(fan_in));
    LayerParams layer{Tensor({fan_in, fan_out}), Tensor({fan_out})};
    for (std::size_t j = 0; j < layer.weights.size(); ++j)
      layer.weights[j] = rng.uniform(-bound, bound);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::vector<NodeId> ForwardGraph::param_nodes() const {
  std::vector<NodeId> out;
  for (const auto& [w, b] : layers) {
    out.push_back(w);
    out.push_back(b);
  }
  return out;
}

namespace {

ForwardGraph assemble_forward(Graph& g, NodeId input, std::vector<std::pair<NodeId, NodeId>> layers,
                              std::size_t n) {
  ForwardGraph f;
  f.input = input;
  f.layers = std::move(layers);
  NodeId h = f.input;
  for (std::size_t i = 0; i < f.layers.size(); ++i) {
    const auto [w, b] = f.layers[i];
    NodeId z = g.add(g.matmul(h, w), g.broadcast_rows(b, n));
    h = (i + 1 < f.layers.size()) ? g.relu(z) : z;
  }
  f.logits = h;
  f.logprobs = g.log_softmax(f.logits);
  f.probs = g.exp(f.logprobs);
  return f;
}

void check_forward_input(const Tensor& X, std::size_t expected_features) {
  if (X.rank() != 2)
    throw std::invalid_argument("forward: input must be rank 2, got " + shape_str(X.shape()));
  if (X.shape()[1] != expected_features)
    throw std::invalid_argument("forward: input has " + std::to_string(X.shape()[1]) +
                                " features, model expects " + std::to_string(expected_features));
}

}  // namespace

ForwardGraph build_forward(Graph& g, const Params& p, const Tensor& X) {
  check_forward_input(X, p.input_dim());
  std::vector<std::pair<NodeId, NodeId>> layers;
  for (const LayerParams& l : p.layers)
    layers.emplace_back(g.variable(l.weights), g.variable(l.bias));
  return assemble_forward(g, g.variable(X), std::move(layers), X.shape()[0]);
}

ForwardGraph build_forward(Graph& g, std::span<const NodeId> param_nodes, const Tensor& X) {
  if (param_nodes.size() < 2 || param_nodes.size() % 2 != 0)
    throw std::invalid_argument("forward: parameter nodes must come in weight/bias pairs");
  std::vector<std::pair<NodeId, NodeId>> layers;
  std::size_t features = X.rank() == 2 ? X.shape()[1] : 0;
  check_forward_input(X, features);
  for (std::size_t i = 0; i + 1 < param_nodes.size(); i += 2) {
    const Tensor& w = g.value(param_nodes[i]);
    const Tensor& b = g.value(param_nodes[i + 1]);
    if (w.rank() != 2 || b.rank() != 1 || b.shape()[0] != w.shape()[1] || w.shape()[0] != features)
      throw std::invalid_argument("forward: parameter node shapes do not chain at layer " +
                                  std::to_string(i / 2));
    features = w.shape()[1];
    layers.emplace_back(param_nodes[i], param_nodes[i + 1]);
  }
  return assemble_forward(g, g.variable(X), std::move(layers), X.shape()[0]);
}

ForwardResult forward(const Params& p, const Tensor& X) {
  Graph g;
  ForwardGraph f = build_forward(g, p, X);
  return {g.value(f.probs), g.value(f.logprobs)};
}

NodeId input_logprob_gradients_node(Graph& g, const ForwardGraph& f) {
  return g.gradient(g.sum(f.logprobs), f.input);
}

Tensor input_logprob_gradients(const Params& p, const Tensor& X) {
  Graph g;
  ForwardGraph f = build_forward(g, p, X);
  return g.value(input_logprob_gradients_node(g, f));
}

std::vector<std::size_t> argmax_rows(const Tensor& probs) {
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c)
      if (probs.at(r, c) > probs.at(r, best)) best = c;
    out[r] = best;
  }
  return out;
}

std::vector<std::size_t> predict(const Params& p, const Tensor& X) {
  return argmax_rows(forward(p, X).probs);
}

std::uint64_t params_fingerprint(const Params& p) {
  Fnv1a h;
  h.mix(std::uint64_t(p.layers.size()));
  for (const LayerParams& l : p.layers) {
    h.mix(std::uint64_t(l.weights.shape()[0]));
    h.mix(std::uint64_t(l.weights.shape()[1]));
    h.mix(l.weights.data());
    h.mix(l.bias.data());
  }
  return h.value();
}

double accuracy(const Params& p, const Tensor& X, const Tensor& y_onehot) {
  const std::vector<std::size_t> pred = predict(p, X);
  const std::vector<std::size_t> truth = argmax_rows(y_onehot);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return pred.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(pred.size());
}

}  // namespace igrad
