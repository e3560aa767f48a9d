#pragma once

// Reverse-mode automatic differentiation on an explicit operation graph.
//
// Every recorded node stores its operation tag, parent ids, and eagerly
// computed value. gradient() walks the graph in reverse and *records its
// backward pass as new nodes*, so the returned gradients are ordinary graph
// values that a second gradient() call can differentiate again. That second
// pass is what makes losses containing input gradients trainable.
//
// Invariants kept by this module:
//   - parents always precede children (ids are insertion-ordered),
//   - node values are never mutated by gradient(); recompute() replays the
//     forward pass and reproduces every value bit-for-bit,
//   - ReLU has derivative 0 at 0, and its gate is treated as a constant mask
//     by higher-order passes.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "igrad/tensor.hpp"

namespace igrad {

enum class Op : std::uint8_t {
  kConstant,
  kVariable,
  kAdd,
  kSub,
  kMul,
  kScale,            // x * attr
  kSelect,           // x masked by a constant binary tensor
  kMatmul,
  kTranspose,
  kRelu,
  kStep,             // 1 where x > 0 else 0; not differentiated further
  kLog,
  kExp,
  kSquare,
  kReciprocal,
  kLogSoftmax,       // per row: z - max - log(sum(exp(z - max)))
  kExpNormalize,     // per row: exp(z - max) / sum(exp(z - max))
  kSum,              // all elements -> scalar
  kSumRows,          // [n,m] -> [m]
  kSumCols,          // [n,m] -> [n]
  kBroadcastScalar,  // scalar -> given shape
  kBroadcastRows,    // [m] -> [n,m]
  kBroadcastCols,    // [n] -> [n,m]
};

const char* op_name(Op op);

struct NodeId {
  std::uint32_t index = UINT32_MAX;
  bool valid() const { return index != UINT32_MAX; }
  friend bool operator==(NodeId, NodeId) = default;
};

struct Node {
  Op op = Op::kConstant;
  std::vector<NodeId> parents;
  Tensor value;
  double attr = 0.0;  // scale factor / broadcast extent
};

class Graph {
 public:
  // Leaves. Variables participate in differentiation; constants never do.
  NodeId variable(Tensor value);
  NodeId constant(Tensor value);

  // Records one operation: validates parent shapes against the op, computes
  // the value, appends a node. All the named ops below go through here.
  NodeId record(Op op, std::span<const NodeId> parents, double attr = 0.0);

  NodeId add(NodeId a, NodeId b) { return record2(Op::kAdd, a, b); }
  NodeId sub(NodeId a, NodeId b) { return record2(Op::kSub, a, b); }
  NodeId mul(NodeId a, NodeId b) { return record2(Op::kMul, a, b); }
  NodeId scale(NodeId x, double c) { return record1(Op::kScale, x, c); }
  NodeId select(NodeId x, NodeId mask) { return record2(Op::kSelect, x, mask); }
  NodeId matmul(NodeId a, NodeId b) { return record2(Op::kMatmul, a, b); }
  NodeId transpose(NodeId x) { return record1(Op::kTranspose, x); }
  NodeId relu(NodeId x) { return record1(Op::kRelu, x); }
  NodeId step(NodeId x) { return record1(Op::kStep, x); }
  NodeId log(NodeId x) { return record1(Op::kLog, x); }
  NodeId exp(NodeId x) { return record1(Op::kExp, x); }
  NodeId square(NodeId x) { return record1(Op::kSquare, x); }
  NodeId reciprocal(NodeId x) { return record1(Op::kReciprocal, x); }
  NodeId log_softmax(NodeId x) { return record1(Op::kLogSoftmax, x); }
  NodeId exp_normalize(NodeId x) { return record1(Op::kExpNormalize, x); }
  NodeId sum(NodeId x) { return record1(Op::kSum, x); }
  NodeId sum_rows(NodeId x) { return record1(Op::kSumRows, x); }
  NodeId sum_cols(NodeId x) { return record1(Op::kSumCols, x); }
  NodeId broadcast_scalar(NodeId x, const std::vector<std::size_t>& shape);
  NodeId broadcast_rows(NodeId x, std::size_t n) { return record1(Op::kBroadcastRows, x, double(n)); }
  NodeId broadcast_cols(NodeId x, std::size_t m) { return record1(Op::kBroadcastCols, x, double(m)); }

  // d(root)/d(wrt) for a scalar root. Records the backward computation and
  // returns the gradient nodes, one per wrt entry, shaped like that entry.
  // A wrt node the root does not depend on yields a zero constant.
  std::vector<NodeId> gradient(NodeId root, std::span<const NodeId> wrt);
  NodeId gradient(NodeId root, NodeId wrt);

  // Values of gradient nodes, for callers that only need numbers.
  std::vector<Tensor> gradient_values(NodeId root, std::span<const NodeId> wrt);

  const Tensor& value(NodeId id) const { return node_at(id).value; }
  const Node& node(NodeId id) const { return node_at(id); }
  std::size_t size() const { return nodes_.size(); }

  // Replaces a leaf's value (shape must match), e.g. to re-evaluate the graph
  // at a perturbed point.
  void set_value(NodeId id, Tensor value);

  // Replays the forward pass for nodes [0, upto]; pass an invalid id to
  // replay everything. Leaves keep their current values.
  void recompute(NodeId upto = NodeId{});

 private:
  void validate(Op op, std::span<const NodeId> parents, double attr) const;
  NodeId record1(Op op, NodeId a, double attr = 0.0) {
    const NodeId p[] = {a};
    return record(op, p, attr);
  }
  NodeId record2(Op op, NodeId a, NodeId b) {
    const NodeId p[] = {a, b};
    return record(op, p);
  }
  const Node& node_at(NodeId id) const;
  NodeId append(Node n);

  std::vector<Node> nodes_;
  std::vector<std::vector<std::size_t>> shape_attrs_;  // for kBroadcastScalar
};

// Builds a graph via `build` (which receives variable nodes for `point` and
// returns a scalar root), then compares the recorded gradient against central
// finite differences with the given step. Returns the worst relative error
// max|a-n| / max(|a|,|n|,1e-8) over all components of all point tensors.
using GraphBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;
double check_grad(const GraphBuilder& build, const std::vector<Tensor>& point, double step);

}  // namespace igrad
