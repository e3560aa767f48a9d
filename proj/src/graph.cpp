#define EIGEN_DONT_PARALLELIZE
#include "igrad/graph.hpp"

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>

namespace igrad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

[[noreturn]] void op_error(Op op, const std::string& what) {
  throw std::invalid_argument(std::string("graph: ") + op_name(op) + ": " + what);
}

void require_rank2(Op op, const Tensor& t, const char* role) {
  if (t.rank() != 2)
    op_error(op, std::string(role) + " must be rank 2, got " + shape_str(t.shape()));
}

void require_same_shape(Op op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b))
    op_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor map_unary(const Tensor& x, double (*f)(double)) {
  Tensor out(x.shape());
  auto in = x.data();
  auto o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  return out;
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kVariable: return "variable";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "multiply";
    case Op::kScale: return "scale";
    case Op::kSelect: return "select";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kRelu: return "relu";
    case Op::kStep: return "step";
    case Op::kLog: return "log";
    case Op::kExp: return "exp";
    case Op::kSquare: return "square";
    case Op::kReciprocal: return "reciprocal";
    case Op::kLogSoftmax: return "log-softmax";
    case Op::kExpNormalize: return "exp-normalize";
    case Op::kSum: return "sum";
    case Op::kSumRows: return "sum-rows";
    case Op::kSumCols: return "sum-cols";
    case Op::kBroadcastScalar: return "broadcast-scalar";
    case Op::kBroadcastRows: return "broadcast-rows";
    case Op::kBroadcastCols: return "broadcast-cols";
  }
  return "?";
}

const Node& Graph::node_at(NodeId id) const {
  if (!id.valid() || id.index >= nodes_.size())
    throw std::invalid_argument("graph: node id " + std::to_string(id.index) +
                                " is not in this graph");
  return nodes_[id.index];
}

NodeId Graph::append(Node n) {
  if (nodes_.size() >= UINT32_MAX - 1) throw std::runtime_error("graph: node limit reached");
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

NodeId Graph::variable(Tensor value) {
  return append(Node{Op::kVariable, {}, std::move(value), 0.0});
}

NodeId Graph::constant(Tensor value) {
  return append(Node{Op::kConstant, {}, std::move(value), 0.0});
}

NodeId Graph::broadcast_scalar(NodeId x, const std::vector<std::size_t>& shape) {
  const double attr = static_cast<double>(shape_attrs_.size());
  shape_attrs_.push_back(shape);
  const NodeId p[] = {x};
  return record(Op::kBroadcastScalar, p, attr);
}

// Forward kernel shared by record() and recompute(), so a replayed graph
// reproduces its values bit-for-bit.
static Tensor eval_op(Op op, const std::vector<const Tensor*>& in, double attr,
                      const std::vector<std::vector<std::size_t>>& shape_attrs) {
  switch (op) {
    case Op::kAdd: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] + (*in[1])[i];
      return out;
    }
    case Op::kSub: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] - (*in[1])[i];
      return out;
    }
    case Op::kMul:
    case Op::kSelect: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * (*in[1])[i];
      return out;
    }
    case Op::kScale: {
      Tensor out(in[0]->shape());
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*in[0])[i] * attr;
      return out;
    }
    case Op::kMatmul: {
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Tensor out({a.shape()[0], b.shape()[1]});
      ConstMap ma(a.data().data(), a.rows(), a.cols());
      ConstMap mb(b.data().data(), b.rows(), b.cols());
      MutMap mo(out.data().data(), out.rows(), out.cols());
      mo.noalias() = ma * mb;
      return out;
    }
    case Op::kTranspose: {
      const Tensor& x = *in[0];
      Tensor out({x.shape()[1], x.shape()[0]});
      ConstMap mx(x.data().data(), x.rows(), x.cols());
      MutMap mo(out.data().data(), out.rows(), out.cols());
      mo = mx.transpose();
      return out;
    }
    case Op::kRelu:
      return map_unary(*in[0], +[](double v) { return v > 0.0 ? v : 0.0; });
    case Op::kStep:
      return map_unary(*in[0], +[](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case Op::kLog:
      return map_unary(*in[0], +[](double v) { return std::log(v); });
    case Op::kExp:
      return map_unary(*in[0], +[](double v) { return std::exp(v); });
    case Op::kSquare:
      return map_unary(*in[0], +[](double v) { return v * v; });
    case Op::kReciprocal:
      return map_unary(*in[0], +[](double v) { return 1.0 / v; });
    case Op::kLogSoftmax:
    case Op::kExpNormalize: {
      const Tensor& z = *in[0];
      const std::size_t n = z.rows(), m = z.cols();
      Tensor out(z.shape());
      for (std::size_t r = 0; r < n; ++r) {
        double mx = z.at(r, 0);
        for (std::size_t c = 1; c < m; ++c) mx = std::max(mx, z.at(r, c));
        double s = 0.0;
        for (std::size_t c = 0; c < m; ++c) s += std::exp(z.at(r, c) - mx);
        if (op == Op::kLogSoftmax) {
          const double lse = mx + std::log(s);
          for (std::size_t c = 0; c < m; ++c) out.at(r, c) = z.at(r, c) - lse;
        } else {
          for (std::size_t c = 0; c < m; ++c) out.at(r, c) = std::exp(z.at(r, c) - mx) / s;
        }
      }
      return out;
    }
    case Op::kSum: {
      double s = 0.0;
      for (double v : in[0]->data()) s += v;
      return Tensor::scalar(s);
    }
    case Op::kSumRows: {
      const Tensor& x = *in[0];
      Tensor out({x.shape()[1]});
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out[c] += x.at(r, c);
      return out;
    }
    case Op::kSumCols: {
      const Tensor& x = *in[0];
      Tensor out({x.shape()[0]});
      for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out[r] += x.at(r, c);
      return out;
    }
    case Op::kBroadcastScalar:
      return Tensor::full(shape_attrs[static_cast<std::size_t>(attr)], in[0]->item());
    case Op::kBroadcastRows: {
      const std::size_t n = static_cast<std::size_t>(attr), m = in[0]->size();
      Tensor out({n, m});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out.at(r, c) = (*in[0])[c];
      return out;
    }
    case Op::kBroadcastCols: {
      const std::size_t n = in[0]->size(), m = static_cast<std::size_t>(attr);
      Tensor out({n, m});
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < m; ++c) out.at(r, c) = (*in[0])[r];
      return out;
    }
    case Op::kConstant:
    case Op::kVariable:
      break;
  }
  throw std::logic_error("graph: eval on leaf op");
}

void Graph::validate(Op op, std::span<const NodeId> parents, double attr) const {
  auto arity = [&](std::size_t n) {
    if (parents.size() != n)
      op_error(op, "expects " + std::to_string(n) + " inputs, got " +
                       std::to_string(parents.size()));
  };
  for (NodeId p : parents) node_at(p);

  switch (op) {
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
      arity(2);
      require_same_shape(op, value(parents[0]), value(parents[1]));
      break;
    case Op::kSelect: {
      arity(2);
      require_same_shape(op, value(parents[0]), value(parents[1]));
      const Node& mask = node_at(parents[1]);
      if (mask.op != Op::kConstant)
        op_error(op, "mask must be a constant leaf");
      if (!mask.value.binary())
        op_error(op, "mask entries must all be 0 or 1");
      break;
    }
    case Op::kScale:
      arity(1);
      if (!std::isfinite(attr)) op_error(op, "factor must be finite");
      break;
    case Op::kMatmul: {
      arity(2);
      const Tensor& a = value(parents[0]);
      const Tensor& b = value(parents[1]);
      require_rank2(op, a, "left input");
      require_rank2(op, b, "right input");
      if (a.shape()[1] != b.shape()[0])
        op_error(op, "inner dimensions differ: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
      break;
    }
    case Op::kTranspose:
    case Op::kLogSoftmax:
    case Op::kExpNormalize:
    case Op::kSumRows:
    case Op::kSumCols:
      arity(1);
      require_rank2(op, value(parents[0]), "input");
      break;
    case Op::kRelu:
    case Op::kStep:
    case Op::kLog:
    case Op::kExp:
    case Op::kSquare:
    case Op::kReciprocal:
    case Op::kSum:
      arity(1);
      break;
    case Op::kBroadcastScalar:
      arity(1);
      if (value(parents[0]).rank() != 0)
        op_error(op, "input must be a scalar, got " + shape_str(value(parents[0]).shape()));
      break;
    case Op::kBroadcastRows:
    case Op::kBroadcastCols:
      arity(1);
      if (value(parents[0]).rank() != 1)
        op_error(op, "input must be rank 1, got " + shape_str(value(parents[0]).shape()));
      if (attr < 1.0) op_error(op, "broadcast extent must be at least 1");
      break;
    case Op::kConstant:
    case Op::kVariable:
      op_error(op, "leaves are created via variable()/constant(), not record()");
  }
}

NodeId Graph::record(Op op, std::span<const NodeId> parents, double attr) {
  validate(op, parents, attr);
  std::vector<const Tensor*> in;
  in.reserve(parents.size());
  for (NodeId p : parents) in.push_back(&nodes_[p.index].value);
  Tensor out = eval_op(op, in, attr, shape_attrs_);
  Node n;
  n.op = op;
  n.parents.assign(parents.begin(), parents.end());
  n.value = std::move(out);
  n.attr = attr;
  return append(std::move(n));
}

void Graph::set_value(NodeId id, Tensor value) {
  node_at(id);
  Node& n = nodes_[id.index];
  if (n.op != Op::kConstant && n.op != Op::kVariable)
    throw std::invalid_argument("graph: set_value is only valid on leaves");
  if (!n.value.same_shape(value))
    throw std::invalid_argument("graph: set_value shape mismatch " +
                                shape_str(n.value.shape()) + " vs " + shape_str(value.shape()));
  n.value = std::move(value);
}

void Graph::recompute(NodeId upto) {
  if (nodes_.empty()) return;
  if (upto.valid()) node_at(upto);
  const std::size_t last = upto.valid() ? upto.index : nodes_.size() - 1;
  for (std::size_t i = 0; i <= last && i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op == Op::kConstant || n.op == Op::kVariable) continue;
    std::vector<const Tensor*> in;
    in.reserve(n.parents.size());
    for (NodeId p : n.parents) in.push_back(&nodes_[p.index].value);
    n.value = eval_op(n.op, in, n.attr, shape_attrs_);
  }
}

NodeId Graph::gradient(NodeId root, NodeId wrt) {
  const NodeId w[] = {wrt};
  return gradient(root, w)[0];
}

std::vector<Tensor> Graph::gradient_values(NodeId root, std::span<const NodeId> wrt) {
  std::vector<NodeId> ids = gradient(root, wrt);
  std::vector<Tensor> out;
  out.reserve(ids.size());
  for (NodeId id : ids) out.push_back(value(id));
  return out;
}

std::vector<NodeId> Graph::gradient(NodeId root, std::span<const NodeId> wrt) {
  const Node& r = node_at(root);
  if (r.value.rank() != 0)
    throw std::invalid_argument("graph: gradient root must be a scalar, got shape " +
                                shape_str(r.value.shape()));
  const std::size_t n = nodes_.size();

  // reaches[i]: node i is one of wrt or transitively consumes one.
  std::vector<std::uint8_t> reaches(n, 0);
  for (NodeId w : wrt) {
    node_at(w);
    reaches[w.index] = 1;
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (reaches[i]) continue;
    for (NodeId p : nodes_[i].parents)
      if (reaches[p.index]) {
        reaches[i] = 1;
        break;
      }
  }
  // contrib[i]: root transitively consumes node i.
  std::vector<std::uint8_t> contrib(n, 0);
  contrib[root.index] = 1;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    if (!contrib[i]) continue;
    for (NodeId p : nodes_[i].parents) contrib[p.index] = 1;
  }

  std::vector<NodeId> adj(n);
  adj[root.index] = constant(Tensor::scalar(1.0));

  auto want = [&](NodeId p) { return reaches[p.index] != 0; };
  auto acc = [&](NodeId p, NodeId g) {
    adj[p.index] = adj[p.index].valid() ? add(adj[p.index], g) : g;
  };

  for (std::size_t i = root.index + 1; i-- > 0;) {
    if (!contrib[i] || !reaches[i] || !adj[i].valid()) continue;
    // Copy fields: emission below appends nodes and may reallocate nodes_.
    const Op op = nodes_[i].op;
    const std::vector<NodeId> p = nodes_[i].parents;
    const double attr = nodes_[i].attr;
    const NodeId self{static_cast<std::uint32_t>(i)};
    const NodeId g = adj[i];
    switch (op) {
      case Op::kAdd:
        if (want(p[0])) acc(p[0], g);
        if (want(p[1])) acc(p[1], g);
        break;
      case Op::kSub:
        if (want(p[0])) acc(p[0], g);
        if (want(p[1])) acc(p[1], scale(g, -1.0));
        break;
      case Op::kMul:
        if (want(p[0])) acc(p[0], mul(g, p[1]));
        if (want(p[1])) acc(p[1], mul(g, p[0]));
        break;
      case Op::kSelect:
        if (want(p[0])) acc(p[0], select(g, p[1]));
        break;  // the mask is a constant leaf; nothing flows into it
      case Op::kScale:
        if (want(p[0])) acc(p[0], scale(g, attr));
        break;
      case Op::kMatmul:
        if (want(p[0])) acc(p[0], matmul(g, transpose(p[1])));
        if (want(p[1])) acc(p[1], matmul(transpose(p[0]), g));
        break;
      case Op::kTranspose:
        if (want(p[0])) acc(p[0], transpose(g));
        break;
      case Op::kRelu:
        if (want(p[0])) acc(p[0], mul(g, step(p[0])));
        break;
      case Op::kStep:
        break;  // gate counts as a constant mask: zero derivative everywhere
      case Op::kLog:
        if (want(p[0])) acc(p[0], mul(g, reciprocal(p[0])));
        break;
      case Op::kExp:
        if (want(p[0])) acc(p[0], mul(g, self));
        break;
      case Op::kSquare:
        if (want(p[0])) acc(p[0], mul(g, scale(p[0], 2.0)));
        break;
      case Op::kReciprocal:
        if (want(p[0])) acc(p[0], scale(mul(g, square(self)), -1.0));
        break;
      case Op::kLogSoftmax:
        // dz = g - softmax(z) * rowsum(g)
        if (want(p[0])) {
          const std::size_t m = nodes_[i].value.shape()[1];
          acc(p[0], sub(g, mul(exp(self), broadcast_cols(sum_cols(g), m))));
        }
        break;
      case Op::kExpNormalize:
        // dz = probs * (g - rowsum(g * probs))
        if (want(p[0])) {
          const std::size_t m = nodes_[i].value.shape()[1];
          acc(p[0], mul(self, sub(g, broadcast_cols(sum_cols(mul(g, self)), m))));
        }
        break;
      case Op::kSum:
        if (want(p[0])) acc(p[0], broadcast_scalar(g, value(p[0]).shape()));
        break;
      case Op::kSumRows:
        if (want(p[0])) acc(p[0], broadcast_rows(g, value(p[0]).shape()[0]));
        break;
      case Op::kSumCols:
        if (want(p[0])) acc(p[0], broadcast_cols(g, value(p[0]).shape()[1]));
        break;
      case Op::kBroadcastScalar:
        if (want(p[0])) acc(p[0], sum(g));
        break;
      case Op::kBroadcastRows:
        if (want(p[0])) acc(p[0], sum_rows(g));
        break;
      case Op::kBroadcastCols:
        if (want(p[0])) acc(p[0], sum_cols(g));
        break;
      case Op::kConstant:
      case Op::kVariable:
        break;
    }
  }

  std::vector<NodeId> out;
  out.reserve(wrt.size());
  for (NodeId w : wrt) {
    if (adj[w.index].valid())
      out.push_back(adj[w.index]);
    else
      out.push_back(constant(Tensor::zeros(value(w).shape())));
  }
  return out;
}

double check_grad(const GraphBuilder& build, const std::vector<Tensor>& point, double step) {
  if (step == 0.0 || !std::isfinite(step))
    throw std::invalid_argument("check_grad: step must be finite and nonzero");

  Graph g;
  std::vector<NodeId> leaves;
  leaves.reserve(point.size());
  for (const Tensor& t : point) leaves.push_back(g.variable(t));
  const NodeId root = build(g, leaves);
  const std::vector<Tensor> analytic = g.gradient_values(root, leaves);

  double worst = 0.0;
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    Tensor t = point[li];
    for (std::size_t c = 0; c < t.size(); ++c) {
      const double orig = t[c];
      auto eval_at = [&](double v) {
        t[c] = v;
        g.set_value(leaves[li], t);
        g.recompute(root);
        return g.value(root).item();
      };
      const double fp = eval_at(orig + step);
      const double fm = eval_at(orig - step);
      t[c] = orig;
      g.set_value(leaves[li], t);
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("check_grad: non-finite value when perturbing input " +
                                 std::to_string(li) + " component " + std::to_string(c));
      const double fd = (fp - fm) / (2.0 * step);
      const double a = analytic[li][c];
      const double err =
          std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace igrad
