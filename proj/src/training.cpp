#include "igrad/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "igrad/rng.hpp"

namespace igrad {

namespace {

void check_labels(const Tensor& y, std::size_t n, std::size_t k) {
  if (y.rank() != 2 || y.rows() != n)
    throw std::invalid_argument("loss: labels must be [" + std::to_string(n) + ", k], got " +
                                shape_str(y.shape()));
  if (y.cols() != k)
    throw std::invalid_argument("loss: labels have " + std::to_string(y.cols()) +
                                " classes, model outputs " + std::to_string(k));
  for (std::size_t i = 0; i < y.rows(); ++i) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < y.cols(); ++j) {
      const double v = y.at(i, j);
      if (v == 1.0) ++ones;
      else if (v != 0.0)
        throw std::invalid_argument("loss: label row " + std::to_string(i) + " is not one-hot");
    }
    if (ones != 1) throw std::invalid_argument("loss: label row " + std::to_string(i) + " is not one-hot");
  }
}

void check_annotations(const Tensor& A, const Tensor& X) {
  if (!A.same_shape(X))
    throw std::invalid_argument("loss: annotations shaped " + shape_str(A.shape()) +
                                " do not match inputs shaped " + shape_str(X.shape()));
  if (!A.binary()) throw std::invalid_argument("loss: annotations must be 0/1");
}

Tensor gather_rows(const Tensor& t, const std::vector<std::size_t>& idx) {
  Tensor out(std::vector<std::size_t>{idx.size(), t.cols()});
  for (std::size_t i = 0; i < idx.size(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) out.at(i, j) = t.at(idx[i], j);
  return out;
}

double squared_norm(const Params& p) {
  double total = 0.0;
  for (const LayerParams& l : p.layers) {
    double sw = 0.0, sb = 0.0;
    for (double v : l.weights.data()) sw += v * v;
    for (double v : l.bias.data()) sb += v * v;
    total += sw + sb;
  }
  return total;
}

std::size_t count_hits(const Tensor& probs, const Tensor& y) {
  const auto pred = argmax_rows(probs);
  const auto truth = argmax_rows(y);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return hits;
}

struct EvalOut {
  LossBreakdown loss;
  double accuracy = 0.0;
};

// Full-dataset loss and accuracy, chunked so graph memory stays bounded.
EvalOut evaluate(const Params& p, const Tensor& X, const Tensor& y, const Tensor& A, double lambda1,
                 double lambda2) {
  constexpr std::size_t kChunk = 1024;
  if (X.rank() != 2)
    throw std::invalid_argument("loss: inputs must be rank 2, got " + shape_str(X.shape()));
  const std::size_t n = X.rows();
  check_labels(y, n, y.cols());
  check_annotations(A, X);
  EvalOut out;
  std::size_t hits = 0;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t len = std::min(kChunk, n - start);
    std::vector<std::size_t> idx(len);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor Xc = gather_rows(X, idx);
    const Tensor yc = gather_rows(y, idx);
    const Tensor Ac = gather_rows(A, idx);
    Graph g;
    const LossNodes nodes = rrr_loss_nodes(g, p, Xc, yc, Ac, lambda1, 0.0);
    const LossBreakdown piece = loss_values(g, nodes);
    out.loss.right_answers += piece.right_answers;
    out.loss.right_reasons += piece.right_reasons;
    hits += count_hits(g.value(nodes.forward.probs), yc);
  }
  out.loss.regular = lambda2 > 0.0 ? lambda2 * squared_norm(p) : 0.0;
  out.loss.total = out.loss.right_answers + out.loss.right_reasons + out.loss.regular;
  out.accuracy = n == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(n);
  return out;
}

double term_ratio(const LossBreakdown& b) {
  if (b.right_answers > 0.0) return b.right_reasons / b.right_answers;
  return b.right_reasons > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
}

}  // namespace

void validate_config(const RrrConfig& c) {
  if (!(c.lambda1 >= 0.0) || !std::isfinite(c.lambda1))
    throw std::invalid_argument("config: lambda1 must be finite and nonnegative");
  if (!(c.lambda2 >= 0.0) || !std::isfinite(c.lambda2))
    throw std::invalid_argument("config: lambda2 must be finite and nonnegative");
  if (c.batch_size < 1) throw std::invalid_argument("config: batch_size must be at least 1");
  if (!(c.adam.step_size > 0.0)) throw std::invalid_argument("config: step_size must be positive");
  if (!(c.adam.beta1 > 0.0 && c.adam.beta1 < 1.0) || !(c.adam.beta2 > 0.0 && c.adam.beta2 < 1.0))
    throw std::invalid_argument("config: betas must lie strictly between 0 and 1");
  if (!(c.adam.epsilon > 0.0)) throw std::invalid_argument("config: epsilon must be positive");
  if (!(c.stall_tolerance >= 0.0)) throw std::invalid_argument("config: stall_tolerance must be nonnegative");
}

LossNodes build_rrr_loss(Graph& g, const ForwardGraph& f, const Tensor& y, const Tensor& A,
                         double lambda1, double lambda2) {
  if (lambda1 < 0.0 || lambda2 < 0.0)
    throw std::invalid_argument("loss: penalty weights must be nonnegative");
  const Tensor& X = g.value(f.input);
  check_labels(y, X.rows(), g.value(f.logprobs).cols());
  check_annotations(A, X);

  LossNodes out;
  out.forward = f;
  out.right_answers = g.scale(g.sum(g.select(f.logprobs, g.constant(y))), -1.0);
  out.total = out.right_answers;

  if (lambda1 > 0.0 && !A.all_zero()) {
    const NodeId gx = input_logprob_gradients_node(g, f);
    out.right_reasons = g.scale(g.sum(g.square(g.select(gx, g.constant(A)))), lambda1);
    out.total = g.add(out.total, out.right_reasons);
  }
  if (lambda2 > 0.0) {
    NodeId acc;
    for (const NodeId pn : f.param_nodes()) {
      const NodeId s = g.sum(g.square(pn));
      acc = acc.valid() ? g.add(acc, s) : s;
    }
    out.regular = g.scale(acc, lambda2);
    out.total = g.add(out.total, out.regular);
  }
  return out;
}

LossNodes rrr_loss_nodes(Graph& g, const Params& p, const Tensor& X, const Tensor& y,
                         const Tensor& A, double lambda1, double lambda2) {
  const ForwardGraph f = build_forward(g, p, X);
  return build_rrr_loss(g, f, y, A, lambda1, lambda2);
}

LossBreakdown loss_values(const Graph& g, const LossNodes& nodes) {
  LossBreakdown b;
  b.right_answers = g.value(nodes.right_answers).item();
  if (nodes.right_reasons.valid()) b.right_reasons = g.value(nodes.right_reasons).item();
  if (nodes.regular.valid()) b.regular = g.value(nodes.regular).item();
  b.total = g.value(nodes.total).item();
  return b;
}

LossBreakdown rrr_loss(const Params& p, const Tensor& X, const Tensor& y, const Tensor& A,
                       double lambda1, double lambda2) {
  return evaluate(p, X, y, A, lambda1, lambda2).loss;
}

AdamState init_adam(const Params& p) {
  AdamState s;
  for (const LayerParams& l : p.layers) {
    s.first_moment.push_back(Tensor::zeros(l.weights.shape()));
    s.first_moment.push_back(Tensor::zeros(l.bias.shape()));
    s.second_moment.push_back(Tensor::zeros(l.weights.shape()));
    s.second_moment.push_back(Tensor::zeros(l.bias.shape()));
  }
  return s;
}

void adam_step(AdamState& state, Params& p, const std::vector<Tensor>& gradients,
               const AdamConfig& config) {
  std::vector<Tensor*> tensors;
  for (LayerParams& l : p.layers) {
    tensors.push_back(&l.weights);
    tensors.push_back(&l.bias);
  }
  if (gradients.size() != tensors.size())
    throw std::invalid_argument("adam_step: expected " + std::to_string(tensors.size()) +
                                " gradient tensors, got " + std::to_string(gradients.size()));
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const std::string where = "layer " + std::to_string(i / 2) + (i % 2 ? " bias" : " weights");
    Tensor& theta = *tensors[i];
    const Tensor& grad = gradients[i];
    if (!grad.same_shape(theta))
      throw std::invalid_argument("adam_step: gradient shaped " + shape_str(grad.shape()) +
                                  " does not match " + where);
    if (!grad.all_finite())
      throw std::runtime_error("adam_step: non-finite gradient for " + where);
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * grad[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * grad[j] * grad[j];
      theta[j] -= config.step_size * (m[j] / c1) / (std::sqrt(v[j] / c2) + config.epsilon);
    }
  }
}

TrainResult train(const RrrConfig& config, const Tensor& X, const Tensor& y, const Tensor& A,
                  const std::optional<EvalSplit>& heldout, const std::optional<Params>& start) {
  validate_config(config);
  if (X.rank() != 2 || X.rows() == 0)
    throw std::invalid_argument("train: dataset must be a nonempty rank-2 matrix, got " +
                                shape_str(X.shape()));
  const std::size_t n = X.rows();
  check_labels(y, n, y.cols());
  if (y.cols() < 2) throw std::invalid_argument("train: need at least 2 classes");
  check_annotations(A, X);
  if (start.has_value() &&
      (start->input_dim() != X.cols() || start->output_dim() != y.cols()))
    throw std::invalid_argument("train: starting parameters do not fit the dataset");

  Params p = start.has_value() ? *start : init_params(X.cols(), y.cols(), config.seed);
  AdamState adam = init_adam(p);

  std::vector<std::size_t> annotated;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < A.cols(); ++j)
      if (A.at(i, j) != 0.0) {
        annotated.push_back(i);
        break;
      }

  Rng shuffle_rng(mix_seed(config.seed, 1));
  TrainHistory history;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    shuffle_rng.shuffle(order);

    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, n - start);
      std::vector<std::size_t> batch(order.begin() + start, order.begin() + start + len);
      if (config.pin_annotated && !annotated.empty()) {
        std::vector<char> present(n, 0);
        for (const std::size_t idx : batch) present[idx] = 1;
        for (const std::size_t idx : annotated)
          if (!present[idx]) batch.push_back(idx);
      }
      const Tensor Xb = gather_rows(X, batch);
      const Tensor yb = gather_rows(y, batch);
      const Tensor Ab = gather_rows(A, batch);

      Graph g;
      const LossNodes nodes = rrr_loss_nodes(g, p, Xb, yb, Ab, config.lambda1, config.lambda2);
      const std::vector<NodeId> params = nodes.forward.param_nodes();
      const std::vector<Tensor> grads = g.gradient_values(nodes.total, params);
      adam_step(adam, p, grads, config.adam);
    }

    const EvalOut eval = evaluate(p, X, y, A, config.lambda1, config.lambda2);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = eval.loss;
    rec.train_accuracy = eval.accuracy;
    if (heldout.has_value()) rec.heldout_accuracy = accuracy(p, heldout->X, heldout->y);
    history.push_back(rec);

    if (config.stall_window > 0 && history.size() > config.stall_window) {
      const EpochRecord& past = history[history.size() - 1 - config.stall_window];
      if (std::abs(rec.train_accuracy - past.train_accuracy) < config.stall_tolerance &&
          std::abs(rec.loss.total - past.loss.total) < config.stall_tolerance)
        break;
    }
  }
  return {std::move(p), std::move(history)};
}

Lambda1Choice select_lambda1(const Tensor& X, const Tensor& y, const Tensor& A,
                             const std::vector<double>& grid, const RrrConfig& config) {
  if (grid.empty()) throw std::invalid_argument("select_lambda1: grid must be nonempty");
  for (std::size_t i = 0; i + 1 < grid.size(); ++i)
    if (!(grid[i] < grid[i + 1]))
      throw std::invalid_argument("select_lambda1: grid must be strictly increasing");

  Lambda1Choice out;
  for (const double lambda1 : grid) {
    RrrConfig c = config;
    c.lambda1 = lambda1;
    const Params fresh = init_params(X.cols(), y.cols(), c.seed);
    const LossBreakdown initial = rrr_loss(fresh, X, y, A, lambda1, c.lambda2);

    const TrainResult result = train(c, X, y, A);
    Lambda1Row row;
    row.lambda1 = lambda1;
    row.initial_ratio = term_ratio(initial);
    if (result.history.empty()) {
      row.final_loss = initial;
      row.train_accuracy = accuracy(fresh, X, y);
    } else {
      row.final_loss = result.history.back().loss;
      row.train_accuracy = result.history.back().train_accuracy;
    }
    row.final_ratio = term_ratio(row.final_loss);
    out.rows.push_back(row);
  }

  constexpr double kLow = 0.1, kHigh = 10.0;
  for (const Lambda1Row& row : out.rows) {
    if (row.final_ratio >= kLow && row.final_ratio <= kHigh) {
      out.lambda1 = row.lambda1;
      out.fallback = false;
      return out;
    }
  }
  out.fallback = true;
  double best = std::numeric_limits<double>::infinity();
  for (const Lambda1Row& row : out.rows) {
    const double dist = std::abs(row.final_ratio - 1.0);
    if (dist < best) {
      best = dist;
      out.lambda1 = row.lambda1;
    }
  }
  return out;
}

}  // namespace igrad
