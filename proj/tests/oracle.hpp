#pragma once

// Independent straight-line reimplementation of the classifier math, used as
// a cross-check oracle. Everything here is plain nested loops over doubles:
// no Graph, no Eigen, no shared code with the library's compute paths beyond
// the Params/Tensor containers themselves.

#include <cmath>
#include <vector>

#include "igrad/model.hpp"
#include "igrad/tensor.hpp"

namespace oracle {

using igrad::Params;
using igrad::Tensor;

struct ForwardTrace {
  // Per layer: preactivations z and activations h (h.back() == logits).
  std::vector<std::vector<double>> z;
  std::vector<std::vector<double>> h;
  std::vector<double> logprobs;
  std::vector<double> probs;
};

inline ForwardTrace forward_row(const Params& p, const double* x, std::size_t d) {
  ForwardTrace t;
  std::vector<double> cur(x, x + d);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    const Tensor& w = p.layers[li].weights;
    const Tensor& b = p.layers[li].bias;
    const std::size_t in = w.shape()[0], out = w.shape()[1];
    std::vector<double> z(out);
    for (std::size_t j = 0; j < out; ++j) {
      double s = b[j];
      for (std::size_t i = 0; i < in; ++i) s += cur[i] * w.at(i, j);
      z[j] = s;
    }
    t.z.push_back(z);
    if (li + 1 < p.layers.size())
      for (double& v : z) v = v > 0.0 ? v : 0.0;
    t.h.push_back(z);
    cur = z;
  }
  double mx = cur[0];
  for (double v : cur) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : cur) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  for (double v : cur) {
    t.logprobs.push_back(v - lse);
    t.probs.push_back(std::exp(v - lse));
  }
  return t;
}

inline Tensor forward_probs(const Params& p, const Tensor& X) {
  Tensor out({X.rows(), p.output_dim()});
  for (std::size_t r = 0; r < X.rows(); ++r) {
    ForwardTrace t = forward_row(p, &X.data()[r * X.cols()], X.cols());
    for (std::size_t k = 0; k < t.probs.size(); ++k) out.at(r, k) = t.probs[k];
  }
  return out;
}

inline Tensor forward_logprobs(const Params& p, const Tensor& X) {
  Tensor out({X.rows(), p.output_dim()});
  for (std::size_t r = 0; r < X.rows(); ++r) {
    ForwardTrace t = forward_row(p, &X.data()[r * X.cols()], X.cols());
    for (std::size_t k = 0; k < t.logprobs.size(); ++k) out.at(r, k) = t.logprobs[k];
  }
  return out;
}

// Hand backprop of d/dx of sum_k logprob_k for one example:
// d(sum_k logprob_k)/dz_j = 1 - K * softmax_j at the output, then chain back
// through the linear layers with the relu gate (0 at exactly 0).
inline std::vector<double> input_gradient_row(const Params& p, const double* x, std::size_t d) {
  ForwardTrace t = forward_row(p, x, d);
  const std::size_t k = p.output_dim();
  std::vector<double> delta(k);
  for (std::size_t j = 0; j < k; ++j)
    delta[j] = 1.0 - static_cast<double>(k) * t.probs[j];
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const Tensor& w = p.layers[li].weights;
    const std::size_t in = w.shape()[0], out = w.shape()[1];
    std::vector<double> prev(in, 0.0);
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t j = 0; j < out; ++j) prev[i] += w.at(i, j) * delta[j];
    if (li > 0)
      for (std::size_t i = 0; i < in; ++i)
        if (t.z[li - 1][i] <= 0.0) prev[i] = 0.0;
    delta = prev;
  }
  return delta;
}

inline Tensor input_gradients(const Params& p, const Tensor& X) {
  Tensor out(std::vector<std::size_t>{X.rows(), X.cols()});
  for (std::size_t r = 0; r < X.rows(); ++r) {
    std::vector<double> g = input_gradient_row(p, &X.data()[r * X.cols()], X.cols());
    for (std::size_t c = 0; c < X.cols(); ++c) out.at(r, c) = g[c];
  }
  return out;
}

inline double cross_entropy(const Params& p, const Tensor& X, const Tensor& y) {
  double total = 0.0;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    ForwardTrace t = forward_row(p, &X.data()[r * X.cols()], X.cols());
    for (std::size_t k = 0; k < y.cols(); ++k) total -= y.at(r, k) * t.logprobs[k];
  }
  return total;
}

// Sum of squared input-logprob-gradient components over every example and
// feature (the penalty a full annotation matrix induces), unweighted.
inline double full_gradient_penalty(const Params& p, const Tensor& X) {
  double total = 0.0;
  for (std::size_t r = 0; r < X.rows(); ++r) {
    std::vector<double> g = input_gradient_row(p, &X.data()[r * X.cols()], X.cols());
    for (double v : g) total += v * v;
  }
  return total;
}

}  // namespace oracle
