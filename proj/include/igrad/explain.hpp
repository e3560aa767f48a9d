#pragma once

// Input-gradient explanations: per-example gradients of a chosen scalar
// model output, magnitude-ratio masks over them, and a JSON artifact
// rendering keyed by dataset kind.

#include <cstdint>
#include <string>

#include "igrad/datasets.hpp"
#include "igrad/model.hpp"
#include "igrad/tensor.hpp"

namespace igrad {

enum class Target {
  kSumLogProb,     // sum over classes of log p_k (the penalized quantity)
  kPredictedProb,  // probability of each example's argmax class
  kClassProb,      // probability of one fixed class
};

struct ExplainTarget {
  Target kind = Target::kSumLogProb;
  std::size_t class_index = 0;  // kClassProb only

  friend bool operator==(const ExplainTarget&, const ExplainTarget&) = default;
};

// "sum-logprob", "predicted-prob", or "class-prob-<k>".
std::string target_name(const ExplainTarget& t);

struct ExplanationSet {
  Tensor gradients;  // [n, d], row n is d(target_n)/d(x_n)
  ExplainTarget target;
  std::uint64_t model_fingerprint = 0;
};

struct Mask {
  Tensor bits;  // [n, d] binary
  double cutoff = 0.0;
};

ExplanationSet explain(const Params& p, const Tensor& X, const ExplainTarget& target = {});

// bits_nd = 1 iff |g_nd| / max_d' |g_nd'| >= c; an all-zero gradient row
// yields an all-zero mask row. Requires 0 < c <= 1.
Mask mask_top(const ExplanationSet& e, double c);

// Mean fraction of selected components per row.
double selected_fraction(const Mask& m);

// JSON artifact text. Grid kinds aggregate channels per pixel (the signed
// value of the largest-magnitude channel); text and tabular kinds list
// features directly and require feature names of matching length. Entries
// with zero weight are omitted; opacity is |w| / max row |w|.
std::string render(const ExplanationSet& e, const Mask& m, const data::DatasetMeta& meta);

}  // namespace igrad
