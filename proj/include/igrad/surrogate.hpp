#pragma once

// Perturbation-based local sparse linear explainer and the runtime benchmark
// comparing it with input-gradient explanations.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "igrad/datasets.hpp"
#include "igrad/model.hpp"
#include "igrad/tensor.hpp"

namespace igrad {

enum class SchemeKind {
  kFeatureMask,  // one interpretable unit per feature column
  kBlockMask,    // one unit per non-overlapping block of grid pixels
};

struct PerturbationScheme {
  SchemeKind kind = SchemeKind::kFeatureMask;
  std::size_t num_samples = 1000;
  double kernel_width = 0.0;  // <= 0 selects 0.75 * sqrt(#units)
  // Feature masking can restrict units to the instance's nonzero columns
  // (sparse text rows perturb only the tokens they contain).
  bool nonzero_units_only = false;
  // Block masking geometry; channels of a pixel always mask together.
  std::size_t block_size = 4;
  std::size_t grid_h = 0, grid_w = 0, grid_channels = 0;
};

// Feature masking for tabular rows, nonzero-only feature masking for text
// rows, 4x4 block masking for grids.
PerturbationScheme scheme_for(const data::DatasetMeta& meta, std::size_t num_samples);

// Columns covered by each interpretable unit of `x` under the scheme.
std::vector<std::vector<std::size_t>> scheme_units(const Tensor& x,
                                                   const PerturbationScheme& scheme);

struct PerturbationSet {
  Tensor samples;  // [S, D]; row 0 is the unperturbed instance
  Tensor codes;    // [S, m] unit presence bits; row 0 is all ones
  Tensor weights;  // [S] proximity exp(-masked / kernel_width^2)
  std::vector<std::vector<std::size_t>> units;
  double kernel_width = 0.0;  // resolved value
};

// Draws num_samples rows, masking each unit independently with probability
// one half (masked columns become zero). Deterministic given the seed.
PerturbationSet perturb(const Tensor& x, const PerturbationScheme& scheme, std::uint64_t seed);

struct LocalExplanation {
  // (unit index, coefficient), largest magnitude first; size min(k, #units).
  std::vector<std::pair<std::size_t, double>> features;
  double intercept = 0.0;
  double fit_quality = 0.0;  // weighted R^2 over the sample set
  bool min_norm_fallback = false;
};

// Weighted ridge regression (strength 1, free intercept) of outputs on
// presence codes; keeps the k largest-magnitude coefficients and refits on
// them. Requires codes rows > k. A singular system falls back to the
// minimum-norm solution and sets the flag.
LocalExplanation fit_local(const Tensor& codes, const Tensor& outputs, const Tensor& weights,
                           std::size_t k);

// Batch probability predictor: [n, D] inputs to [n, K] class probabilities.
using ProbFn = std::function<Tensor(const Tensor&)>;

// Perturbs x, evaluates the model on all samples, and fits the local model
// against the probability of the class predicted at x.
LocalExplanation explain_instance(const ProbFn& model, const Tensor& x,
                                  const PerturbationScheme& scheme, std::size_t k,
                                  std::uint64_t seed);

struct BenchResult {
  double surrogate_mean_s = 0.0, surrogate_std_s = 0.0;
  double gradient_mean_s = 0.0, gradient_std_s = 0.0;
  double forward_mean_s = 0.0, forward_std_s = 0.0;
  double ratio = 0.0;  // surrogate mean over gradient mean
};

// Times one explanation per X row per repetition for three methods: the
// perturbation surrogate, the input-gradient explanation, and a bare forward
// pass. Requires repetitions >= 3.
BenchResult bench(const Params& p, const Tensor& X, const PerturbationScheme& scheme,
                  std::size_t k, std::size_t repetitions);

}  // namespace igrad
