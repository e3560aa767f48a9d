#include "igrad/explain.hpp"

#include <cmath>
#include <stdexcept>

#include "igrad/fingerprint.hpp"
#include "igrad/graph.hpp"
#include "json.hpp"

namespace igrad {

std::string target_name(const ExplainTarget& t) {
  switch (t.kind) {
    case Target::kSumLogProb: return "sum-logprob";
    case Target::kPredictedProb: return "predicted-prob";
    case Target::kClassProb: return "class-prob-" + std::to_string(t.class_index);
  }
  throw std::logic_error("unknown explanation target");
}

ExplanationSet explain(const Params& p, const Tensor& X, const ExplainTarget& target) {
  if (target.kind == Target::kClassProb && target.class_index >= p.output_dim())
    throw std::invalid_argument("explain: class " + std::to_string(target.class_index) +
                                " out of range for " + std::to_string(p.output_dim()) + " classes");

  Graph g;
  const ForwardGraph f = build_forward(g, p, X);
  const std::size_t n = X.rows(), k = p.output_dim();

  NodeId scalar;
  switch (target.kind) {
    case Target::kSumLogProb:
      scalar = g.sum(f.logprobs);
      break;
    case Target::kPredictedProb: {
      const std::vector<std::size_t> pred = argmax_rows(g.value(f.probs));
      Tensor pick = Tensor::zeros({n, k});
      for (std::size_t i = 0; i < n; ++i) pick.at(i, pred[i]) = 1.0;
      scalar = g.sum(g.select(f.probs, g.constant(pick)));
      break;
    }
    case Target::kClassProb: {
      Tensor pick = Tensor::zeros({n, k});
      for (std::size_t i = 0; i < n; ++i) pick.at(i, target.class_index) = 1.0;
      scalar = g.sum(g.select(f.probs, g.constant(pick)));
      break;
    }
  }

  ExplanationSet out;
  out.gradients = g.value(g.gradient(scalar, f.input));
  out.target = target;
  out.model_fingerprint = params_fingerprint(p);
  if (!out.gradients.all_finite())
    throw std::runtime_error("explain: non-finite gradients (model or inputs out of range)");
  return out;
}

Mask mask_top(const ExplanationSet& e, double c) {
  if (!(c > 0.0 && c <= 1.0))
    throw std::invalid_argument("mask cutoff must lie in (0, 1]");
  const Tensor& G = e.gradients;
  Mask m;
  m.cutoff = c;
  m.bits = Tensor::zeros(G.shape());
  for (std::size_t i = 0; i < G.rows(); ++i) {
    double peak = 0.0;
    for (std::size_t j = 0; j < G.cols(); ++j) peak = std::max(peak, std::abs(G.at(i, j)));
    if (peak == 0.0) continue;
    for (std::size_t j = 0; j < G.cols(); ++j)
      if (std::abs(G.at(i, j)) / peak >= c) m.bits.at(i, j) = 1.0;
  }
  return m;
}

double selected_fraction(const Mask& m) {
  if (m.bits.rows() == 0 || m.bits.cols() == 0) return 0.0;
  double total = 0.0;
  for (double v : m.bits.data()) total += v;
  return total / static_cast<double>(m.bits.rows() * m.bits.cols());
}

std::string render(const ExplanationSet& e, const Mask& m, const data::DatasetMeta& meta) {
  const Tensor& G = e.gradients;
  if (G.rank() != 2) throw std::invalid_argument("render: gradients must be rank 2");
  if (!m.bits.same_shape(G))
    throw std::invalid_argument("render: mask shaped " + shape_str(m.bits.shape()) +
                                " does not match gradients shaped " + shape_str(G.shape()));
  const std::size_t n = G.rows(), d = G.cols();

  const bool grid = meta.kind == data::Kind::kGrid;
  if (grid) {
    if (meta.grid_h * meta.grid_w * meta.grid_channels != d)
      throw std::invalid_argument("render: grid dims do not multiply to " + std::to_string(d));
  } else {
    if (meta.feature_names.size() != d)
      throw std::invalid_argument("render: " + std::to_string(meta.feature_names.size()) +
                                  " feature names for " + std::to_string(d) + " features");
  }

  nlohmann::ordered_json doc;
  doc["kind"] = data::kind_name(meta.kind);
  doc["target"] = target_name(e.target);
  doc["cutoff"] = m.cutoff;
  doc["model"] = fingerprint_hex(e.model_fingerprint);
  if (grid) {
    doc["grid"] = {{"height", meta.grid_h}, {"width", meta.grid_w}, {"channels", meta.grid_channels}};
  } else {
    doc["feature_names"] = meta.feature_names;
  }

  doc["examples"] = nlohmann::ordered_json::array();
  const std::size_t cells = grid ? meta.grid_h * meta.grid_w : d;
  const std::size_t channels = grid ? meta.grid_channels : 1;

  for (std::size_t i = 0; i < n; ++i) {
    // Per display cell: the signed value of the largest-magnitude channel
    // (ties keep the lowest channel), and whether any channel is selected.
    std::vector<double> weight(cells, 0.0);
    std::vector<bool> chosen(cells, false);
    for (std::size_t q = 0; q < cells; ++q) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const double v = G.at(i, q * channels + ch);
        if (std::abs(v) > std::abs(weight[q])) weight[q] = v;
        if (m.bits.at(i, q * channels + ch) == 1.0) chosen[q] = true;
      }
    }
    double peak = 0.0;
    for (const double w : weight) peak = std::max(peak, std::abs(w));

    nlohmann::ordered_json entry;
    entry["index"] = i;
    entry["entries"] = nlohmann::ordered_json::array();
    entry["selected"] = nlohmann::ordered_json::array();
    for (std::size_t q = 0; q < cells; ++q) {
      if (weight[q] != 0.0) {
        entry["entries"].push_back({{"feature", q},
                                    {"weight", weight[q]},
                                    {"opacity", std::abs(weight[q]) / peak}});
      }
      if (chosen[q]) entry["selected"].push_back(q);
    }
    doc["examples"].push_back(std::move(entry));
  }
  return doc.dump(2);
}

}  // namespace igrad
