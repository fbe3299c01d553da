#ifndef SEMFLOW_MATCHING_HPP
#define SEMFLOW_MATCHING_HPP

#include <cstddef>
#include <utility>
#include <vector>

#include "semflow/autodiff.hpp"
#include "semflow/features.hpp"
#include "semflow/grid.hpp"
#include "semflow/tensor.hpp"

namespace semflow {

/// All-pairs scores between source cells p and target cells q, shape
/// (h, w, h2, w2). `normalized` is set once each source slice has unit
/// Frobenius norm; the probability stage refuses input without it.
struct CorrelationMap {
  std::size_t h = 0, w = 0, h2 = 0, w2 = 0;
  Tensor scores;
  bool normalized = false;

  CorrelationMap() = default;
  CorrelationMap(std::size_t h_, std::size_t w_, std::size_t h2_, std::size_t w2_)
      : h(h_), w(w_), h2(h2_), w2(w2_), scores({h_, w_, h2_, w2_}) {}
};

enum class MatchMode { discrete, soft, kernel_soft };

struct MatchConfig {
  double beta = 50.0;
  double sigma = 5.0;
  MatchMode mode = MatchMode::kernel_soft;
};

/// Per source cell, a probability distribution over target cells, plus
/// the kernel centers (discrete argmax per cell) the distribution was
/// sharpened around.
struct MatchProbability {
  std::size_t h = 0, w = 0, h2 = 0, w2 = 0;
  Tensor probs;
  double beta = 0.0;
  double sigma = 0.0;
  std::vector<GridPoint> kernel_centers;  // integer coords, row-major over p
};

/// scores(p,q) = src(p) . tgt(q). Channel counts must match.
CorrelationMap correlate(const FeatureMap& src, const FeatureMap& tgt);

/// Scales each source cell's target slice to unit Frobenius norm
/// (all-zero slices stay zero) and sets the normalized flag.
CorrelationMap normalize_correlation(const CorrelationMap& c);

/// Element-wise product of same-shape maps (multi-level combination).
CorrelationMap combine_correlations(const CorrelationMap& a, const CorrelationMap& b);

/// Swaps the roles of source and target: out(q,p) = in(p,q).
CorrelationMap transpose_correlation(const CorrelationMap& c);

/// Softmax over target cells of beta * k_p * n_p, where k_p is a peak-1
/// Gaussian (std-dev sigma, in cells) centered on the discrete argmax of
/// the cell's slice. Ties pick the first cell in row-major order. In soft
/// mode k_p is 1 everywhere. Requires normalized input.
MatchProbability matching_probability(const CorrelationMap& c, const MatchConfig& cfg);

/// Flow to the expected target coordinate: F(p) = sum_q m_p(q) q - p.
FlowField kernel_soft_argmax(const MatchProbability& m);

/// Integer flow to the best-scoring cell, row-major tie-break.
FlowField discrete_argmax(const CorrelationMap& c);

/// Full two-direction pipeline on raw (un-normalized) feature levels:
/// normalize each level, correlate, combine across levels by product,
/// normalize per source cell, then argmax per cfg.mode. The reverse flow
/// reuses the combined volume transposed, never recomputing features.
std::pair<FlowField, FlowField> match(const std::vector<FeatureMap>& src_levels,
                                      const std::vector<FeatureMap>& tgt_levels,
                                      const MatchConfig& cfg);

// Tape-building twins used by the trainer. Feature Vars are shaped
// (h, w, d); correlation Vars (h, w, h2, w2); flow Vars (h, w, 2) with
// dx in channel 0, dy in channel 1.

ad::Var correlate_var(const ad::Var& src, const ad::Var& tgt);
ad::Var transpose_correlation_var(const ad::Var& c);

/// Combined (already multiplied) correlation -> flow. Normalizes per
/// source cell, applies the probability stage (kernel centers are taken
/// from values, off the tape), and subtracts the cell coordinates.
/// mode=discrete is not differentiable and is rejected here.
ad::Var flow_from_correlation_var(const ad::Var& combined, const MatchConfig& cfg);

/// Both directions from raw per-level feature Vars.
std::pair<ad::Var, ad::Var> match_var(const std::vector<ad::Var>& src_levels,
                                      const std::vector<ad::Var>& tgt_levels,
                                      const MatchConfig& cfg);

/// Converts a flow Var's value (h, w, 2) into a FlowField.
FlowField flow_from_var(const ad::Var& flow);

}  // namespace semflow

#endif  // SEMFLOW_MATCHING_HPP
