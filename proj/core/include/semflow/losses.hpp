#ifndef SEMFLOW_LOSSES_HPP
#define SEMFLOW_LOSSES_HPP

#include "semflow/autodiff.hpp"
#include "semflow/grid.hpp"
#include "semflow/image.hpp"

namespace semflow {

struct LossWeights {
  double lambda_mask = 3.0;
  double lambda_flow = 16.0;
  double lambda_smooth = 0.5;
};

struct LossReport {
  double total = 0.0;
  double mask_term = 0.0;
  double flow_term = 0.0;
  double smooth_term = 0.0;
};

/// Tape bridges. Flow Vars are shaped (h, w, 2), dx then dy.
ad::Var var_from_flow(const FlowField& flow, bool requires_grad);

/// The warp operator on the tape: out(p) = zero-padded bilinear sample of
/// values at p + flow(p). Differentiable in the sampled values and in the
/// flow (right-continuous at integer sample positions).
ad::Var warp_scalar_var(const ad::Var& values, const ad::Var& flow);

// The three objective terms, each summed over both directions. Masks
// enter as constants; only flows (and whatever produced them) carry
// gradients.
//
// mask term: per direction, mean squared difference over all cells
// between the own mask and the other mask warped along the own flow.
// flow term: per direction, mean over foreground cells of the squared
// forward-plus-warped-backward flow, each component gated by the
// binarized own mask. Directions with empty foreground contribute 0.
// smoothness term: per direction, mean over foreground cells of the L1
// norm of forward differences of both flow components, gated likewise.
ad::Var mask_consistency_var(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms,
                             const Mask& Mt);
ad::Var flow_consistency_var(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms,
                             const Mask& Mt);
ad::Var smoothness_var(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms, const Mask& Mt);

struct LossVars {
  ad::Var total;
  ad::Var mask_term;
  ad::Var flow_term;
  ad::Var smooth_term;
};

LossVars total_loss_var(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms, const Mask& Mt,
                        const LossWeights& w);

// Value-only wrappers over the tape versions.
double mask_consistency(const Mask& Ms, const Mask& Mt, const FlowField& Fs,
                        const FlowField& Ft);
double flow_consistency(const FlowField& Fs, const FlowField& Ft, const Mask& Ms,
                        const Mask& Mt);
double smoothness(const FlowField& Fs, const FlowField& Ft, const Mask& Ms, const Mask& Mt);
LossReport total_loss(const FlowField& Fs, const FlowField& Ft, const Mask& Ms, const Mask& Mt,
                      const LossWeights& w);

}  // namespace semflow

#endif  // SEMFLOW_LOSSES_HPP
