#ifndef SEMFLOW_SYNTH_HPP
#define SEMFLOW_SYNTH_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "semflow/features.hpp"
#include "semflow/grid.hpp"
#include "semflow/image.hpp"
#include "semflow/losses.hpp"
#include "semflow/matching.hpp"
#include "semflow/rng.hpp"

namespace semflow {

/// Sampling bounds for random pair transforms.
struct AffineRanges {
  double rotation_deg = 15.0;      // +/- degrees
  double scale_lo = 0.85;
  double scale_hi = 1.15;
  double translation_frac = 0.10;  // +/- fraction of frame size
  double shear = 0.1;              // +/- shear coefficient
};

/// A self-supervised training example: one real image and its mask, plus
/// the same pair under a known affine transform. gt_flow lives on the
/// working grid; transform is in pixel coordinates, source to target.
struct SynthPair {
  Image src;
  Image tgt;
  Mask src_mask;
  Mask tgt_mask;
  FlowField gt_flow;
  AffineTransform transform;
};

/// Renders a random affine pair. The transform is resampled (up to 10
/// times) until at least half the foreground stays inside the frame.
/// Deterministic given the seed.
SynthPair generate_pair(const Image& img, const Mask& mask, std::uint64_t seed,
                        const AffineRanges& ranges, std::size_t working_h,
                        std::size_t working_w);

/// Horizontal flip of everything, including the flow (x components are
/// negated and re-indexed) and the transform (conjugated by the flip).
/// An involution: flipping twice restores the pair exactly.
SynthPair augment_flip(const SynthPair& pair);

/// Union of filled boxes as a binary mask. Boxes must lie inside the
/// frame. An empty list is allowed and produces an empty mask.
Mask boxes_to_masks(const std::vector<Box>& boxes, std::size_t h, std::size_t w);

struct TrainerConfig {
  std::size_t batch_size = 16;
  std::size_t epochs = 40;
  double lr = 3e-5;
  std::size_t lr_drop_epoch = 30;
  double lr_drop_factor = 5.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  std::uint64_t seed = 1;
  AffineRanges ranges;
};

/// First/second moment accumulators, one pair per parameter tensor,
/// created lazily to match parameter shapes.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

/// Bias-corrected Adam (epsilon 1e-8) applied in place. params and grads
/// are parallel; shapes must match the existing state.
void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads,
               AdamState& state, double lr, double beta1 = 0.9, double beta2 = 0.999);

/// Frozen extractor plus the trainable per-level residual units
/// (kernel 5 on level 1, kernel 3 on level 2).
struct TrainedModel {
  ToyExtractor extractor;
  AdaptationLayer level1;
  AdaptationLayer level2;

  static TrainedModel init(const ToyExtractor& e, std::uint64_t weight_seed);
};

/// Runs the full pipeline for one image pair under this model:
/// extract, adapt, match. Plain (non-training) path.
std::pair<FlowField, FlowField> model_match(const TrainedModel& model, const Image& src,
                                            const Image& tgt, const MatchConfig& cfg);

struct EpochStats {
  double total = 0.0;
  double mask_term = 0.0;
  double flow_term = 0.0;
  double smooth_term = 0.0;
};

struct TrainResult {
  TrainedModel model;
  AdamState adam;
  std::vector<EpochStats> history;  // one entry per epoch
};

/// Trains the adaptation layers on synthetic pairs regenerated each
/// epoch from the corpus (images shuffled, half the draws flipped).
/// Deterministic given cfg.seed. A non-finite loss or gradient aborts
/// with NumericError naming the epoch and step. start_epoch resumes an
/// interrupted run: epochs before it are skipped, the random streams for
/// the remaining ones are unchanged.
TrainResult train(const std::vector<std::pair<Image, Mask>>& corpus, const TrainerConfig& cfg,
                  const LossWeights& weights, const MatchConfig& match_cfg,
                  TrainedModel model, AdamState adam = {}, std::size_t start_epoch = 0);

/// Checkpoints: `<prefix>.json` index plus one SFNF blob per tensor
/// (weights and Adam moments; 4-D kernels are stored folded to 3-D).
void save_checkpoint(const std::string& prefix, const TrainedModel& model, const AdamState& adam,
                     std::size_t epochs_done);
struct Checkpoint {
  TrainedModel model;
  AdamState adam;
  std::size_t epochs_done = 0;
};
Checkpoint load_checkpoint(const std::string& prefix);

/// Deterministic test scene: a textured elliptical blob over a cluttered
/// background that reuses the same texture family, with the exact blob
/// mask. Repeating texture keeps raw patch features ambiguous, which is
/// what the adaptation layers are there to fix.
std::pair<Image, Mask> make_procedural_scene(std::uint64_t seed, std::size_t h, std::size_t w);
std::vector<std::pair<Image, Mask>> make_procedural_corpus(std::uint64_t seed, std::size_t count,
                                                           std::size_t h, std::size_t w);

}  // namespace semflow

#endif  // SEMFLOW_SYNTH_HPP
