#ifndef SEMFLOW_EVAL_HPP
#define SEMFLOW_EVAL_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "semflow/grid.hpp"
#include "semflow/image.hpp"
#include "semflow/matching.hpp"

namespace semflow {

struct Keypoint {
  std::string name;
  double x = 0.0;
  double y = 0.0;
};

/// Named landmarks in pixel coordinates of one image. Names are unique;
/// coordinates lie inside the image. bbox, when present, is the object
/// bounding box used for size-normalized scoring.
struct KeypointSet {
  std::vector<Keypoint> points;
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::optional<Box> bbox;
};

enum class Normalization { img, bbox };

struct EvalConfig {
  double alpha = 0.1;
  Normalization normalization = Normalization::bbox;
};

/// Moves each keypoint along the flow: pixel coordinates are scaled to
/// the working grid (cell-center aligned), displaced by the bilinearly
/// interpolated flow vector, and scaled to target pixel coordinates.
/// The result carries the target dims and no bbox.
KeypointSet transfer_keypoints(const KeypointSet& kps, const FlowField& flow,
                               std::size_t src_h, std::size_t src_w, std::size_t tgt_h,
                               std::size_t tgt_w);

/// Fraction of keypoints (matched by name) whose Euclidean error is
/// within the tolerance radius: alpha * max(bbox h, w) for bbox
/// normalization, alpha alone for img normalization (coordinates are
/// expected pre-divided by the image dims). A distance exactly equal to
/// the radius counts as correct.
double pck(const KeypointSet& pred, const KeypointSet& gt, const EvalConfig& cfg);

struct TransferScores {
  double lt_acc = 0.0;  // fraction of pixels with equal labels
  double iou = 0.0;     // foreground intersection over union
};

/// Both masks are thresholded at 0.5 before counting. IoU of two empty
/// foregrounds is 1; of exactly one empty foreground, 0.
TransferScores mask_transfer_scores(const Mask& gt, const Mask& transferred);

/// Feature pyramid of one video frame plus its pixel dims.
struct FrameFeatures {
  std::size_t image_h = 0;
  std::size_t image_w = 0;
  std::vector<FeatureMap> levels;
};

/// Carries keypoints through a frame sequence: frames t and t+1 are
/// matched and the points ride the resulting source flow. Element 0 of
/// the result is kps0 itself.
std::vector<KeypointSet> propagate_keypoints(const std::vector<FrameFeatures>& frames,
                                             const KeypointSet& kps0, const MatchConfig& cfg);

/// Keeps the regions consistent across the pair: each predicted mask is
/// intersected with the other mask warped along its own flow. Outputs
/// are binary and element-wise bounded by the inputs.
std::pair<Mask, Mask> cosegment(const Mask& pred_src, const Mask& pred_tgt, const FlowField& Fs,
                                const FlowField& Ft);

// CSV formats: keypoints are `name,x,y` lines (no header); a bbox file
// is a single `x0,y0,x1,y1` line.
KeypointSet load_keypoints(const std::string& path, std::size_t image_h, std::size_t image_w);
void save_keypoints(const std::string& path, const KeypointSet& kps);
Box load_bbox(const std::string& path);
void save_bbox(const std::string& path, const Box& box);

}  // namespace semflow

#endif  // SEMFLOW_EVAL_HPP
