#include "semflow/eval.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "semflow/errors.hpp"

namespace semflow {

namespace {

// Cell-center alignment between rasters of different sizes: pixel u on an
// n_img axis corresponds to grid coordinate (u + 0.5) * n_grid / n_img - 0.5.
double pixel_to_grid(double u, std::size_t n_img, std::size_t n_grid) {
  return (u + 0.5) * static_cast<double>(n_grid) / static_cast<double>(n_img) - 0.5;
}

double grid_to_pixel(double g, std::size_t n_grid, std::size_t n_img) {
  return (g + 0.5) * static_cast<double>(n_img) / static_cast<double>(n_grid) - 0.5;
}

}  // namespace

KeypointSet transfer_keypoints(const KeypointSet& kps, const FlowField& flow,
                               std::size_t src_h, std::size_t src_w, std::size_t tgt_h,
                               std::size_t tgt_w) {
  if (src_h == 0 || src_w == 0 || tgt_h == 0 || tgt_w == 0 || flow.h == 0 || flow.w == 0)
    throw ShapeError("transfer_keypoints: zero dims");

  KeypointSet out;
  out.image_h = tgt_h;
  out.image_w = tgt_w;
  out.points.reserve(kps.points.size());
  for (const Keypoint& kp : kps.points) {
    if (kp.x < 0.0 || kp.x >= static_cast<double>(src_w) || kp.y < 0.0 ||
        kp.y >= static_cast<double>(src_h))
      throw ShapeError("transfer_keypoints: keypoint outside image: " + kp.name);
    const double gx = pixel_to_grid(kp.x, src_w, flow.w);
    const double gy = pixel_to_grid(kp.y, src_h, flow.h);
    const GridPoint d = sample_flow(flow, {gx, gy});
    out.points.push_back({kp.name, grid_to_pixel(gx + d.x, flow.w, tgt_w),
                          grid_to_pixel(gy + d.y, flow.h, tgt_h)});
  }
  return out;
}

double pck(const KeypointSet& pred, const KeypointSet& gt, const EvalConfig& cfg) {
  if (!(cfg.alpha > 0.0)) throw NumericError("pck: alpha must be positive");
  if (pred.points.empty() || gt.points.empty()) throw ShapeError("pck: empty keypoint set");
  if (pred.points.size() != gt.points.size())
    throw ShapeError("pck: keypoint counts differ");

  double radius = cfg.alpha;
  if (cfg.normalization == Normalization::bbox) {
    if (!gt.bbox) throw ShapeError("pck: bbox normalization without a bbox");
    radius = cfg.alpha * std::max(gt.bbox->width(), gt.bbox->height());
  }

  std::unordered_map<std::string, const Keypoint*> by_name;
  for (const Keypoint& kp : gt.points) by_name[kp.name] = &kp;
  if (by_name.size() != gt.points.size()) throw ShapeError("pck: duplicate keypoint names");

  std::size_t correct = 0;
  for (const Keypoint& kp : pred.points) {
    const auto it = by_name.find(kp.name);
    if (it == by_name.end()) throw ShapeError("pck: keypoint names differ: " + kp.name);
    const double dx = kp.x - it->second->x;
    const double dy = kp.y - it->second->y;
    if (std::sqrt(dx * dx + dy * dy) <= radius) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.points.size());
}

TransferScores mask_transfer_scores(const Mask& gt, const Mask& transferred) {
  if (gt.h != transferred.h || gt.w != transferred.w)
    throw ShapeError("mask_transfer_scores: dims differ");

  std::size_t equal = 0, inter = 0, uni = 0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    const bool a = gt.values[i] > 0.5;
    const bool b = transferred.values[i] > 0.5;
    if (a == b) ++equal;
    if (a && b) ++inter;
    if (a || b) ++uni;
  }

  TransferScores s;
  s.lt_acc = gt.values.empty() ? 1.0
                               : static_cast<double>(equal) /
                                     static_cast<double>(gt.values.size());
  s.iou = uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
  return s;
}

std::vector<KeypointSet> propagate_keypoints(const std::vector<FrameFeatures>& frames,
                                             const KeypointSet& kps0, const MatchConfig& cfg) {
  if (frames.size() < 2) throw ShapeError("propagate_keypoints: need at least 2 frames");
  if (kps0.image_h != frames[0].image_h || kps0.image_w != frames[0].image_w)
    throw ShapeError("propagate_keypoints: keypoint dims differ from first frame");

  std::vector<KeypointSet> out;
  out.reserve(frames.size());
  out.push_back(kps0);
  for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
    const auto [Fs, Ft] = match(frames[t].levels, frames[t + 1].levels, cfg);
    out.push_back(transfer_keypoints(out.back(), Fs, frames[t].image_h, frames[t].image_w,
                                     frames[t + 1].image_h, frames[t + 1].image_w));
  }
  return out;
}

std::pair<Mask, Mask> cosegment(const Mask& pred_src, const Mask& pred_tgt, const FlowField& Fs,
                                const FlowField& Ft) {
  if (pred_src.h != pred_tgt.h || pred_src.w != pred_tgt.w || Fs.h != pred_src.h ||
      Fs.w != pred_src.w || Ft.h != pred_src.h || Ft.w != pred_src.w)
    throw ShapeError("cosegment: dims differ");

  const auto one_side = [](const Mask& own, const Mask& other, const FlowField& flow) {
    ScalarGrid g(other.h, other.w);
    g.values = other.values;
    const ScalarGrid warped = warp_scalar(g, flow);
    Mask out(own.h, own.w);
    for (std::size_t i = 0; i < out.values.size(); ++i)
      out.values[i] = (own.values[i] > 0.5 && warped.values[i] > 0.5) ? 1.0 : 0.0;
    return out;
  };
  return {one_side(pred_src, pred_tgt, Fs), one_side(pred_tgt, pred_src, Ft)};
}

KeypointSet load_keypoints(const std::string& path, std::size_t image_h, std::size_t image_w) {
  std::ifstream is(path);
  if (!is) throw FormatError(path + ": cannot open");

  KeypointSet out;
  out.image_h = image_h;
  out.image_w = image_w;
  std::unordered_set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name, xs, ys;
    if (!std::getline(ls, name, ',') || !std::getline(ls, xs, ',') || !std::getline(ls, ys))
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected name,x,y");
    Keypoint kp;
    kp.name = name;
    try {
      kp.x = std::stod(xs);
      kp.y = std::stod(ys);
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": bad coordinate");
    }
    if (kp.x < 0.0 || kp.x >= static_cast<double>(image_w) || kp.y < 0.0 ||
        kp.y >= static_cast<double>(image_h))
      throw FormatError(path + ":" + std::to_string(lineno) + ": keypoint outside image");
    if (!seen.insert(kp.name).second)
      throw FormatError(path + ":" + std::to_string(lineno) + ": duplicate name " + kp.name);
    out.points.push_back(std::move(kp));
  }
  return out;
}

void save_keypoints(const std::string& path, const KeypointSet& kps) {
  std::ofstream os(path);
  if (!os) throw FormatError(path + ": cannot open for writing");
  os << std::setprecision(17);
  for (const Keypoint& kp : kps.points) os << kp.name << "," << kp.x << "," << kp.y << "\n";
}

Box load_bbox(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError(path + ": cannot open");
  std::string line;
  if (!std::getline(is, line)) throw FormatError(path + ": empty bbox file");
  std::istringstream ls(line);
  std::string f[4];
  for (int i = 0; i < 4; ++i)
    if (!std::getline(ls, f[i], i == 3 ? '\n' : ','))
      throw FormatError(path + ": expected x0,y0,x1,y1");
  Box b;
  try {
    b.x0 = std::stod(f[0]);
    b.y0 = std::stod(f[1]);
    b.x1 = std::stod(f[2]);
    b.y1 = std::stod(f[3]);
  } catch (const std::exception&) {
    throw FormatError(path + ": bad bbox value");
  }
  if (b.x1 < b.x0 || b.y1 < b.y0) throw FormatError(path + ": inverted bbox");
  return b;
}

void save_bbox(const std::string& path, const Box& box) {
  std::ofstream os(path);
  if (!os) throw FormatError(path + ": cannot open for writing");
  os << std::setprecision(17) << box.x0 << "," << box.y0 << "," << box.x1 << "," << box.y1
     << "\n";
}

}  // namespace semflow
