#ifndef SEMFLOW_GRID_HPP
#define SEMFLOW_GRID_HPP

#include <cstddef>
#include <string>
#include <vector>

#include "semflow/errors.hpp"

namespace semflow {

// Coordinate convention, used by every module and file format:
// x = column, y = row, 0-based, cell-centered. An integer-valued point
// (x, y) with 0 <= x < w and 0 <= y < h addresses exactly one grid cell.
struct GridPoint {
  double x = 0.0;
  double y = 0.0;
};

/// Half-open axis-aligned rectangle [x0,x1) x [y0,y1).
struct Box {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
};

/// h x w grid of real values, row-major.
struct ScalarGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> values;

  ScalarGrid() = default;
  ScalarGrid(std::size_t h_, std::size_t w_, double fill = 0.0)
      : h(h_), w(w_), values(h_ * w_, fill) {}

  double& at(std::size_t y, std::size_t x) { return values[y * w + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * w + x]; }
};

/// h x w grid of (dx, dy) displacement vectors, in cell units of the grid
/// the field lives on.
struct FlowField {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> dx;
  std::vector<double> dy;

  FlowField() = default;
  FlowField(std::size_t h_, std::size_t w_)
      : h(h_), w(w_), dx(h_ * w_, 0.0), dy(h_ * w_, 0.0) {}

  std::size_t size() const { return dx.size(); }
  double& dx_at(std::size_t y, std::size_t x) { return dx[y * w + x]; }
  double& dy_at(std::size_t y, std::size_t x) { return dy[y * w + x]; }
  double dx_at(std::size_t y, std::size_t x) const { return dx[y * w + x]; }
  double dy_at(std::size_t y, std::size_t x) const { return dy[y * w + x]; }
};

/// Invertible 2-D affine map: (x, y) -> (a11*x + a12*y + tx, a21*x + a22*y + ty).
class AffineTransform {
public:
  AffineTransform() = default;  // identity
  AffineTransform(double a11, double a12, double a21, double a22, double tx, double ty);

  static AffineTransform identity() { return AffineTransform(); }
  static AffineTransform translation(double tx, double ty);
  static AffineTransform rotation_about(double radians, double cx, double cy);

  GridPoint apply(GridPoint p) const;
  AffineTransform inverse() const;
  /// Composition: (a.then(b))(p) == b(a(p)).
  AffineTransform then(const AffineTransform& next) const;
  double determinant() const { return a11_ * a22_ - a12_ * a21_; }

  double a11() const { return a11_; }
  double a12() const { return a12_; }
  double a21() const { return a21_; }
  double a22() const { return a22_; }
  double tx() const { return tx_; }
  double ty() const { return ty_; }

private:
  double a11_ = 1.0, a12_ = 0.0, a21_ = 0.0, a22_ = 1.0;
  double tx_ = 0.0, ty_ = 0.0;
};

/// The bilinear hat weight max(0, 1 - |x - q|).
inline double bilinear_weight(double x, double q) {
  const double d = x > q ? x - q : q - x;
  return d < 1.0 ? 1.0 - d : 0.0;
}

/// Right-continuous derivative of bilinear_weight in x:
/// +1 on [q-1, q), -1 on [q, q+1), 0 elsewhere.
inline double bilinear_weight_ddx(double x, double q) {
  const double d = x - q;
  if (d >= -1.0 && d < 0.0) return 1.0;
  if (d >= 0.0 && d < 1.0) return -1.0;
  return 0.0;
}

/// Bilinear sample with zero padding: cells outside the grid contribute
/// nothing, so sampling far outside returns 0. Total on finite inputs.
double bilinear_sample(const ScalarGrid& grid, GridPoint at);

/// Gradient of bilinear_sample w.r.t. the sample position. At integer
/// lattice points the right-continuous subgradient is taken.
GridPoint bilinear_sample_grad(const ScalarGrid& grid, GridPoint at);

/// Bilinear sample with sample coordinates clamped to the grid bounds.
/// Used where a flow field itself is being interpolated (upsampling,
/// keypoint transfer): border vectors must keep their full magnitude
/// rather than decay into the zero padding.
double bilinear_sample_clamped(const ScalarGrid& grid, GridPoint at);

/// output(p) = bilinear_sample(grid, p + flow(p)) for every integer p.
ScalarGrid warp_scalar(const ScalarGrid& grid, const FlowField& flow);

/// Warps each displacement component of target_flow by source_flow;
/// the result realigns target_flow with respect to source_flow.
FlowField warp_flow(const FlowField& target_flow, const FlowField& source_flow);

/// flow(p) = t(p) - p on an h x w grid.
FlowField affine_to_flow(const AffineTransform& t, std::size_t h, std::size_t w);

/// Bilinear interpolation of both components onto a finer grid, with the
/// vectors rescaled by (out_w/w, out_h/h) so they stay in output-grid cell
/// units. Sample positions are edge-clamped, preserving corner vectors.
FlowField upsample_flow(const FlowField& flow, std::size_t out_h, std::size_t out_w);

/// Clamped bilinear interpolation of a flow field at a fractional position.
GridPoint sample_flow(const FlowField& flow, GridPoint at);

// SFFL flow-field file format: magic "SFFL", u32 h, u32 w (little-endian),
// then h*w pairs of f32 (dx, dy), row-major.
void save_flow(const FlowField& flow, const std::string& path);
FlowField load_flow(const std::string& path);

}  // namespace semflow

#endif  // SEMFLOW_GRID_HPP
