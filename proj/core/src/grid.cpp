#include "semflow/grid.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "binio.hpp"

namespace semflow {

AffineTransform::AffineTransform(double a11, double a12, double a21, double a22,
                                 double tx, double ty)
    : a11_(a11), a12_(a12), a21_(a21), a22_(a22), tx_(tx), ty_(ty) {
  if (determinant() == 0.0) {
    throw NumericError("affine transform is singular");
  }
}

AffineTransform AffineTransform::translation(double tx, double ty) {
  return AffineTransform(1.0, 0.0, 0.0, 1.0, tx, ty);
}

AffineTransform AffineTransform::rotation_about(double radians, double cx, double cy) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  // Conjugate the rotation by a translation to the center.
  return AffineTransform(c, -s, s, c, cx - c * cx + s * cy, cy - s * cx - c * cy);
}

GridPoint AffineTransform::apply(GridPoint p) const {
  return {a11_ * p.x + a12_ * p.y + tx_, a21_ * p.x + a22_ * p.y + ty_};
}

AffineTransform AffineTransform::inverse() const {
  const double det = determinant();
  const double i11 = a22_ / det;
  const double i12 = -a12_ / det;
  const double i21 = -a21_ / det;
  const double i22 = a11_ / det;
  return AffineTransform(i11, i12, i21, i22, -(i11 * tx_ + i12 * ty_),
                         -(i21 * tx_ + i22 * ty_));
}

AffineTransform AffineTransform::then(const AffineTransform& n) const {
  return AffineTransform(n.a11_ * a11_ + n.a12_ * a21_, n.a11_ * a12_ + n.a12_ * a22_,
                         n.a21_ * a11_ + n.a22_ * a21_, n.a21_ * a12_ + n.a22_ * a22_,
                         n.a11_ * tx_ + n.a12_ * ty_ + n.tx_,
                         n.a21_ * tx_ + n.a22_ * ty_ + n.ty_);
}

double bilinear_sample(const ScalarGrid& grid, GridPoint at) {
  // The double sum over all cells collapses to the <= 4 cells whose hat
  // weights are nonzero.
  const long x0 = static_cast<long>(std::floor(at.x));
  const long y0 = static_cast<long>(std::floor(at.y));
  double acc = 0.0;
  for (long qy = y0; qy <= y0 + 1; ++qy) {
    if (qy < 0 || qy >= static_cast<long>(grid.h)) continue;
    const double wy = bilinear_weight(at.y, static_cast<double>(qy));
    if (wy == 0.0) continue;
    for (long qx = x0; qx <= x0 + 1; ++qx) {
      if (qx < 0 || qx >= static_cast<long>(grid.w)) continue;
      const double wx = bilinear_weight(at.x, static_cast<double>(qx));
      if (wx == 0.0) continue;
      acc += grid.at(static_cast<std::size_t>(qy), static_cast<std::size_t>(qx)) * wx * wy;
    }
  }
  return acc;
}

GridPoint bilinear_sample_grad(const ScalarGrid& grid, GridPoint at) {
  const long x0 = static_cast<long>(std::floor(at.x));
  const long y0 = static_cast<long>(std::floor(at.y));
  GridPoint g{0.0, 0.0};
  for (long qy = y0 - 1; qy <= y0 + 1; ++qy) {
    if (qy < 0 || qy >= static_cast<long>(grid.h)) continue;
    const double wy = bilinear_weight(at.y, static_cast<double>(qy));
    const double gy = bilinear_weight_ddx(at.y, static_cast<double>(qy));
    for (long qx = x0 - 1; qx <= x0 + 1; ++qx) {
      if (qx < 0 || qx >= static_cast<long>(grid.w)) continue;
      const double v = grid.at(static_cast<std::size_t>(qy), static_cast<std::size_t>(qx));
      const double wx = bilinear_weight(at.x, static_cast<double>(qx));
      const double gx = bilinear_weight_ddx(at.x, static_cast<double>(qx));
      g.x += v * gx * wy;
      g.y += v * wx * gy;
    }
  }
  return g;
}

double bilinear_sample_clamped(const ScalarGrid& grid, GridPoint at) {
  GridPoint c = at;
  if (c.x < 0.0) c.x = 0.0;
  if (c.y < 0.0) c.y = 0.0;
  const double xmax = static_cast<double>(grid.w) - 1.0;
  const double ymax = static_cast<double>(grid.h) - 1.0;
  if (c.x > xmax) c.x = xmax;
  if (c.y > ymax) c.y = ymax;
  return bilinear_sample(grid, c);
}

ScalarGrid warp_scalar(const ScalarGrid& grid, const FlowField& flow) {
  if (grid.h != flow.h || grid.w != flow.w) {
    throw ShapeError("warp_scalar: grid " + std::to_string(grid.h) + "x" +
                     std::to_string(grid.w) + " vs flow " + std::to_string(flow.h) + "x" +
                     std::to_string(flow.w));
  }
  ScalarGrid out(grid.h, grid.w);
  for (std::size_t y = 0; y < grid.h; ++y) {
    for (std::size_t x = 0; x < grid.w; ++x) {
      const GridPoint at{static_cast<double>(x) + flow.dx_at(y, x),
                         static_cast<double>(y) + flow.dy_at(y, x)};
      out.at(y, x) = bilinear_sample(grid, at);
    }
  }
  return out;
}

FlowField warp_flow(const FlowField& target_flow, const FlowField& source_flow) {
  if (target_flow.h != source_flow.h || target_flow.w != source_flow.w) {
    throw ShapeError("warp_flow: field dimensions differ");
  }
  ScalarGrid tx(target_flow.h, target_flow.w), ty(target_flow.h, target_flow.w);
  tx.values = target_flow.dx;
  ty.values = target_flow.dy;
  const ScalarGrid wx = warp_scalar(tx, source_flow);
  const ScalarGrid wy = warp_scalar(ty, source_flow);
  FlowField out(target_flow.h, target_flow.w);
  out.dx = wx.values;
  out.dy = wy.values;
  return out;
}

FlowField affine_to_flow(const AffineTransform& t, std::size_t h, std::size_t w) {
  FlowField out(h, w);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const GridPoint p{static_cast<double>(x), static_cast<double>(y)};
      const GridPoint q = t.apply(p);
      out.dx_at(y, x) = q.x - p.x;
      out.dy_at(y, x) = q.y - p.y;
    }
  }
  return out;
}

GridPoint sample_flow(const FlowField& flow, GridPoint at) {
  ScalarGrid gx(flow.h, flow.w), gy(flow.h, flow.w);
  gx.values = flow.dx;
  gy.values = flow.dy;
  return {bilinear_sample_clamped(gx, at), bilinear_sample_clamped(gy, at)};
}

FlowField upsample_flow(const FlowField& flow, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) {
    throw ShapeError("upsample_flow: zero output dimensions");
  }
  if (out_h < flow.h || out_w < flow.w) {
    throw ShapeError("upsample_flow: output must not be smaller than input");
  }
  const double sx = static_cast<double>(out_w) / static_cast<double>(flow.w);
  const double sy = static_cast<double>(out_h) / static_cast<double>(flow.h);
  ScalarGrid gx(flow.h, flow.w), gy(flow.h, flow.w);
  gx.values = flow.dx;
  gy.values = flow.dy;
  FlowField out(out_h, out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      // Cell-center alignment between the two grids.
      const GridPoint at{(static_cast<double>(x) + 0.5) / sx - 0.5,
                         (static_cast<double>(y) + 0.5) / sy - 0.5};
      out.dx_at(y, x) = bilinear_sample_clamped(gx, at) * sx;
      out.dy_at(y, x) = bilinear_sample_clamped(gy, at) * sy;
    }
  }
  return out;
}

using binio::read_f32le;
using binio::read_u32le;
using binio::write_f32le;
using binio::write_u32le;

void save_flow(const FlowField& flow, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(path + ": cannot open for writing");
  os.write("SFFL", 4);
  write_u32le(os, static_cast<std::uint32_t>(flow.h));
  write_u32le(os, static_cast<std::uint32_t>(flow.w));
  for (std::size_t i = 0; i < flow.size(); ++i) {
    write_f32le(os, static_cast<float>(flow.dx[i]));
    write_f32le(os, static_cast<float>(flow.dy[i]));
  }
  if (!os) throw FormatError(path + ": write failed");
}

FlowField load_flow(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(path + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SFFL", 4) != 0) {
    throw FormatError(path + ": bad magic, expected SFFL");
  }
  const std::uint32_t h = read_u32le(is, path);
  const std::uint32_t w = read_u32le(is, path);
  FlowField flow(h, w);
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const float dx = read_f32le(is, path);
    const float dy = read_f32le(is, path);
    if (!std::isfinite(dx) || !std::isfinite(dy)) {
      throw NumericError(path + ": non-finite flow value");
    }
    flow.dx[i] = dx;
    flow.dy[i] = dy;
  }
  return flow;
}

}  // namespace semflow
