#include "semflow/losses.hpp"

#include <cmath>
#include <iostream>

#include "semflow/errors.hpp"

namespace semflow {

ad::Var var_from_flow(const FlowField& flow, bool requires_grad) {
  Tensor t({flow.h, flow.w, 2});
  for (std::size_t y = 0; y < flow.h; ++y)
    for (std::size_t x = 0; x < flow.w; ++x) {
      t.at3(y, x, 0) = flow.dx_at(y, x);
      t.at3(y, x, 1) = flow.dy_at(y, x);
    }
  return ad::Var::leaf(std::move(t), requires_grad);
}

ad::Var warp_scalar_var(const ad::Var& values, const ad::Var& flow) {
  const Tensor& vv = values.value();
  const Tensor& fv = flow.value();
  if (vv.rank() != 2) throw ShapeError("warp: values must be (h,w)");
  if (fv.rank() != 3 || fv.dim(2) != 2) throw ShapeError("warp: flow must be (h,w,2)");
  if (vv.dim(0) != fv.dim(0) || vv.dim(1) != fv.dim(1))
    throw ShapeError("warp: values and flow dims differ");
  const std::size_t h = vv.dim(0), w = vv.dim(1);

  Tensor out({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double sx = static_cast<double>(x) + fv.at3(y, x, 0);
      const double sy = static_cast<double>(y) + fv.at3(y, x, 1);
      const long x0 = static_cast<long>(std::floor(sx));
      const long y0 = static_cast<long>(std::floor(sy));
      double acc = 0.0;
      for (long qy = y0; qy <= y0 + 1; ++qy) {
        if (qy < 0 || qy >= static_cast<long>(h)) continue;
        const double wy = bilinear_weight(sy, static_cast<double>(qy));
        for (long qx = x0; qx <= x0 + 1; ++qx) {
          if (qx < 0 || qx >= static_cast<long>(w)) continue;
          acc += vv.at2(static_cast<std::size_t>(qy), static_cast<std::size_t>(qx)) *
                 bilinear_weight(sx, static_cast<double>(qx)) * wy;
        }
      }
      out.at2(y, x) = acc;
    }

  return ad::make_node(
      std::move(out), {values, flow},
      [h, w](const Tensor& g, const std::vector<ad::NodePtr>& ps) {
        const Tensor& V = ps[0]->value;
        const Tensor& F = ps[1]->value;
        const bool need_v = ps[0]->requires_grad;
        const bool need_f = ps[1]->requires_grad;
        Tensor& gv = ps[0]->grad;
        Tensor& gf = ps[1]->grad;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double go = g.at2(y, x);
            if (go == 0.0) continue;
            const double sx = static_cast<double>(x) + F.at3(y, x, 0);
            const double sy = static_cast<double>(y) + F.at3(y, x, 1);
            const long x0 = static_cast<long>(std::floor(sx));
            const long y0 = static_cast<long>(std::floor(sy));
            // Scatter into the sampled cells; the flow gradient needs the
            // 3x3 neighborhood where the subgradient of the hat is live.
            double dgx = 0.0, dgy = 0.0;
            for (long qy = y0 - 1; qy <= y0 + 1; ++qy) {
              if (qy < 0 || qy >= static_cast<long>(h)) continue;
              const double wy = bilinear_weight(sy, static_cast<double>(qy));
              const double ddy = bilinear_weight_ddx(sy, static_cast<double>(qy));
              for (long qx = x0 - 1; qx <= x0 + 1; ++qx) {
                if (qx < 0 || qx >= static_cast<long>(w)) continue;
                const double wx = bilinear_weight(sx, static_cast<double>(qx));
                const double ddx = bilinear_weight_ddx(sx, static_cast<double>(qx));
                const double v =
                    V.at2(static_cast<std::size_t>(qy), static_cast<std::size_t>(qx));
                if (need_v && wx != 0.0 && wy != 0.0)
                  gv.at2(static_cast<std::size_t>(qy), static_cast<std::size_t>(qx)) +=
                      go * wx * wy;
                dgx += v * ddx * wy;
                dgy += v * wx * ddy;
              }
            }
            if (need_f) {
              gf.at3(y, x, 0) += go * dgx;
              gf.at3(y, x, 1) += go * dgy;
            }
          }
      });
}

namespace {

Tensor mask_tensor(const Mask& m) {
  Tensor t({m.h, m.w});
  t.raw() = m.values;
  return t;
}

Tensor gate_tensor(const Mask& m) {
  Tensor t({m.h, m.w});
  for (std::size_t i = 0; i < m.values.size(); ++i) t[i] = m.values[i] > 0.5 ? 1.0 : 0.0;
  return t;
}

void check_loss_dims(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms, const Mask& Mt) {
  const Tensor& fs = Fs.value();
  const Tensor& ft = Ft.value();
  if (fs.rank() != 3 || fs.dim(2) != 2 || ft.rank() != 3 || ft.dim(2) != 2)
    throw ShapeError("losses: flows must be (h,w,2)");
  const std::size_t h = fs.dim(0), w = fs.dim(1);
  if (ft.dim(0) != h || ft.dim(1) != w || Ms.h != h || Ms.w != w || Mt.h != h || Mt.w != w)
    throw ShapeError("losses: mask and flow dims differ");
}

ad::Var zero_scalar() { return ad::Var::constant(Tensor::scalar(0.0)); }

// Mean squared reconstruction error of own_mask from other_mask warped
// along own_flow, normalized by the full cell count.
ad::Var mask_direction(const ad::Var& own_flow, const Mask& own_mask, const Mask& other_mask) {
  ad::Var warped = warp_scalar_var(ad::Var::constant(mask_tensor(other_mask)), own_flow);
  ad::Var d = ad::sub(ad::Var::constant(mask_tensor(own_mask)), warped);
  return ad::scale(ad::sum(ad::mul(d, d)), 1.0 / static_cast<double>(own_mask.pixel_count()));
}

ad::Var flow_direction(const ad::Var& own_flow, const ad::Var& other_flow, const Mask& own_mask,
                       const char* dir) {
  const std::size_t nf = binarize(own_mask).foreground_count();
  if (nf == 0) {
    std::cerr << "flow consistency: empty foreground mask (" << dir
              << " direction), term set to 0\n";
    return zero_scalar();
  }
  ad::Var gate = ad::Var::constant(gate_tensor(own_mask));
  ad::Var back_x = warp_scalar_var(ad::slice_last(other_flow, 0), own_flow);
  ad::Var back_y = warp_scalar_var(ad::slice_last(other_flow, 1), own_flow);
  ad::Var rx = ad::mul(ad::add(ad::slice_last(own_flow, 0), back_x), gate);
  ad::Var ry = ad::mul(ad::add(ad::slice_last(own_flow, 1), back_y), gate);
  ad::Var s = ad::add(ad::sum(ad::mul(rx, rx)), ad::sum(ad::mul(ry, ry)));
  return ad::scale(s, 1.0 / static_cast<double>(nf));
}

ad::Var smooth_direction(const ad::Var& own_flow, const Mask& own_mask) {
  const std::size_t nf = binarize(own_mask).foreground_count();
  if (nf == 0) return zero_scalar();
  ad::Var gate = ad::Var::constant(gate_tensor(own_mask));
  ad::Var acc;
  for (std::size_t comp = 0; comp < 2; ++comp) {
    ad::Var f = ad::slice_last(own_flow, comp);
    ad::Var gx = ad::sum(ad::abs(ad::mul(ad::diff_x(f), gate)));
    ad::Var gy = ad::sum(ad::abs(ad::mul(ad::diff_y(f), gate)));
    ad::Var both = ad::add(gx, gy);
    acc = comp == 0 ? both : ad::add(acc, both);
  }
  return ad::scale(acc, 1.0 / static_cast<double>(nf));
}

}  // namespace

ad::Var mask_consistency_var(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms,
                             const Mask& Mt) {
  check_loss_dims(Fs, Ft, Ms, Mt);
  return ad::add(mask_direction(Fs, Ms, Mt), mask_direction(Ft, Mt, Ms));
}

ad::Var flow_consistency_var(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms,
                             const Mask& Mt) {
  check_loss_dims(Fs, Ft, Ms, Mt);
  return ad::add(flow_direction(Fs, Ft, Ms, "source"), flow_direction(Ft, Fs, Mt, "target"));
}

ad::Var smoothness_var(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms, const Mask& Mt) {
  check_loss_dims(Fs, Ft, Ms, Mt);
  return ad::add(smooth_direction(Fs, Ms), smooth_direction(Ft, Mt));
}

LossVars total_loss_var(const ad::Var& Fs, const ad::Var& Ft, const Mask& Ms, const Mask& Mt,
                        const LossWeights& w) {
  LossVars out;
  out.mask_term = mask_consistency_var(Fs, Ft, Ms, Mt);
  out.flow_term = flow_consistency_var(Fs, Ft, Ms, Mt);
  out.smooth_term = smoothness_var(Fs, Ft, Ms, Mt);
  out.total = ad::add(ad::add(ad::scale(out.mask_term, w.lambda_mask),
                              ad::scale(out.flow_term, w.lambda_flow)),
                      ad::scale(out.smooth_term, w.lambda_smooth));
  return out;
}

double mask_consistency(const Mask& Ms, const Mask& Mt, const FlowField& Fs,
                        const FlowField& Ft) {
  return mask_consistency_var(var_from_flow(Fs, false), var_from_flow(Ft, false), Ms, Mt)
      .value()[0];
}

double flow_consistency(const FlowField& Fs, const FlowField& Ft, const Mask& Ms,
                        const Mask& Mt) {
  return flow_consistency_var(var_from_flow(Fs, false), var_from_flow(Ft, false), Ms, Mt)
      .value()[0];
}

double smoothness(const FlowField& Fs, const FlowField& Ft, const Mask& Ms, const Mask& Mt) {
  return smoothness_var(var_from_flow(Fs, false), var_from_flow(Ft, false), Ms, Mt).value()[0];
}

LossReport total_loss(const FlowField& Fs, const FlowField& Ft, const Mask& Ms, const Mask& Mt,
                      const LossWeights& w) {
  const LossVars v =
      total_loss_var(var_from_flow(Fs, false), var_from_flow(Ft, false), Ms, Mt, w);
  LossReport r;
  r.total = v.total.value()[0];
  r.mask_term = v.mask_term.value()[0];
  r.flow_term = v.flow_term.value()[0];
  r.smooth_term = v.smooth_term.value()[0];
  return r;
}

}  // namespace semflow
