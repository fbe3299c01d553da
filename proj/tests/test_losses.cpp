#include <cmath>
#include <cstddef>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "semflow/errors.hpp"
#include "semflow/losses.hpp"
#include "semflow/rng.hpp"

using namespace semflow;

namespace {

// Everything below reimplements the objective with plain loops and an
// inline zero-padded bilinear sample, sharing nothing with the library
// versions beyond the definitions themselves.

double hat(double a, double b) { return std::max(0.0, 1.0 - std::abs(a - b)); }

double sample0(const std::vector<double>& g, std::size_t h, std::size_t w, double sx, double sy) {
  double acc = 0.0;
  for (std::size_t qy = 0; qy < h; ++qy)
    for (std::size_t qx = 0; qx < w; ++qx)
      acc += g[qy * w + qx] * hat(sx, static_cast<double>(qx)) * hat(sy, static_cast<double>(qy));
  return acc;
}

double mask_oracle_dir(const FlowField& own, const Mask& own_mask, const Mask& other_mask) {
  double sse = 0.0;
  for (std::size_t y = 0; y < own.h; ++y)
    for (std::size_t x = 0; x < own.w; ++x) {
      const double sx = static_cast<double>(x) + own.dx_at(y, x);
      const double sy = static_cast<double>(y) + own.dy_at(y, x);
      const double d = own_mask.at(y, x) - sample0(other_mask.values, own.h, own.w, sx, sy);
      sse += d * d;
    }
  return sse / static_cast<double>(own.h * own.w);
}

double mask_oracle(const Mask& Ms, const Mask& Mt, const FlowField& Fs, const FlowField& Ft) {
  return mask_oracle_dir(Fs, Ms, Mt) + mask_oracle_dir(Ft, Mt, Ms);
}

double flow_oracle_dir(const FlowField& own, const FlowField& other, const Mask& own_mask) {
  std::size_t nf = 0;
  for (double v : own_mask.values)
    if (v > 0.5) ++nf;
  if (nf == 0) return 0.0;
  double sse = 0.0;
  for (std::size_t y = 0; y < own.h; ++y)
    for (std::size_t x = 0; x < own.w; ++x) {
      if (!(own_mask.at(y, x) > 0.5)) continue;
      const double sx = static_cast<double>(x) + own.dx_at(y, x);
      const double sy = static_cast<double>(y) + own.dy_at(y, x);
      const double rx = own.dx_at(y, x) + sample0(other.dx, own.h, own.w, sx, sy);
      const double ry = own.dy_at(y, x) + sample0(other.dy, own.h, own.w, sx, sy);
      sse += rx * rx + ry * ry;
    }
  return sse / static_cast<double>(nf);
}

double flow_oracle(const FlowField& Fs, const FlowField& Ft, const Mask& Ms, const Mask& Mt) {
  return flow_oracle_dir(Fs, Ft, Ms) + flow_oracle_dir(Ft, Fs, Mt);
}

double smooth_oracle_dir(const FlowField& own, const Mask& own_mask) {
  std::size_t nf = 0;
  for (double v : own_mask.values)
    if (v > 0.5) ++nf;
  if (nf == 0) return 0.0;
  double acc = 0.0;
  for (const std::vector<double>* comp : {&own.dx, &own.dy})
    for (std::size_t y = 0; y < own.h; ++y)
      for (std::size_t x = 0; x < own.w; ++x) {
        if (!(own_mask.at(y, x) > 0.5)) continue;
        const double f = (*comp)[y * own.w + x];
        if (x + 1 < own.w) acc += std::abs((*comp)[y * own.w + x + 1] - f);
        if (y + 1 < own.h) acc += std::abs((*comp)[(y + 1) * own.w + x] - f);
      }
  return acc / static_cast<double>(nf);
}

double smooth_oracle(const FlowField& Fs, const FlowField& Ft, const Mask& Ms, const Mask& Mt) {
  return smooth_oracle_dir(Fs, Ms) + smooth_oracle_dir(Ft, Mt);
}

FlowField random_flow(Rng& rng, std::size_t h, std::size_t w, double mag) {
  FlowField f(h, w);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.dx[i] = rng.uniform(-mag, mag);
    f.dy[i] = rng.uniform(-mag, mag);
  }
  return f;
}

Mask random_mask(Rng& rng, std::size_t h, std::size_t w, double fg_rate) {
  Mask m(h, w);
  for (double& v : m.values) v = rng.uniform() < fg_rate ? 1.0 : 0.0;
  return m;
}

// Flow tensor whose fractional parts stay in [0.2, 0.8] and whose forward
// differences are bounded away from zero, so neither the warp nor the L1
// smoothness sits on a kink during finite differencing. The multiplier
// must be coprime with 13.
Tensor kink_free_flow(Rng& rng, std::size_t h, std::size_t w, std::size_t mult) {
  Tensor t({h, w, 2});
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double frac = 0.2 + 0.6 * static_cast<double>((i * mult) % 13) / 13.0;
    t[i] = static_cast<double>(static_cast<long>(rng.uniform_index(3)) - 1) + frac;
  }
  return t;
}

}  // namespace

TEST_CASE("taped warp agrees with the grid warp") {
  Rng rng(201);
  ScalarGrid g(5, 6);
  for (double& v : g.values) v = rng.uniform(-2.0, 2.0);
  const FlowField f = random_flow(rng, 5, 6, 2.5);

  const ScalarGrid plain = warp_scalar(g, f);
  Tensor vt({5, 6});
  vt.raw() = g.values;
  const ad::Var taped = warp_scalar_var(ad::Var::constant(vt), var_from_flow(f, false));
  for (std::size_t i = 0; i < plain.values.size(); ++i)
    CHECK(taped.value()[i] == doctest::Approx(plain.values[i]).epsilon(1e-13));
}

TEST_CASE("taped warp passes finite differences in values and flow") {
  Rng rng(202);
  const Tensor values = gradcheck::rand_tensor(rng, {4, 4}, -2.0, 2.0);
  const Tensor flow = kink_free_flow(rng, 4, 4, 7);
  const double err = gradcheck::max_grad_error(
      [](const std::vector<ad::Var>& in) {
        const ad::Var w = warp_scalar_var(in[0], in[1]);
        return ad::sum(ad::mul(w, w));
      },
      {values, flow});
  CHECK(err < 1e-6);
}

TEST_CASE("taped warp validates shapes") {
  const ad::Var v2 = ad::Var::constant(Tensor({3, 3}));
  const ad::Var v3 = ad::Var::constant(Tensor({3, 3, 1}));
  const ad::Var f = ad::Var::constant(Tensor({3, 3, 2}));
  const ad::Var f_bad = ad::Var::constant(Tensor({3, 3, 3}));
  const ad::Var f_small = ad::Var::constant(Tensor({2, 3, 2}));
  CHECK_THROWS_AS(warp_scalar_var(v3, f), ShapeError);
  CHECK_THROWS_AS(warp_scalar_var(v2, f_bad), ShapeError);
  CHECK_THROWS_AS(warp_scalar_var(v2, f_small), ShapeError);
}

TEST_CASE("each loss term equals its direct-summation oracle") {
  Rng rng(203);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t h = 4 + rng.uniform_index(3);
    const std::size_t w = 4 + rng.uniform_index(3);
    const FlowField Fs = random_flow(rng, h, w, 2.0);
    const FlowField Ft = random_flow(rng, h, w, 2.0);
    const Mask Ms = random_mask(rng, h, w, 0.5);
    const Mask Mt = random_mask(rng, h, w, 0.5);

    CHECK(mask_consistency(Ms, Mt, Fs, Ft) ==
          doctest::Approx(mask_oracle(Ms, Mt, Fs, Ft)).epsilon(1e-12));
    CHECK(flow_consistency(Fs, Ft, Ms, Mt) ==
          doctest::Approx(flow_oracle(Fs, Ft, Ms, Mt)).epsilon(1e-12));
    CHECK(smoothness(Fs, Ft, Ms, Mt) ==
          doctest::Approx(smooth_oracle(Fs, Ft, Ms, Mt)).epsilon(1e-12));
  }
}

TEST_CASE("mask term is normalized by the full cell count") {
  // 1x3 strip: Ms = [1,0,0], Mt = [0,0,1], unit shifts. Each direction
  // misplaces one cell, SSE 2 over 3 cells.
  FlowField Fs(1, 3);
  FlowField Ft(1, 3);
  for (std::size_t x = 0; x < 3; ++x) {
    Fs.dx_at(0, x) = 1.0;
    Ft.dx_at(0, x) = -1.0;
  }
  Mask Ms(1, 3);
  Ms.at(0, 0) = 1.0;
  Mask Mt(1, 3);
  Mt.at(0, 2) = 1.0;
  CHECK(mask_consistency(Ms, Mt, Fs, Ft) == doctest::Approx(4.0 / 3.0));
}

TEST_CASE("flow term is normalized by the foreground count and thresholds at one half") {
  FlowField Fs(1, 3);
  Fs.dx_at(0, 0) = 0.5;
  const FlowField Ft(1, 3);
  Mask Ms(1, 3);
  Ms.values = {0.7, 0.6, 0.3};  // two foreground cells after binarizing
  Mask Mt(1, 3);
  Mt.at(0, 1) = 1.0;
  // Source direction: residual (0.5)^2 at cell 0, over N=2. Target
  // direction: zero flows, zero residual.
  CHECK(flow_consistency(Fs, Ft, Ms, Mt) == doctest::Approx(0.125));
}

TEST_CASE("smoothness sums gated forward differences over the foreground count") {
  FlowField Fs(1, 3);
  Fs.dx = {0.0, 1.0, 3.0};
  const FlowField Ft(1, 3);
  Mask Ms(1, 3);
  Ms.values = {1.0, 1.0, 0.0};  // gates |1-0| and |3-1|
  Mask Mt(1, 3);
  Mt.at(0, 1) = 1.0;
  CHECK(smoothness(Fs, Ft, Ms, Mt) == doctest::Approx(1.5));
}

TEST_CASE("directions with empty foreground contribute zero, not NaN") {
  Rng rng(204);
  const FlowField Fs = random_flow(rng, 4, 4, 1.0);
  const FlowField Ft = random_flow(rng, 4, 4, 1.0);
  const Mask empty(4, 4);
  Mask Mt = random_mask(rng, 4, 4, 0.6);
  Mt.at(0, 0) = 1.0;  // at least one foreground cell

  const double f = flow_consistency(Fs, Ft, empty, Mt);
  CHECK(std::isfinite(f));
  CHECK(f == doctest::Approx(flow_oracle_dir(Ft, Fs, Mt)).epsilon(1e-12));

  const double s = smoothness(Fs, Ft, empty, Mt);
  CHECK(std::isfinite(s));
  CHECK(s == doctest::Approx(smooth_oracle_dir(Ft, Mt)).epsilon(1e-12));

  CHECK(flow_consistency(Fs, Ft, empty, empty) == 0.0);
  CHECK(smoothness(Fs, Ft, empty, empty) == 0.0);
}

TEST_CASE("the total is the pinned weighted combination of its terms") {
  Rng rng(205);
  const FlowField Fs = random_flow(rng, 5, 5, 1.5);
  const FlowField Ft = random_flow(rng, 5, 5, 1.5);
  const Mask Ms = random_mask(rng, 5, 5, 0.5);
  const Mask Mt = random_mask(rng, 5, 5, 0.5);
  LossWeights w;
  w.lambda_mask = 2.0;
  w.lambda_flow = 7.0;
  w.lambda_smooth = 0.25;
  const LossReport r = total_loss(Fs, Ft, Ms, Mt, w);
  CHECK(r.mask_term == doctest::Approx(mask_consistency(Ms, Mt, Fs, Ft)).epsilon(1e-14));
  CHECK(r.flow_term == doctest::Approx(flow_consistency(Fs, Ft, Ms, Mt)).epsilon(1e-14));
  CHECK(r.smooth_term == doctest::Approx(smoothness(Fs, Ft, Ms, Mt)).epsilon(1e-14));
  CHECK(r.total ==
        doctest::Approx(2.0 * r.mask_term + 7.0 * r.flow_term + 0.25 * r.smooth_term)
            .epsilon(1e-14));
}

TEST_CASE("default weights are 3, 16, one half") {
  const LossWeights w;
  CHECK(w.lambda_mask == 3.0);
  CHECK(w.lambda_flow == 16.0);
  CHECK(w.lambda_smooth == 0.5);
}

TEST_CASE("identical masks under zero flow cost nothing") {
  Rng rng(206);
  const Mask m = random_mask(rng, 6, 6, 0.4);
  const FlowField zero(6, 6);
  const LossReport r = total_loss(zero, zero, m, m, LossWeights{});
  CHECK(r.total == 0.0);
  CHECK(r.mask_term == 0.0);
  CHECK(r.flow_term == 0.0);
  CHECK(r.smooth_term == 0.0);
}

TEST_CASE("a consistent whole-cell translation pair costs nothing") {
  // Blob shifted by (+2,+1) cells, flows matching the shift exactly. All
  // warps stay in-bounds for the cells that matter, so every term is an
  // exact zero.
  const std::size_t h = 8, w = 8;
  Mask Ms(h, w);
  for (std::size_t y = 1; y <= 4; ++y)
    for (std::size_t x = 1; x <= 4; ++x) Ms.at(y, x) = 1.0;
  Mask Mt(h, w);
  for (std::size_t y = 2; y <= 5; ++y)
    for (std::size_t x = 3; x <= 6; ++x) Mt.at(y, x) = 1.0;

  FlowField Fs(h, w);
  FlowField Ft(h, w);
  for (std::size_t i = 0; i < Fs.size(); ++i) {
    Fs.dx[i] = 2.0;
    Fs.dy[i] = 1.0;
    Ft.dx[i] = -2.0;
    Ft.dy[i] = -1.0;
  }
  const LossReport r = total_loss(Fs, Ft, Ms, Mt, LossWeights{});
  CHECK(r.mask_term == 0.0);
  CHECK(r.flow_term == 0.0);
  CHECK(r.smooth_term == 0.0);
}

TEST_CASE("loss terms reject mismatched dimensions") {
  const FlowField f44(4, 4);
  const FlowField f45(4, 5);
  const Mask m44(4, 4);
  const Mask m45(4, 5);
  CHECK_THROWS_AS(total_loss(f44, f45, m44, m44, LossWeights{}), ShapeError);
  CHECK_THROWS_AS(total_loss(f44, f44, m45, m44, LossWeights{}), ShapeError);
  CHECK_THROWS_AS(total_loss(f44, f44, m44, m45, LossWeights{}), ShapeError);
  CHECK_THROWS_AS(
      mask_consistency_var(ad::Var::constant(Tensor({4, 4})), var_from_flow(f44, false), m44, m44),
      ShapeError);
}

TEST_CASE("the composed objective passes finite differences in both flows") {
  Rng rng(207);
  const std::size_t h = 4, w = 4;
  const Tensor fs = kink_free_flow(rng, h, w, 7);
  const Tensor ft = kink_free_flow(rng, h, w, 5);
  Mask Ms = random_mask(rng, h, w, 0.6);
  Mask Mt = random_mask(rng, h, w, 0.6);
  Ms.at(1, 1) = 1.0;
  Mt.at(2, 2) = 1.0;

  const LossWeights weights;
  const double err = gradcheck::max_grad_error(
      [&](const std::vector<ad::Var>& in) {
        return total_loss_var(in[0], in[1], Ms, Mt, weights).total;
      },
      {fs, ft});
  CHECK(err < 1e-5);
}

TEST_CASE("var_from_flow round-trips exact values and sets leaf status") {
  Rng rng(208);
  const FlowField f = random_flow(rng, 3, 4, 2.0);
  const ad::Var v = var_from_flow(f, true);
  CHECK(v.requires_grad());
  REQUIRE(v.value().rank() == 3);
  for (std::size_t y = 0; y < 3; ++y)
    for (std::size_t x = 0; x < 4; ++x) {
      CHECK(v.value().at3(y, x, 0) == f.dx_at(y, x));
      CHECK(v.value().at3(y, x, 1) == f.dy_at(y, x));
    }
  CHECK_FALSE(var_from_flow(f, false).requires_grad());
}
