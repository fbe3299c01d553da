#include <cmath>
#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "semflow/errors.hpp"
#include "semflow/grid.hpp"
#include "semflow/rng.hpp"

using namespace semflow;

namespace {

// Independent definition of the warp: full double sum over every grid
// cell with hat weights, nothing shared with the implementation.
double warp_oracle_at(const ScalarGrid& g, double sx, double sy) {
  double acc = 0.0;
  for (std::size_t qy = 0; qy < g.h; ++qy)
    for (std::size_t qx = 0; qx < g.w; ++qx)
      acc += g.at(qy, qx) * bilinear_weight(sx, static_cast<double>(qx)) *
             bilinear_weight(sy, static_cast<double>(qy));
  return acc;
}

ScalarGrid random_grid(Rng& rng, std::size_t h, std::size_t w) {
  ScalarGrid g(h, w);
  for (double& v : g.values) v = rng.uniform(-2.0, 2.0);
  return g;
}

FlowField random_flow(Rng& rng, std::size_t h, std::size_t w, double amp) {
  FlowField f(h, w);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.dx[i] = rng.uniform(-amp, amp);
    f.dy[i] = rng.uniform(-amp, amp);
  }
  return f;
}

}  // namespace

TEST_CASE("bilinear weight hat shape") {
  CHECK(bilinear_weight(3.0, 3.0) == 1.0);
  CHECK(bilinear_weight(3.5, 3.0) == 0.5);
  CHECK(bilinear_weight(2.25, 3.0) == doctest::Approx(0.25));
  CHECK(bilinear_weight(4.0, 3.0) == 0.0);
  CHECK(bilinear_weight(10.0, 3.0) == 0.0);
}

TEST_CASE("bilinear weight derivative is right-continuous") {
  CHECK(bilinear_weight_ddx(2.5, 3.0) == 1.0);
  CHECK(bilinear_weight_ddx(3.0, 3.0) == -1.0);  // right limit at the peak
  CHECK(bilinear_weight_ddx(3.5, 3.0) == -1.0);
  CHECK(bilinear_weight_ddx(2.0, 3.0) == 1.0);  // right limit at the left edge
  CHECK(bilinear_weight_ddx(4.0, 3.0) == 0.0);
  CHECK(bilinear_weight_ddx(1.9, 3.0) == 0.0);
}

TEST_CASE("bilinear_sample matches the double-sum oracle") {
  Rng rng(11);
  ScalarGrid g = random_grid(rng, 6, 7);
  for (int i = 0; i < 200; ++i) {
    const double x = rng.uniform(-2.0, 9.0);
    const double y = rng.uniform(-2.0, 8.0);
    CHECK(bilinear_sample(g, {x, y}) == doctest::Approx(warp_oracle_at(g, x, y)).epsilon(1e-12));
  }
}

TEST_CASE("bilinear_sample is exact at integer points and zero far outside") {
  Rng rng(5);
  ScalarGrid g = random_grid(rng, 4, 5);
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x)
      CHECK(bilinear_sample(g, {static_cast<double>(x), static_cast<double>(y)}) == g.at(y, x));
  CHECK(bilinear_sample(g, {-5.0, 2.0}) == 0.0);
  CHECK(bilinear_sample(g, {2.0, 100.0}) == 0.0);
}

TEST_CASE("clamped sampling extends edge values") {
  Rng rng(7);
  ScalarGrid g = random_grid(rng, 4, 4);
  CHECK(bilinear_sample_clamped(g, {-3.0, 1.0}) == doctest::Approx(g.at(1, 0)));
  CHECK(bilinear_sample_clamped(g, {1.0, 9.0}) == doctest::Approx(g.at(3, 1)));
  CHECK(bilinear_sample_clamped(g, {1.5, 1.5}) == doctest::Approx(bilinear_sample(g, {1.5, 1.5})));
}

TEST_CASE("bilinear_sample_grad matches finite differences away from the lattice") {
  Rng rng(13);
  ScalarGrid g = random_grid(rng, 6, 6);
  const double h = 1e-6;
  for (int i = 0; i < 100; ++i) {
    double x = rng.uniform(0.0, 5.0);
    double y = rng.uniform(0.0, 5.0);
    // keep a margin from the kinks at integer coordinates
    if (std::abs(x - std::round(x)) < 1e-3) x += 0.01;
    if (std::abs(y - std::round(y)) < 1e-3) y += 0.01;
    const GridPoint grad = bilinear_sample_grad(g, {x, y});
    const double fdx = (bilinear_sample(g, {x + h, y}) - bilinear_sample(g, {x - h, y})) / (2 * h);
    const double fdy = (bilinear_sample(g, {x, y + h}) - bilinear_sample(g, {x, y - h})) / (2 * h);
    CHECK(grad.x == doctest::Approx(fdx).epsilon(1e-6));
    CHECK(grad.y == doctest::Approx(fdy).epsilon(1e-6));
  }
}

TEST_CASE("warp_scalar equals the brute-force double sum") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    ScalarGrid g = random_grid(rng, 8, 8);
    FlowField f = random_flow(rng, 8, 8, 3.0);
    const ScalarGrid w = warp_scalar(g, f);
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const double expect = warp_oracle_at(g, static_cast<double>(x) + f.dx_at(y, x),
                                             static_cast<double>(y) + f.dy_at(y, x));
        CHECK(std::abs(w.at(y, x) - expect) < 1e-12);
      }
  }
}

TEST_CASE("identity warp is exact") {
  Rng rng(19);
  ScalarGrid g = random_grid(rng, 5, 9);
  const ScalarGrid w = warp_scalar(g, FlowField(5, 9));
  for (std::size_t i = 0; i < g.values.size(); ++i) CHECK(w.values[i] == g.values[i]);
}

TEST_CASE("warp_scalar rejects mismatched dims") {
  ScalarGrid g(4, 4);
  CHECK_THROWS_AS(warp_scalar(g, FlowField(4, 5)), ShapeError);
}

TEST_CASE("warp_flow warps each component like a scalar") {
  Rng rng(23);
  FlowField target = random_flow(rng, 6, 6, 2.0);
  FlowField source = random_flow(rng, 6, 6, 1.5);
  const FlowField out = warp_flow(target, source);
  ScalarGrid cx(6, 6), cy(6, 6);
  cx.values = target.dx;
  cy.values = target.dy;
  const ScalarGrid wx = warp_scalar(cx, source);
  const ScalarGrid wy = warp_scalar(cy, source);
  CHECK(out.dx == wx.values);
  CHECK(out.dy == wy.values);
}

TEST_CASE("affine transform composition and inverse") {
  const AffineTransform t =
      AffineTransform::rotation_about(0.3, 2.0, 1.0).then(AffineTransform::translation(3.0, -1.0));
  const AffineTransform inv = t.inverse();
  Rng rng(29);
  for (int i = 0; i < 50; ++i) {
    const GridPoint p{rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)};
    const GridPoint q = inv.apply(t.apply(p));
    CHECK(q.x == doctest::Approx(p.x).epsilon(1e-12));
    CHECK(q.y == doctest::Approx(p.y).epsilon(1e-12));
  }
  // a.then(b) applies a first
  const AffineTransform a = AffineTransform::translation(1.0, 0.0);
  const AffineTransform b(2.0, 0.0, 0.0, 2.0, 0.0, 0.0);
  const GridPoint r = a.then(b).apply({1.0, 1.0});
  CHECK(r.x == 4.0);
  CHECK(r.y == 2.0);
}

TEST_CASE("rotation preserves area, scaling multiplies it") {
  CHECK(AffineTransform::rotation_about(1.1, 0.0, 0.0).determinant() == doctest::Approx(1.0));
  CHECK(AffineTransform(3.0, 0.0, 0.0, 2.0, 5.0, 5.0).determinant() == doctest::Approx(6.0));
}

TEST_CASE("affine_to_flow of a translation is constant") {
  const FlowField f = affine_to_flow(AffineTransform::translation(0.5, -0.25), 3, 4);
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(f.dx[i] == 0.5);
    CHECK(f.dy[i] == -0.25);
  }
}

TEST_CASE("rotation about the grid center fixes the center cell") {
  const FlowField f = affine_to_flow(AffineTransform::rotation_about(0.7, 2.0, 2.0), 5, 5);
  CHECK(f.dx_at(2, 2) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(f.dy_at(2, 2) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("upsample_flow rescales constant flow into output cell units") {
  FlowField f(4, 4);
  for (std::size_t i = 0; i < f.size(); ++i) {
    f.dx[i] = 1.0;
    f.dy[i] = -0.5;
  }
  const FlowField up = upsample_flow(f, 8, 8);
  CHECK(up.h == 8);
  CHECK(up.w == 8);
  for (std::size_t i = 0; i < up.size(); ++i) {
    CHECK(up.dx[i] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(up.dy[i] == doctest::Approx(-1.0).epsilon(1e-12));
  }
}

TEST_CASE("sample_flow interpolates and clamps") {
  FlowField f(2, 2);
  f.dx = {0.0, 1.0, 0.0, 1.0};
  f.dy = {2.0, 2.0, 4.0, 4.0};
  const GridPoint mid = sample_flow(f, {0.5, 0.5});
  CHECK(mid.x == doctest::Approx(0.5));
  CHECK(mid.y == doctest::Approx(3.0));
  const GridPoint outside = sample_flow(f, {-10.0, 0.0});
  CHECK(outside.x == 0.0);
  CHECK(outside.y == 2.0);
}

TEST_CASE("flow file round-trip keeps f32-exact values") {
  Rng rng(31);
  FlowField f = random_flow(rng, 5, 7, 4.0);
  const std::string path = "test_flow_roundtrip.sffl";
  save_flow(f, path);
  const FlowField g = load_flow(path);
  REQUIRE(g.h == f.h);
  REQUIRE(g.w == f.w);
  for (std::size_t i = 0; i < f.size(); ++i) {
    CHECK(g.dx[i] == static_cast<double>(static_cast<float>(f.dx[i])));
    CHECK(g.dy[i] == static_cast<double>(static_cast<float>(f.dy[i])));
  }
  std::remove(path.c_str());
}

TEST_CASE("flow loader rejects bad magic and truncation") {
  {
    std::ofstream os("test_flow_bad.sffl", std::ios::binary);
    os << "NOPE";
  }
  CHECK_THROWS_AS(load_flow("test_flow_bad.sffl"), FormatError);
  std::remove("test_flow_bad.sffl");

  FlowField f(3, 3);
  save_flow(f, "test_flow_trunc.sffl");
  {
    std::ifstream is("test_flow_trunc.sffl", std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::ofstream os("test_flow_trunc.sffl", std::ios::binary);
    os.write(all.data(), static_cast<std::streamsize>(all.size() - 5));
  }
  CHECK_THROWS_AS(load_flow("test_flow_trunc.sffl"), FormatError);
  std::remove("test_flow_trunc.sffl");

  CHECK_THROWS_AS(load_flow("test_flow_missing.sffl"), FormatError);
}
