#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include "doctest.h"
#include "semflow/autodiff.hpp"
#include "semflow/errors.hpp"
#include "semflow/features.hpp"
#include "semflow/rng.hpp"

using namespace semflow;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

void write_u32(std::ofstream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_f32(std::ofstream& os, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

FeatureMap random_features(Rng& rng, std::size_t h, std::size_t w, std::size_t d) {
  FeatureMap f(h, w, d);
  for (double& v : f.data.raw()) v = rng.uniform(-3.0, 3.0);
  return f;
}

Image random_image(Rng& rng, std::size_t h, std::size_t w) {
  Image img;
  img.h = h;
  img.w = w;
  img.channels = 1;
  img.pixels.resize(h * w);
  for (double& v : img.pixels) v = rng.uniform();
  return img;
}

}  // namespace

TEST_CASE("feature file round-trip keeps f32-exact values") {
  TempFile f("test_feat_rt.sfnf");
  Rng rng(11);
  const FeatureMap orig = random_features(rng, 3, 4, 5);
  save_feature_map(f.path, orig);
  const FeatureMap back = load_feature_map(f.path);
  REQUIRE(back.h == 3);
  REQUIRE(back.w == 4);
  REQUIRE(back.d == 5);
  for (std::size_t i = 0; i < orig.data.size(); ++i) {
    CHECK(back.data[i] == static_cast<double>(static_cast<float>(orig.data[i])));
  }
}

TEST_CASE("feature loader rejects malformed files") {
  TempFile f("test_feat_bad.sfnf");

  SUBCASE("bad magic") {
    std::ofstream os(f.path, std::ios::binary);
    os.write("NOPE", 4);
    write_u32(os, 1);
    write_u32(os, 1);
    write_u32(os, 1);
    write_f32(os, 0.0f);
    os.close();
    CHECK_THROWS_AS(load_feature_map(f.path), FormatError);
  }
  SUBCASE("zero dimension") {
    std::ofstream os(f.path, std::ios::binary);
    os.write("SFNF", 4);
    write_u32(os, 2);
    write_u32(os, 0);
    write_u32(os, 3);
    os.close();
    CHECK_THROWS_AS(load_feature_map(f.path), FormatError);
  }
  SUBCASE("truncated payload") {
    std::ofstream os(f.path, std::ios::binary);
    os.write("SFNF", 4);
    write_u32(os, 1);
    write_u32(os, 1);
    write_u32(os, 2);
    write_f32(os, 1.0f);  // one of two values
    os.close();
    CHECK_THROWS_AS(load_feature_map(f.path), FormatError);
  }
  SUBCASE("non-finite value") {
    std::ofstream os(f.path, std::ios::binary);
    os.write("SFNF", 4);
    write_u32(os, 1);
    write_u32(os, 1);
    write_u32(os, 1);
    write_f32(os, std::numeric_limits<float>::quiet_NaN());
    os.close();
    CHECK_THROWS_AS(load_feature_map(f.path), NumericError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_feature_map("test_feat_missing.sfnf"), FormatError);
  }
}

TEST_CASE("normalize_features gives every nonzero cell unit length") {
  Rng rng(21);
  const FeatureMap f = random_features(rng, 4, 5, 8);
  const FeatureMap n = normalize_features(f);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 5; ++x) {
      double s = 0.0;
      for (std::size_t c = 0; c < 8; ++c) s += n.data.at3(y, x, c) * n.data.at3(y, x, c);
      CHECK(std::sqrt(s) == doctest::Approx(1.0).epsilon(1e-12));
      // Direction is preserved: normalized vector is a positive multiple.
      const double ratio = n.data.at3(y, x, 0) / f.data.at3(y, x, 0);
      for (std::size_t c = 0; c < 8; ++c)
        CHECK(n.data.at3(y, x, c) == doctest::Approx(f.data.at3(y, x, c) * ratio).epsilon(1e-12));
    }
}

TEST_CASE("normalize_features leaves zero cells alone and counts them") {
  FeatureMap f(2, 2, 3);
  f.data.at3(0, 1, 0) = 2.0;
  f.data.at3(1, 0, 1) = -1.0;
  std::size_t zeros = 123;
  const FeatureMap n = normalize_features(f, &zeros);
  CHECK(zeros == 2);  // cells (0,0) and (1,1)
  for (std::size_t c = 0; c < 3; ++c) {
    CHECK(n.data.at3(0, 0, c) == 0.0);
    CHECK(n.data.at3(1, 1, c) == 0.0);
  }
  CHECK(n.data.at3(0, 1, 0) == 1.0);
  CHECK(n.data.at3(1, 0, 1) == -1.0);
}

TEST_CASE("fresh adaptation layers have live first blocks and zero second blocks") {
  Rng rng(7);
  const AdaptationLayer layer = AdaptationLayer::make(3, 4, rng);
  REQUIRE(layer.block1.kernel.rank() == 4);
  CHECK(layer.block1.kernel.dim(0) == 3);
  CHECK(layer.block1.kernel.dim(1) == 3);
  CHECK(layer.block1.kernel.dim(2) == 4);
  CHECK(layer.block1.kernel.dim(3) == 4);
  CHECK(layer.block1.bias.size() == 4);
  double mag = 0.0;
  for (double v : layer.block1.kernel.raw()) mag += std::abs(v);
  CHECK(mag > 0.0);
  for (double v : layer.block2.kernel.raw()) CHECK(v == 0.0);
  for (double v : layer.block2.bias.raw()) CHECK(v == 0.0);
}

TEST_CASE("even adaptation kernels are rejected") {
  Rng rng(7);
  CHECK_THROWS_AS(AdaptationLayer::make(4, 4, rng), ShapeError);
}

TEST_CASE("a fresh adaptation layer is exactly the identity") {
  Rng rng(31);
  const AdaptationLayer layer = AdaptationLayer::make(3, 6, rng);
  const FeatureMap f = random_features(rng, 5, 4, 6);
  const FeatureMap out = adapt(f, layer);
  for (std::size_t i = 0; i < f.data.size(); ++i) CHECK(out.data[i] == f.data[i]);
}

TEST_CASE("adaptation matches the hand formula in the 1x1 single-channel case") {
  // out = f + k2 * relu(k1 * f + b1) + b2, per cell.
  AdaptationLayer layer;
  layer.block1.kernel = Tensor({1, 1, 1, 1});
  layer.block1.bias = Tensor({1});
  layer.block2.kernel = Tensor({1, 1, 1, 1});
  layer.block2.bias = Tensor({1});
  layer.block1.kernel[0] = 2.0;
  layer.block1.bias[0] = -0.5;
  layer.block2.kernel[0] = 3.0;
  layer.block2.bias[0] = 0.25;

  FeatureMap f(1, 2, 1);
  f.data.at3(0, 0, 0) = 1.0;   // relu active: 2*1-0.5 = 1.5
  f.data.at3(0, 1, 0) = -1.0;  // relu dead: 2*(-1)-0.5 < 0

  const FeatureMap out = adapt(f, layer);
  CHECK(out.data.at3(0, 0, 0) == doctest::Approx(1.0 + 3.0 * 1.5 + 0.25));
  CHECK(out.data.at3(0, 1, 0) == doctest::Approx(-1.0 + 0.0 + 0.25));
}

TEST_CASE("tape and plain adaptation forwards agree") {
  Rng rng(41);
  AdaptationLayer layer = AdaptationLayer::make(3, 4, rng);
  for (double& v : layer.block2.kernel.raw()) v = rng.normal() * 0.1;
  for (double& v : layer.block2.bias.raw()) v = rng.normal() * 0.1;
  const FeatureMap f = random_features(rng, 6, 5, 4);

  const FeatureMap plain = adapt(f, layer);
  const ad::Var taped =
      adapt(ad::Var::constant(f.data), ad::Var::leaf(layer.block1.kernel, true),
            ad::Var::leaf(layer.block1.bias, true), ad::Var::leaf(layer.block2.kernel, true),
            ad::Var::leaf(layer.block2.bias, true));
  for (std::size_t i = 0; i < plain.data.size(); ++i)
    CHECK(taped.value()[i] == doctest::Approx(plain.data[i]).epsilon(1e-14));
}

TEST_CASE("extractor output covers the working grid at both levels") {
  Rng rng(5);
  const Image img = random_image(rng, 40, 48);
  ToyExtractor e;
  e.working_h = 8;
  e.working_w = 8;
  e.d = 7;
  const auto [l1, l2] = extract_toy(img, e);
  CHECK(l1.h == 8);
  CHECK(l1.w == 8);
  CHECK(l1.d == 7);
  CHECK(l2.h == 8);
  CHECK(l2.w == 8);
  CHECK(l2.d == 7);
  CHECK(l1.data.all_finite());
  CHECK(l2.data.all_finite());
}

TEST_CASE("extraction is deterministic in the seed") {
  Rng rng(6);
  const Image img = random_image(rng, 32, 32);
  ToyExtractor e;
  e.working_h = 8;
  e.working_w = 8;
  const auto [a1, a2] = extract_toy(img, e);
  const auto [b1, b2] = extract_toy(img, e);
  for (std::size_t i = 0; i < a1.data.size(); ++i) CHECK(a1.data[i] == b1.data[i]);
  for (std::size_t i = 0; i < a2.data.size(); ++i) CHECK(a2.data[i] == b2.data[i]);

  ToyExtractor other = e;
  other.seed = e.seed + 1;
  const auto [c1, c2] = extract_toy(img, other);
  double diff = 0.0;
  for (std::size_t i = 0; i < a1.data.size(); ++i) diff += std::abs(a1.data[i] - c1.data[i]);
  CHECK(diff > 0.0);
}

TEST_CASE("features ignore uniform brightness shifts") {
  Rng rng(8);
  Image img = random_image(rng, 32, 32);
  Image brighter = img;
  for (double& v : brighter.pixels) v += 0.17;
  ToyExtractor e;
  e.working_h = 8;
  e.working_w = 8;
  const auto [a1, a2] = extract_toy(img, e);
  const auto [b1, b2] = extract_toy(brighter, e);
  // The shift cancels against the patch mean mathematically; rounding in
  // the shifted sums leaves differences at the last-ulp level only.
  for (std::size_t i = 0; i < a1.data.size(); ++i)
    CHECK(a1.data[i] == doctest::Approx(b1.data[i]).epsilon(1e-12));
  for (std::size_t i = 0; i < a2.data.size(); ++i)
    CHECK(a2.data[i] == doctest::Approx(b2.data[i]).epsilon(1e-12));
}

TEST_CASE("a constant image gives the same vector at every cell") {
  Image img;
  img.h = 32;
  img.w = 32;
  img.channels = 1;
  img.pixels.assign(32 * 32, 0.6);
  ToyExtractor e;
  e.working_h = 8;
  e.working_w = 8;
  const auto [l1, l2] = extract_toy(img, e);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x)
      for (std::size_t c = 0; c < e.d; ++c) {
        // Level 1 cells see byte-identical patches, so they are equal
        // bitwise. Level 2 passes through bilinear upsampling whose
        // weights vary per cell; a constant map survives only to within
        // rounding of the weight recombination.
        CHECK(l1.data.at3(y, x, c) == l1.data.at3(0, 0, c));
        CHECK(l2.data.at3(y, x, c) == doctest::Approx(l2.data.at3(0, 0, c)).epsilon(1e-12));
      }
}

TEST_CASE("whole-stride shifts move interior features by whole cells") {
  // Working 8x8 on a 32x32 image: level-1 stride 4, level-2 stride 8.
  // Shifting content right by 8 pixels moves level 1 by two cells and
  // level 2 by one coarse cell; after upsampling both levels shift by
  // two working cells wherever no border content or edge clamping is
  // involved.
  Rng rng(9);
  const std::size_t shift = 8;
  const Image img = random_image(rng, 32, 32);
  Image moved = random_image(rng, 32, 32);  // fresh noise where content slides in
  for (std::size_t y = 0; y < 32; ++y)
    for (std::size_t x = shift; x < 32; ++x) moved.at(y, x) = img.at(y, x - shift);

  ToyExtractor e;
  e.working_h = 8;
  e.working_w = 8;
  const auto [a1, a2] = extract_toy(img, e);
  const auto [b1, b2] = extract_toy(moved, e);

  // Columns 3..6: far enough right that no patch touches slid-in noise,
  // far enough left that level-2 upsampling does not clamp at the border.
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 3; x < 7; ++x)
      for (std::size_t c = 0; c < e.d; ++c) {
        CHECK(b1.data.at3(y, x, c) == doctest::Approx(a1.data.at3(y, x - 2, c)).epsilon(1e-12));
        CHECK(b2.data.at3(y, x, c) == doctest::Approx(a2.data.at3(y, x - 2, c)).epsilon(1e-12));
      }
}

TEST_CASE("extractor rejects odd grids and undersized images") {
  Rng rng(10);
  const Image img = random_image(rng, 32, 32);
  ToyExtractor odd;
  odd.working_h = 7;
  odd.working_w = 8;
  CHECK_THROWS_AS(extract_toy(img, odd), ShapeError);

  ToyExtractor big;
  big.working_h = 20;
  big.working_w = 20;
  CHECK_THROWS_AS(extract_toy(img, big), ShapeError);  // needs at least 40x40
}
