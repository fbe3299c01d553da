#include "semflow/features.hpp"

#include <cmath>
#include <fstream>

#include "binio.hpp"
#include "semflow/errors.hpp"
#include "semflow/grid.hpp"

namespace semflow {

void save_feature_map(const std::string& path, const FeatureMap& f) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError(path + ": cannot open for writing");
  os.write("SFNF", 4);
  binio::write_u32le(os, static_cast<std::uint32_t>(f.h));
  binio::write_u32le(os, static_cast<std::uint32_t>(f.w));
  binio::write_u32le(os, static_cast<std::uint32_t>(f.d));
  for (double v : f.data.raw()) binio::write_f32le(os, static_cast<float>(v));
  if (!os) throw FormatError(path + ": write failed");
}

FeatureMap load_feature_map(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError(path + ": cannot open");
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "SFNF", 4) != 0) {
    throw FormatError(path + ": bad magic, expected SFNF");
  }
  const std::uint32_t h = binio::read_u32le(is, path);
  const std::uint32_t w = binio::read_u32le(is, path);
  const std::uint32_t d = binio::read_u32le(is, path);
  if (h == 0 || w == 0 || d == 0) throw FormatError(path + ": zero dimension");
  FeatureMap f(h, w, d);
  for (double& v : f.data.raw()) {
    const float x = binio::read_f32le(is, path);
    if (!std::isfinite(x)) throw NumericError(path + ": non-finite feature value");
    v = x;
  }
  return f;
}

FeatureMap normalize_features(const FeatureMap& f, std::size_t* zero_count) {
  FeatureMap out = f;
  std::size_t zeros = 0;
  for (std::size_t y = 0; y < f.h; ++y)
    for (std::size_t x = 0; x < f.w; ++x) {
      double s = 0.0;
      for (std::size_t c = 0; c < f.d; ++c) s += f.data.at3(y, x, c) * f.data.at3(y, x, c);
      const double n = std::sqrt(s);
      if (n == 0.0) {
        ++zeros;
        continue;
      }
      for (std::size_t c = 0; c < f.d; ++c) out.data.at3(y, x, c) /= n;
    }
  if (zero_count) *zero_count = zeros;
  return out;
}

AdaptationLayer AdaptationLayer::make(std::size_t kernel_size, std::size_t d, Rng& rng) {
  if (kernel_size % 2 == 0) throw ShapeError("adaptation kernel size must be odd");
  AdaptationLayer layer;
  layer.block1.kernel = Tensor({kernel_size, kernel_size, d, d});
  layer.block1.bias = Tensor({d});
  layer.block2.kernel = Tensor({kernel_size, kernel_size, d, d});
  layer.block2.bias = Tensor({d});
  const double s = std::sqrt(2.0 / static_cast<double>(kernel_size * kernel_size * d));
  for (double& v : layer.block1.kernel.raw()) v = rng.normal() * s;
  // block2 stays zero: the residual vanishes and a fresh layer is the
  // identity, so an untrained model matches the raw extractor exactly.
  return layer;
}

ad::Var adapt(const ad::Var& f, const ad::Var& k1, const ad::Var& b1, const ad::Var& k2,
              const ad::Var& b2) {
  ad::Var residual = ad::conv2d(ad::relu(ad::conv2d(f, k1, b1)), k2, b2);
  return ad::add(f, residual);
}

FeatureMap adapt(const FeatureMap& f, const AdaptationLayer& layer) {
  ad::Var out = adapt(ad::Var::constant(f.data), ad::Var::constant(layer.block1.kernel),
                      ad::Var::constant(layer.block1.bias), ad::Var::constant(layer.block2.kernel),
                      ad::Var::constant(layer.block2.bias));
  FeatureMap r(f.h, f.w, f.d);
  r.data = out.value();
  return r;
}

namespace {

// Per-cell patch summary over a window four strides wide, centered on
// the cell (edge-clamped): the overlap gives the descriptor a few pixels
// of translation tolerance, which matching at grid granularity needs.
// Remove the window mean, project through a fixed random matrix, ReLU,
// center the activations per cell, then mix into a signed d-vector. The
// centering and the signed output stage matter: rectified outputs share a
// common positive component across all cells, which would crowd every
// cell's vector into the same corner of feature space and wash out the
// correlation contrast the matcher depends on.
FeatureMap patch_level(const std::vector<double>& gray, std::size_t img_h, std::size_t img_w,
                       std::size_t gh, std::size_t gw, std::size_t sy, std::size_t sx,
                       std::size_t d, Rng rng) {
  const std::size_t ey = 4 * sy, ex = 4 * sx;  // window extent per axis
  const std::size_t npix = ey * ex;
  std::vector<double> proj(d * npix);
  std::vector<double> bias1(d);
  std::vector<double> mix(d * d);
  const double ps = 2.0 / std::sqrt(static_cast<double>(npix));
  const double ms = 1.0 / std::sqrt(static_cast<double>(d));
  for (double& v : proj) v = rng.normal() * ps;
  for (double& v : bias1) v = rng.uniform(-0.05, 0.05);
  for (double& v : mix) v = rng.normal() * ms;

  FeatureMap out(gh, gw, d);
  std::vector<double> patch(npix);
  std::vector<double> stage1(d);
  const auto clamp = [](long v, long hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
  for (std::size_t Y = 0; Y < gh; ++Y)
    for (std::size_t X = 0; X < gw; ++X) {
      const long y0 = static_cast<long>(Y * sy) - 3 * static_cast<long>(sy) / 2;
      const long x0 = static_cast<long>(X * sx) - 3 * static_cast<long>(sx) / 2;
      double mean = 0.0;
      for (std::size_t py = 0; py < ey; ++py)
        for (std::size_t px = 0; px < ex; ++px) {
          const long iy = clamp(y0 + static_cast<long>(py), static_cast<long>(img_h));
          const long ix = clamp(x0 + static_cast<long>(px), static_cast<long>(img_w));
          const double v = gray[static_cast<std::size_t>(iy) * img_w + static_cast<std::size_t>(ix)];
          patch[py * ex + px] = v;
          mean += v;
        }
      mean /= static_cast<double>(npix);
      for (double& v : patch) v -= mean;
      double smean = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        double acc = bias1[c];
        const double* row = proj.data() + c * npix;
        for (std::size_t i = 0; i < npix; ++i) acc += row[i] * patch[i];
        stage1[c] = acc > 0.0 ? acc : 0.0;
        smean += stage1[c];
      }
      smean /= static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) stage1[c] -= smean;
      for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        const double* row = mix.data() + c * d;
        for (std::size_t i = 0; i < d; ++i) acc += row[i] * stage1[i];
        out.data.at3(Y, X, c) = acc;
      }
    }
  return out;
}

FeatureMap upsample_features(const FeatureMap& f, std::size_t oh, std::size_t ow) {
  FeatureMap out(oh, ow, f.d);
  ScalarGrid g(f.h, f.w);
  for (std::size_t c = 0; c < f.d; ++c) {
    for (std::size_t y = 0; y < f.h; ++y)
      for (std::size_t x = 0; x < f.w; ++x) g.at(y, x) = f.data.at3(y, x, c);
    const double sx = static_cast<double>(f.w) / static_cast<double>(ow);
    const double sy = static_cast<double>(f.h) / static_cast<double>(oh);
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const GridPoint at{(static_cast<double>(x) + 0.5) * sx - 0.5,
                           (static_cast<double>(y) + 0.5) * sy - 0.5};
        out.data.at3(y, x, c) = bilinear_sample_clamped(g, at);
      }
  }
  return out;
}

}  // namespace

std::pair<FeatureMap, FeatureMap> extract_toy(const Image& img, const ToyExtractor& e) {
  if (e.working_h < 2 || e.working_w < 2 || e.working_h % 2 || e.working_w % 2)
    throw ShapeError("extractor working resolution must be even and >= 2");
  if (img.h < 2 * e.working_h || img.w < 2 * e.working_w)
    throw ShapeError("image smaller than extractor minimum");

  std::vector<double> gray(img.h * img.w);
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (std::size_t c = 0; c < img.channels; ++c) acc += img.at(y, x, c);
      gray[y * img.w + x] = acc / static_cast<double>(img.channels);
    }

  // Gaussian pre-smoothing, separable, edge-clamped. Warped inputs arrive
  // blurred by their resampling, and matching compares windows whose
  // centers sit up to half a cell off the true correspondence; smoothing
  // keeps descriptors stable under both.
  constexpr int kBlurR = 6;
  constexpr double kBlurSigma = 2.5;
  double kern[2 * kBlurR + 1];
  double ksum = 0.0;
  for (int t = -kBlurR; t <= kBlurR; ++t) {
    kern[t + kBlurR] = std::exp(-0.5 * static_cast<double>(t * t) / (kBlurSigma * kBlurSigma));
    ksum += kern[t + kBlurR];
  }
  for (double& v : kern) v /= ksum;
  std::vector<double> tmp(img.h * img.w);
  const auto cl = [](long v, long hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int t = -kBlurR; t <= kBlurR; ++t)
        acc += kern[t + kBlurR] * gray[y * img.w + static_cast<std::size_t>(cl(
                                                        static_cast<long>(x) + t,
                                                        static_cast<long>(img.w)))];
      tmp[y * img.w + x] = acc;
    }
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x) {
      double acc = 0.0;
      for (int t = -kBlurR; t <= kBlurR; ++t)
        acc += kern[t + kBlurR] * tmp[static_cast<std::size_t>(
                                           cl(static_cast<long>(y) + t,
                                              static_cast<long>(img.h))) *
                                           img.w +
                                       x];
      gray[y * img.w + x] = acc;
    }

  const std::size_t s1y = img.h / e.working_h;
  const std::size_t s1x = img.w / e.working_w;
  const Rng base(e.seed);
  FeatureMap level1 = patch_level(gray, img.h, img.w, e.working_h, e.working_w, s1y, s1x,
                                  e.d, base.fork(1));

  // Level 2 averages level 1 over 3x3 cell neighborhoods at half
  // resolution and remixes channels with a fixed near-orthogonal matrix.
  // Averaging widens the receptive field and damps per-cell correlation
  // noise, and because both images go through the same mix, level-2
  // correlations stay sign-aligned with smoothed level-1 correlations;
  // their product then sharpens the match surface where the whole
  // neighborhood agrees instead of scrambling marginal cells.
  const std::size_t ch = e.working_h / 2, cw = e.working_w / 2;
  FeatureMap coarse(ch, cw, e.d);
  std::vector<double> mix2(e.d * e.d);
  {
    Rng r2 = base.fork(2);
    for (double& v : mix2) v = r2.normal() / std::sqrt(static_cast<double>(e.d));
  }
  std::vector<double> pooled(e.d);
  const auto clampc = [](long v, long hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
  for (std::size_t Y = 0; Y < ch; ++Y)
    for (std::size_t X = 0; X < cw; ++X) {
      std::fill(pooled.begin(), pooled.end(), 0.0);
      for (long oy = -1; oy <= 1; ++oy)
        for (long ox = -1; ox <= 1; ++ox) {
          const std::size_t yy = static_cast<std::size_t>(
              clampc(2 * static_cast<long>(Y) + oy, static_cast<long>(e.working_h)));
          const std::size_t xx = static_cast<std::size_t>(
              clampc(2 * static_cast<long>(X) + ox, static_cast<long>(e.working_w)));
          for (std::size_t c = 0; c < e.d; ++c) pooled[c] += level1.data.at3(yy, xx, c);
        }
      for (std::size_t c = 0; c < e.d; ++c) pooled[c] /= 9.0;
      for (std::size_t c = 0; c < e.d; ++c) {
        double acc = 0.0;
        const double* row = mix2.data() + c * e.d;
        for (std::size_t i = 0; i < e.d; ++i) acc += row[i] * pooled[i];
        coarse.data.at3(Y, X, c) = acc;
      }
    }
  return {std::move(level1), upsample_features(coarse, e.working_h, e.working_w)};
}

}  // namespace semflow
