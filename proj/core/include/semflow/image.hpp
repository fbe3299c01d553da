#ifndef SEMFLOW_IMAGE_HPP
#define SEMFLOW_IMAGE_HPP

#include <cstddef>
#include <string>
#include <vector>

namespace semflow {

/// 8-bit raster held as doubles in [0,1]. Row-major, channel fastest.
/// channels is 1 (grayscale, PGM) or 3 (RGB, PPM).
struct Image {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  double at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * w + x) * channels + c];
  }
  double& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * w + x) * channels + c];
  }
};

/// Reads binary PGM (P5) or PPM (P6), 8-bit only. Comments and arbitrary
/// whitespace in the header are accepted.
Image load_image(const std::string& path);

/// Writes P5 for 1 channel, P6 for 3. Values are clamped to [0,1] and
/// quantized to 8 bits.
void save_image(const std::string& path, const Image& img);

/// Foreground mask. Freshly loaded masks hold only {0,1}; warping can
/// leave fractional values, so the foreground count thresholds at 0.5.
struct Mask {
  std::size_t h = 0;
  std::size_t w = 0;
  std::vector<double> values;

  Mask() = default;
  Mask(std::size_t h_, std::size_t w_, double fill = 0.0)
      : h(h_), w(w_), values(h_ * w_, fill) {}

  double at(std::size_t y, std::size_t x) const { return values[y * w + x]; }
  double& at(std::size_t y, std::size_t x) { return values[y * w + x]; }

  std::size_t pixel_count() const { return values.size(); }
  std::size_t foreground_count() const;
};

/// Loads a P5 file as a mask: sample > 127 is foreground.
Mask load_mask(const std::string& path);
void save_mask(const std::string& path, const Mask& mask);

/// Threshold at 0.5 into {0,1}.
Mask binarize(const Mask& mask);

/// Resamples to (h,w) by sampling the source at mapped cell centers
/// (bilinear, edge-clamped) and thresholding at 0.5. Output is binary.
Mask resample_mask(const Mask& mask, std::size_t h, std::size_t w);

}  // namespace semflow

#endif  // SEMFLOW_IMAGE_HPP
