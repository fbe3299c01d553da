#ifndef SEMFLOW_FEATURES_HPP
#define SEMFLOW_FEATURES_HPP

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>

#include "semflow/autodiff.hpp"
#include "semflow/image.hpp"
#include "semflow/rng.hpp"
#include "semflow/tensor.hpp"

namespace semflow {

/// Dense feature map: one d-vector per grid cell, data shaped (h, w, d).
struct FeatureMap {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t d = 0;
  Tensor data;

  FeatureMap() = default;
  FeatureMap(std::size_t h_, std::size_t w_, std::size_t d_)
      : h(h_), w(w_), d(d_), data({h_, w_, d_}) {}
};

// SFNF feature file: magic "SFNF", u32 h, w, d (little-endian), then
// h*w*d f32 values, row-major with channel fastest.
FeatureMap load_feature_map(const std::string& path);
void save_feature_map(const std::string& path, const FeatureMap& f);

/// Scales every cell's d-vector to unit L2 norm. Zero vectors stay zero;
/// their count lands in *zero_count when given (dead-ReLU diagnostic).
FeatureMap normalize_features(const FeatureMap& f, std::size_t* zero_count = nullptr);

/// One conv block of the residual adaptation unit.
struct ConvBlock {
  Tensor kernel;  // (k, k, d_in, d_out)
  Tensor bias;    // (d_out)
};

/// Trainable residual unit: f + conv2(relu(conv1(f))), same padding.
/// conv2 starts at zero so a fresh layer is exactly the identity map.
struct AdaptationLayer {
  ConvBlock block1;
  ConvBlock block2;

  static AdaptationLayer make(std::size_t kernel_size, std::size_t d, Rng& rng);
};

/// Residual forward on the tape; weight leaves are supplied by the caller
/// so the trainer can read their gradients back.
ad::Var adapt(const ad::Var& f, const ad::Var& k1, const ad::Var& b1, const ad::Var& k2,
              const ad::Var& b2);

/// Non-training forward.
FeatureMap adapt(const FeatureMap& f, const AdaptationLayer& layer);

/// Fixed-seed two-level feature extractor. Level 1 summarizes overlapping
/// windows (twice the stride wide, centered per cell) on a working_h x
/// working_w grid; level 2 does the same at double the stride on the
/// half-resolution grid and is bilinearly upsampled back to working
/// resolution before being returned. Window locality makes both levels
/// translation-equivariant to whole-stride image shifts away from
/// borders.
struct ToyExtractor {
  std::size_t working_h = 20;
  std::size_t working_w = 20;
  std::size_t d = 16;
  std::uint64_t seed = 17;
};

std::pair<FeatureMap, FeatureMap> extract_toy(const Image& img, const ToyExtractor& e);

}  // namespace semflow

#endif  // SEMFLOW_FEATURES_HPP
