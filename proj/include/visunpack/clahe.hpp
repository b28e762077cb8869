#pragma once

// Contrast-limited adaptive histogram equalization over feature maps, and
// bilinear resizing to the classifier input shape.

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "visunpack/feature_map.hpp"

namespace visunpack::clahe {

struct ClaheParams {
  /// Tile divisions along the width.
  std::uint32_t grid_a = 8;
  /// Tile divisions along the height.
  std::uint32_t grid_b = 8;
  double clip = 4.0;
  std::uint32_t levels = 256;
  std::uint32_t out_w = 512;
  std::uint32_t out_h = 128;

  /// Throws Error{InvalidArgument}.
  void validate() const;
};

using Counts = std::vector<std::uint64_t>;

/// Per-intensity counts of `values`. Throws Error{ValueOutOfRange}.
Counts histogram(std::span<const std::uint8_t> values, std::uint32_t levels);

/// Cumulative counts of `values`. Throws Error{ValueOutOfRange}.
Counts tile_histogram(std::span<const std::uint8_t> values, std::uint32_t levels);

/// Running sum of a per-bin histogram.
Counts cumulative(std::span<const std::uint64_t> histogram);

/// Clip ceiling for a tile: max(1, round(clip * tile_area / levels)).
std::uint64_t clip_ceiling(double clip, std::uint64_t tile_area, std::uint32_t levels);

/// Cuts bins at the ceiling and spreads the excess uniformly over all bins,
/// re-clipping, for up to three passes; any remainder goes round-robin to the
/// bin 0. The total count is preserved exactly.
Counts clip_histogram(std::span<const std::uint64_t> histogram, double clip,
                      std::uint64_t tile_area, std::uint32_t levels);

struct TileTransform {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  std::vector<std::uint8_t> mapping;
  std::uint64_t cdf_min = 0;
  std::uint64_t cdf_max = 0;
};

/// h(x) = round((cdf(x) - cdf_min) / (cdf_max - cdf_min) * (L - 1)), clamped
/// at 0 below cdf_min; cdf_min is the smallest non-zero cdf value. A flat cdf
/// maps everything to 0.
TileTransform tile_transform(std::span<const std::uint64_t> cdf, std::uint32_t levels,
                             std::uint64_t tile_area);

/// Tile grid geometry along one axis: `count` tiles of nominal `size`, the
/// last absorbing the remainder. Centers sit at (i + 0.5) * size.
struct Axis {
  std::uint32_t extent = 0;
  std::uint32_t count = 0;
  std::uint32_t size = 0;

  std::uint32_t begin(std::uint32_t tile) const noexcept { return tile * size; }
  std::uint32_t end(std::uint32_t tile) const noexcept {
    return tile + 1 == count ? extent : (tile + 1) * size;
  }
};

Axis make_axis(std::uint32_t extent, std::uint32_t count);

struct EnhanceOptions {
  /// OpenMP team size; 0 uses the runtime default.
  int threads = 0;
};

/// Per-channel CLAHE. Throws Error{MapSmallerThanGrid}.
FeatureMap enhance(const FeatureMap& map, const ClaheParams& params,
                   const EnhanceOptions& options = {});

/// Single-threaded reference of enhance.
FeatureMap enhance_serial(const FeatureMap& map, const ClaheParams& params);

/// Per-channel transforms, indexed [channel][tile_row * grid_a + tile_col].
std::vector<std::vector<TileTransform>> tile_transforms(const FeatureMap& map,
                                                        const ClaheParams& params);

/// Bilinear resampling per channel (pixel-center alignment).
FeatureMap resize(const FeatureMap& map, std::uint32_t out_w, std::uint32_t out_h);

/// Pads with zero columns/rows so the map is at least min_w x min_h.
FeatureMap pad_to(const FeatureMap& map, std::uint32_t min_w, std::uint32_t min_h);

}  // namespace visunpack::clahe
