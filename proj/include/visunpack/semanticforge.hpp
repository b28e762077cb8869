#pragma once

// Local self-similarity descriptors over basic blocks.
//
// For a center window x of `unit_len` bytes inside a block, every other
// unit window y within the surrounding `region_len` bytes (clipped to the
// block) is scored with exp(-SSD(x, y)). Scores are binned log-polarly by
// the center-to-center byte distance and the maximum per bin forms the
// descriptor. Descriptors from every `block_stride`-th block, in canonical
// program order, make up the ensemble that becomes the feature map.

#include <cstdint>
#include <span>
#include <vector>

#include "visunpack/feature_map.hpp"
#include "visunpack/ingest.hpp"

namespace visunpack::semanticforge {

enum class CenterPlacement {
  /// Centers at byte offsets 0, u, 2u, ...
  unit_aligned,
  /// Centers at instruction starts.
  instruction_aligned,
};

struct ForgeParams {
  std::size_t unit_len = 3;
  std::size_t region_len = 15;
  std::size_t angular_bins = 1;
  std::size_t radial_bins = 3;
  std::size_t block_stride = 2;
  /// Divide byte differences by 255 before squaring.
  bool byte_scale = true;
  CenterPlacement placement = CenterPlacement::unit_aligned;

  std::size_t channels() const noexcept { return angular_bins * radial_bins; }
  /// Throws Error{InvalidArgument}.
  void validate() const;
};

struct DescriptorSource {
  ingest::Address block_entry = 0;
  std::size_t center_offset = 0;

  friend bool operator==(const DescriptorSource&, const DescriptorSource&) = default;
};

struct LocalSimilarityDescriptor {
  std::vector<double> values;
  DescriptorSource source;
};

/// Descriptors stored flat: descriptor k occupies values[k*channels, (k+1)*channels).
struct DescriptorEnsemble {
  std::size_t channels = 0;
  std::vector<double> values;
  std::vector<DescriptorSource> sources;
  double min_raw = 0.0;
  double max_raw = 0.0;
  bool normalized = false;
  std::size_t skipped_blocks = 0;

  std::size_t size() const noexcept { return sources.size(); }
  bool empty() const noexcept { return sources.empty(); }
  std::span<const double> descriptor(std::size_t k) const noexcept {
    return {values.data() + k * channels, channels};
  }

  friend bool operator==(const DescriptorEnsemble&, const DescriptorEnsemble&) = default;
};

struct ForgeOptions {
  /// OpenMP team size; 0 uses the runtime default.
  int threads = 0;
};

/// Sum of squared byte differences. Throws Error{LengthMismatch}.
double ssd(std::span<const std::uint8_t> x, std::span<const std::uint8_t> y, bool scaled);

/// exp(-ssd_value).
double correlation(double ssd_value) noexcept;

/// Bin for a candidate at signed center-to-center distance `distance` (!= 0):
/// angular * radial_bins + radial, radial = clamp(floor(log2|d|), 0, n-1),
/// angular 0 for d > 0 and floor(m/2) for d < 0.
std::size_t bin_index(std::ptrdiff_t distance, const ForgeParams& params) noexcept;

/// Descriptor for the unit window starting at `center_offset`.
/// Throws Error{RegionTooSmall} when no candidate window exists and
/// Error{InvalidArgument} when the center window leaves the block.
LocalSimilarityDescriptor descriptor_at(std::span<const std::uint8_t> block_bytes,
                                        std::size_t center_offset, const ForgeParams& params);

/// Center offsets forge uses for `block` (empty when the block is too short).
std::vector<std::size_t> centers_for(const ingest::BasicBlock& block, const ForgeParams& params);

/// Parallel across selected blocks; output order equals forge_serial.
/// Throws Error{EmptyProgram}.
DescriptorEnsemble forge(const ingest::ProgramDisassembly& program, const ForgeParams& params,
                         const ForgeOptions& options = {});

/// Single-threaded reference of forge.
DescriptorEnsemble forge_serial(const ingest::ProgramDisassembly& program,
                                const ForgeParams& params);

/// Global min-max scaling of every component to [0, 1]; all-equal input maps
/// to 0.5. Throws Error{EmptyEnsemble}.
DescriptorEnsemble normalize(const DescriptorEnsemble& ensemble);

/// Maps normalized values back to [min_raw, max_raw].
DescriptorEnsemble denormalize(const DescriptorEnsemble& ensemble);

/// Fixed map height for a descriptor count: 32 / 64 / 128.
std::uint32_t map_height_for(std::size_t descriptor_count) noexcept;

/// Column-major placement into a fixed-height map, trailing cells zero,
/// intensities round(v * 255). Throws Error{EmptyEnsemble}.
FeatureMap to_feature_map(const DescriptorEnsemble& ensemble);

}  // namespace visunpack::semanticforge
