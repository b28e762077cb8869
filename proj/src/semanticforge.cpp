#include "visunpack/semanticforge.hpp"

#include <omp.h>

#include <algorithm>
#include <bit>
#include <cmath>

#include "visunpack/error.hpp"

namespace visunpack::semanticforge {

namespace {

/// Fills `out` (params.channels() values) for one center. Returns false when
/// the clipped region offers no candidate window.
bool compute_descriptor(std::span<const std::uint8_t> block, std::size_t center,
                        const ForgeParams& params, double* out) {
  const std::size_t u = params.unit_len;
  const std::size_t half = (params.region_len - u) / 2;
  const std::size_t region_begin = center >= half ? center - half : 0;
  const std::size_t region_end = std::min(block.size(), center + u + half);

  std::fill(out, out + params.channels(), 0.0);
  const auto x = block.subspan(center, u);
  bool any = false;
  for (std::size_t s = region_begin; s + u <= region_end; ++s) {
    if (s == center) continue;
    const double c = correlation(ssd(x, block.subspan(s, u), params.byte_scale));
    const auto d = static_cast<std::ptrdiff_t>(s) - static_cast<std::ptrdiff_t>(center);
    double& slot = out[bin_index(d, params)];
    slot = std::max(slot, c);
    any = true;
  }
  return any;
}

struct BlockDescriptors {
  std::vector<double> values;
  std::vector<DescriptorSource> sources;
};

std::vector<const ingest::BasicBlock*> selected_blocks(const ingest::ProgramDisassembly& program,
                                                       const ForgeParams& params) {
  const auto all = program.canonical_blocks();
  if (all.empty()) throw Error(ErrorCode::EmptyProgram, "program has no basic blocks");
  std::vector<const ingest::BasicBlock*> out;
  for (std::size_t i = 0; i < all.size(); i += params.block_stride) out.push_back(all[i]);
  return out;
}

bool too_short(const ingest::BasicBlock& block, const ForgeParams& params) {
  return block.byte_size < params.unit_len + 1;
}

void describe_block(const ingest::BasicBlock& block, const ForgeParams& params,
                    BlockDescriptors& out) {
  const Bytes bytes = block.bytes();
  const auto centers = centers_for(block, params);
  const std::size_t c = params.channels();
  out.values.resize(centers.size() * c);
  out.sources.resize(centers.size());
  std::size_t k = 0;
  for (const auto center : centers) {
    if (!compute_descriptor(bytes, center, params, out.values.data() + k * c)) continue;
    out.sources[k] = {block.entry, center};
    ++k;
  }
  out.values.resize(k * c);
  out.sources.resize(k);
}

void finish(DescriptorEnsemble& e) {
  if (e.values.empty()) return;
  const auto [lo, hi] = std::minmax_element(e.values.begin(), e.values.end());
  e.min_raw = *lo;
  e.max_raw = *hi;
}

}  // namespace

void ForgeParams::validate() const {
  if (unit_len < 1) throw Error(ErrorCode::InvalidArgument, "unit_len must be >= 1");
  if (region_len < unit_len + 2) {
    throw Error(ErrorCode::InvalidArgument, "region_len must be >= unit_len + 2");
  }
  if ((region_len - unit_len) % 2 != 0) {
    throw Error(ErrorCode::InvalidArgument, "region_len - unit_len must be even");
  }
  if (angular_bins < 1 || radial_bins < 1) {
    throw Error(ErrorCode::InvalidArgument, "angular_bins and radial_bins must be >= 1");
  }
  if (block_stride < 1) throw Error(ErrorCode::InvalidArgument, "block_stride must be >= 1");
}

double ssd(std::span<const std::uint8_t> x, std::span<const std::uint8_t> y, bool scaled) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::LengthMismatch, "windows of length " + std::to_string(x.size()) +
                                               " and " + std::to_string(y.size()));
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    if (scaled) d /= 255.0;
    sum += d * d;
  }
  return sum;
}

double correlation(double ssd_value) noexcept { return std::exp(-ssd_value); }

std::size_t bin_index(std::ptrdiff_t distance, const ForgeParams& params) noexcept {
  const auto magnitude = static_cast<std::size_t>(distance < 0 ? -distance : distance);
  const std::size_t log2_floor = magnitude == 0 ? 0 : std::bit_width(magnitude) - 1;
  const std::size_t radial = std::min(log2_floor, params.radial_bins - 1);
  const std::size_t angular = distance < 0 ? params.angular_bins / 2 : 0;
  return angular * params.radial_bins + radial;
}

LocalSimilarityDescriptor descriptor_at(std::span<const std::uint8_t> block_bytes,
                                        std::size_t center_offset, const ForgeParams& params) {
  params.validate();
  if (center_offset + params.unit_len > block_bytes.size()) {
    throw Error(ErrorCode::InvalidArgument,
                "center window [" + std::to_string(center_offset) + ", +" +
                    std::to_string(params.unit_len) + ") leaves a " +
                    std::to_string(block_bytes.size()) + "-byte block");
  }
  LocalSimilarityDescriptor d;
  d.values.resize(params.channels());
  d.source.center_offset = center_offset;
  if (!compute_descriptor(block_bytes, center_offset, params, d.values.data())) {
    throw Error(ErrorCode::RegionTooSmall,
                "no candidate window around offset " + std::to_string(center_offset));
  }
  return d;
}

std::vector<std::size_t> centers_for(const ingest::BasicBlock& block, const ForgeParams& params) {
  std::vector<std::size_t> centers;
  if (too_short(block, params)) return centers;
  const std::size_t u = params.unit_len;
  if (params.placement == CenterPlacement::unit_aligned) {
    for (std::size_t c = 0; c + u <= block.byte_size; c += u) centers.push_back(c);
  } else {
    std::size_t off = 0;
    for (const auto& ins : block.instructions) {
      if (off + u <= block.byte_size) centers.push_back(off);
      off += ins.size();
    }
  }
  return centers;
}

DescriptorEnsemble forge(const ingest::ProgramDisassembly& program, const ForgeParams& params,
                         const ForgeOptions& options) {
  params.validate();
  const auto blocks = selected_blocks(program, params);
  std::vector<BlockDescriptors> per_block(blocks.size());
  const int threads = options.threads > 0 ? options.threads : omp_get_max_threads();
  const auto n = static_cast<std::ptrdiff_t>(blocks.size());

#pragma omp parallel for schedule(dynamic, 8) num_threads(threads)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& block = *blocks[static_cast<std::size_t>(i)];
    if (!too_short(block, params)) describe_block(block, params, per_block[static_cast<std::size_t>(i)]);
  }

  DescriptorEnsemble e;
  e.channels = params.channels();
  std::size_t total = 0;
  for (const auto& b : per_block) total += b.sources.size();
  e.values.reserve(total * e.channels);
  e.sources.reserve(total);
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (too_short(*blocks[i], params)) {
      ++e.skipped_blocks;
      continue;
    }
    e.values.insert(e.values.end(), per_block[i].values.begin(), per_block[i].values.end());
    e.sources.insert(e.sources.end(), per_block[i].sources.begin(), per_block[i].sources.end());
  }
  finish(e);
  return e;
}

DescriptorEnsemble forge_serial(const ingest::ProgramDisassembly& program,
                                const ForgeParams& params) {
  params.validate();
  DescriptorEnsemble e;
  e.channels = params.channels();
  BlockDescriptors scratch;
  for (const auto* block : selected_blocks(program, params)) {
    if (too_short(*block, params)) {
      ++e.skipped_blocks;
      continue;
    }
    describe_block(*block, params, scratch);
    e.values.insert(e.values.end(), scratch.values.begin(), scratch.values.end());
    e.sources.insert(e.sources.end(), scratch.sources.begin(), scratch.sources.end());
  }
  finish(e);
  return e;
}

DescriptorEnsemble normalize(const DescriptorEnsemble& ensemble) {
  if (ensemble.empty()) throw Error(ErrorCode::EmptyEnsemble, "nothing to normalize");
  DescriptorEnsemble out = ensemble;
  const auto [lo_it, hi_it] = std::minmax_element(ensemble.values.begin(), ensemble.values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  out.min_raw = lo;
  out.max_raw = hi;
  if (hi == lo) {
    std::fill(out.values.begin(), out.values.end(), 0.5);
  } else {
    const double range = hi - lo;
    for (auto& v : out.values) v = (v - lo) / range;
  }
  out.normalized = true;
  return out;
}

DescriptorEnsemble denormalize(const DescriptorEnsemble& ensemble) {
  DescriptorEnsemble out = ensemble;
  const double range = ensemble.max_raw - ensemble.min_raw;
  for (auto& v : out.values) v = v * range + ensemble.min_raw;
  out.normalized = false;
  return out;
}

std::uint32_t map_height_for(std::size_t descriptor_count) noexcept {
  if (descriptor_count < 10'000) return 32;
  if (descriptor_count < 100'000) return 64;
  return 128;
}

FeatureMap to_feature_map(const DescriptorEnsemble& ensemble) {
  if (ensemble.empty()) throw Error(ErrorCode::EmptyEnsemble, "no descriptors to place");
  const std::size_t count = ensemble.size();
  const std::uint32_t h = map_height_for(count);
  const auto w = static_cast<std::uint32_t>((count + h - 1) / h);
  const auto c = static_cast<std::uint32_t>(ensemble.channels);
  FeatureMap map(w, h, c, 0);
  for (std::size_t k = 0; k < count; ++k) {
    const auto row = static_cast<std::uint32_t>(k % h);
    const auto col = static_cast<std::uint32_t>(k / h);
    const auto d = ensemble.descriptor(k);
    for (std::uint32_t ch = 0; ch < c; ++ch) {
      const double v = std::clamp(d[ch], 0.0, 1.0);
      map.at(row, col, ch) = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  return map;
}

}  // namespace visunpack::semanticforge
