#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace visunpack {

/// A width x height x channels grid of 8-bit intensities, row-major with
/// channels interleaved: index = (row * width + col) * channels + channel.
struct FeatureMap {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  std::uint32_t channels = 0;
  std::vector<std::uint8_t> data;

  FeatureMap() = default;
  FeatureMap(std::uint32_t w, std::uint32_t h, std::uint32_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t index(std::uint32_t row, std::uint32_t col, std::uint32_t ch) const noexcept {
    return (static_cast<std::size_t>(row) * width + col) * channels + ch;
  }
  std::uint8_t at(std::uint32_t row, std::uint32_t col, std::uint32_t ch) const noexcept {
    return data[index(row, col, ch)];
  }
  std::uint8_t& at(std::uint32_t row, std::uint32_t col, std::uint32_t ch) noexcept {
    return data[index(row, col, ch)];
  }

  friend bool operator==(const FeatureMap&, const FeatureMap&) = default;
};

inline constexpr std::size_t kTensorHeaderSize = 16;

/// "SAMP" magic, then width, height, channels as little-endian u32, then data.
std::vector<std::uint8_t> encode_tensor(const FeatureMap& map);
/// Throws Error{ParseError} on bad magic or a length that disagrees with the header.
FeatureMap decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const std::filesystem::path& path, const FeatureMap& map);
FeatureMap read_tensor(const std::filesystem::path& path);

/// PNG export. With 3 channels writes one RGB composite to `path`; otherwise
/// one grayscale image per channel named `<stem>.c<k>.png`. Returns files written.
std::vector<std::filesystem::path> write_png(const std::filesystem::path& path, const FeatureMap& map);

}  // namespace visunpack
