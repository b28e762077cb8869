#include "visunpack/feature_map.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <memory>

#include "visunpack/error.hpp"
#include "visunpack/hash.hpp"

namespace visunpack {

namespace {

void put_u32(std::vector<std::uint8_t>& b, std::size_t off, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b[off + i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
         (static_cast<std::uint32_t>(b[off + 2]) << 16) |
         (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

struct FileCloser {
  void operator()(std::FILE* f) const noexcept { std::fclose(f); }
};

void write_png_file(const std::filesystem::path& path, std::uint32_t w, std::uint32_t h,
                    int color_type, const std::vector<std::uint8_t>& pixels, std::size_t stride) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::IoError, "libpng write failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::uint32_t r = 0; r < h; ++r) {
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const FeatureMap& map) {
  std::vector<std::uint8_t> out(kTensorHeaderSize + map.data.size());
  std::memcpy(out.data(), "SAMP", 4);
  put_u32(out, 4, map.width);
  put_u32(out, 8, map.height);
  put_u32(out, 12, map.channels);
  std::memcpy(out.data() + kTensorHeaderSize, map.data.data(), map.data.size());
  return out;
}

FeatureMap decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kTensorHeaderSize || std::memcmp(bytes.data(), "SAMP", 4) != 0) {
    throw Error(ErrorCode::ParseError, "not a SAMP tensor");
  }
  FeatureMap map;
  map.width = get_u32(bytes, 4);
  map.height = get_u32(bytes, 8);
  map.channels = get_u32(bytes, 12);
  const std::uint64_t expected =
      static_cast<std::uint64_t>(map.width) * map.height * map.channels;
  if (bytes.size() - kTensorHeaderSize != expected) {
    throw Error(ErrorCode::ParseError, "tensor payload is " +
                                           std::to_string(bytes.size() - kTensorHeaderSize) +
                                           " bytes, header says " + std::to_string(expected));
  }
  map.data.assign(bytes.begin() + kTensorHeaderSize, bytes.end());
  return map;
}

void write_tensor(const std::filesystem::path& path, const FeatureMap& map) {
  write_file(path, encode_tensor(map));
}

FeatureMap read_tensor(const std::filesystem::path& path) { return decode_tensor(read_file(path)); }

std::vector<std::filesystem::path> write_png(const std::filesystem::path& path,
                                             const FeatureMap& map) {
  if (map.width == 0 || map.height == 0 || map.channels == 0) {
    throw Error(ErrorCode::InvalidArgument, "cannot export an empty map");
  }
  std::vector<std::filesystem::path> written;
  if (map.channels == 3) {
    write_png_file(path, map.width, map.height, PNG_COLOR_TYPE_RGB, map.data,
                   static_cast<std::size_t>(map.width) * 3);
    written.push_back(path);
    return written;
  }
  std::vector<std::uint8_t> plane(static_cast<std::size_t>(map.width) * map.height);
  for (std::uint32_t c = 0; c < map.channels; ++c) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = map.data[i * map.channels + c];
    auto out = path;
    out.replace_extension(".c" + std::to_string(c) + ".png");
    write_png_file(out, map.width, map.height, PNG_COLOR_TYPE_GRAY, plane, map.width);
    written.push_back(out);
  }
  return written;
}

}  // namespace visunpack
