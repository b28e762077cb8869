#include "visunpack/clahe.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>

#include "visunpack/error.hpp"

namespace visunpack::clahe {

namespace {

/// round(num / den) for non-negative operands, halves rounded up.
std::uint64_t round_ratio(std::uint64_t num, std::uint64_t den) { return (2 * num + den) / (2 * den); }

std::uint64_t cut_to(Counts& bins, std::uint64_t ceiling) {
  std::uint64_t excess = 0;
  for (auto& b : bins) {
    if (b > ceiling) {
      excess += b - ceiling;
      b = ceiling;
    }
  }
  return excess;
}

/// Interpolation position of a cell along one axis (coordinates doubled so
/// tile centers stay integral).
struct AxisWeight {
  std::uint32_t t0 = 0;
  std::uint32_t t1 = 0;
  std::uint64_t offset = 0;  // distance from t0's center
  std::uint64_t span = 1;    // distance between t0 and t1 centers
};

AxisWeight axis_weight(const Axis& axis, std::uint32_t pos) {
  const std::uint64_t p2 = 2ULL * pos;
  const std::uint64_t s = axis.size;
  const auto center2 = [s](std::uint64_t t) { return (2 * t + 1) * s; };
  if (p2 <= center2(0)) return {0, 0, 0, 1};
  if (p2 >= center2(axis.count - 1)) return {axis.count - 1, axis.count - 1, 0, 1};
  const auto t0 = static_cast<std::uint32_t>((p2 - s) / (2 * s));
  return {t0, t0 + 1, p2 - center2(t0), 2 * s};
}

std::uint8_t interpolate(const std::vector<TileTransform>& tiles, std::uint32_t grid_a,
                         const AxisWeight& wx, const AxisWeight& wy, std::uint8_t v) {
  const std::uint64_t m00 = tiles[wy.t0 * grid_a + wx.t0].mapping[v];
  const std::uint64_t m01 = tiles[wy.t0 * grid_a + wx.t1].mapping[v];
  const std::uint64_t m10 = tiles[wy.t1 * grid_a + wx.t0].mapping[v];
  const std::uint64_t m11 = tiles[wy.t1 * grid_a + wx.t1].mapping[v];
  const std::uint64_t ax = wx.span - wx.offset;
  const std::uint64_t bx = wx.offset;
  const std::uint64_t ay = wy.span - wy.offset;
  const std::uint64_t by = wy.offset;
  const std::uint64_t num = ay * (ax * m00 + bx * m01) + by * (ax * m10 + bx * m11);
  return static_cast<std::uint8_t>(round_ratio(num, wx.span * wy.span));
}

TileTransform transform_for_tile(const FeatureMap& map, std::uint32_t ch, const Axis& ax,
                                 const Axis& ay, std::uint32_t tr, std::uint32_t tc,
                                 const ClaheParams& params) {
  Counts hist(params.levels, 0);
  const std::uint64_t area =
      static_cast<std::uint64_t>(ax.end(tc) - ax.begin(tc)) * (ay.end(tr) - ay.begin(tr));
  for (std::uint32_t y = ay.begin(tr); y < ay.end(tr); ++y) {
    for (std::uint32_t x = ax.begin(tc); x < ax.end(tc); ++x) {
      const auto v = map.at(y, x, ch);
      if (v >= params.levels) {
        throw Error(ErrorCode::ValueOutOfRange, "intensity " + std::to_string(v) + " >= levels");
      }
      ++hist[v];
    }
  }
  const auto clipped = clip_histogram(hist, params.clip, area, params.levels);
  auto t = tile_transform(cumulative(clipped), params.levels, area);
  t.row = tr;
  t.col = tc;
  return t;
}

void check_map(const FeatureMap& map, const ClaheParams& params) {
  params.validate();
  if (map.width < params.grid_a || map.height < params.grid_b) {
    throw Error(ErrorCode::MapSmallerThanGrid,
                std::to_string(map.width) + "x" + std::to_string(map.height) + " map, " +
                    std::to_string(params.grid_a) + "x" + std::to_string(params.grid_b) + " grid");
  }
}

}  // namespace

void ClaheParams::validate() const {
  if (grid_a < 1 || grid_b < 1) throw Error(ErrorCode::InvalidArgument, "grid must be >= 1x1");
  if (!(clip >= 1.0)) throw Error(ErrorCode::InvalidArgument, "clip must be >= 1");
  if (levels != 256) throw Error(ErrorCode::InvalidArgument, "levels must be 256 for 8-bit maps");
  if (out_w < 8 || out_h < 8) throw Error(ErrorCode::InvalidArgument, "output dims must be >= 8");
}

Counts histogram(std::span<const std::uint8_t> values, std::uint32_t levels) {
  Counts h(levels, 0);
  for (auto v : values) {
    if (v >= levels) {
      throw Error(ErrorCode::ValueOutOfRange,
                  "value " + std::to_string(v) + " >= levels " + std::to_string(levels));
    }
    ++h[v];
  }
  return h;
}

Counts cumulative(std::span<const std::uint64_t> hist) {
  Counts cdf(hist.size());
  std::uint64_t run = 0;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    run += hist[i];
    cdf[i] = run;
  }
  return cdf;
}

Counts tile_histogram(std::span<const std::uint8_t> values, std::uint32_t levels) {
  return cumulative(histogram(values, levels));
}

std::uint64_t clip_ceiling(double clip, std::uint64_t tile_area, std::uint32_t levels) {
  const double raw = std::round(clip * static_cast<double>(tile_area) / levels);
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(raw));
}

Counts clip_histogram(std::span<const std::uint64_t> histogram, double clip,
                      std::uint64_t tile_area, std::uint32_t levels) {
  Counts out(histogram.begin(), histogram.end());
  if (out.empty()) return out;
  const std::uint64_t ceiling = clip_ceiling(clip, tile_area, levels);
  const std::uint64_t n = out.size();
  std::uint64_t excess = cut_to(out, ceiling);

  for (int pass = 0; pass < 3 && excess > 0; ++pass) {
    const std::uint64_t inc = excess / n;
    if (inc > 0) {
      for (auto& b : out) b += inc;
      excess -= inc * n;
    }
    if (excess > 0) {
      std::vector<std::size_t> room;
      for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] < ceiling) room.push_back(i);
      }
      const std::uint64_t give = std::min<std::uint64_t>(excess, room.size());
      if (give > 0) {
        const std::uint64_t step = std::max<std::uint64_t>(1, room.size() / give);
        for (std::uint64_t j = 0; j < give; ++j) ++out[room[j * step]];
        excess -= give;
      }
    }
    excess += cut_to(out, ceiling);
  }
  if (excess > 0) {
    std::vector<std::size_t> full;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (out[i] == ceiling) full.push_back(i);
    }
    if (full.empty()) {
      for (std::size_t i = 0; i < out.size(); ++i) full.push_back(i);
    }
    for (std::uint64_t j = 0; j < excess; ++j) ++out[full[j % full.size()]];
  }
  return out;
}

TileTransform tile_transform(std::span<const std::uint64_t> cdf, std::uint32_t levels,
                             std::uint64_t tile_area) {
  (void)tile_area;
  TileTransform t;
  t.mapping.assign(levels, 0);
  if (cdf.empty()) return t;
  t.cdf_max = cdf.back();
  const auto first_nonzero = std::find_if(cdf.begin(), cdf.end(), [](auto v) { return v != 0; });
  t.cdf_min = first_nonzero == cdf.end() ? 0 : *first_nonzero;
  if (t.cdf_max == t.cdf_min) return t;
  const std::uint64_t range = t.cdf_max - t.cdf_min;
  for (std::size_t x = 0; x < levels && x < cdf.size(); ++x) {
    if (cdf[x] < t.cdf_min) continue;
    const auto v = round_ratio((cdf[x] - t.cdf_min) * (levels - 1), range);
    t.mapping[x] = static_cast<std::uint8_t>(std::min<std::uint64_t>(v, levels - 1));
  }
  return t;
}

Axis make_axis(std::uint32_t extent, std::uint32_t count) {
  return Axis{extent, count, count == 0 ? 0 : extent / count};
}

std::vector<std::vector<TileTransform>> tile_transforms(const FeatureMap& map,
                                                        const ClaheParams& params) {
  check_map(map, params);
  const Axis ax = make_axis(map.width, params.grid_a);
  const Axis ay = make_axis(map.height, params.grid_b);
  std::vector<std::vector<TileTransform>> out(map.channels);
  for (std::uint32_t ch = 0; ch < map.channels; ++ch) {
    out[ch].reserve(static_cast<std::size_t>(params.grid_a) * params.grid_b);
    for (std::uint32_t tr = 0; tr < params.grid_b; ++tr) {
      for (std::uint32_t tc = 0; tc < params.grid_a; ++tc) {
        out[ch].push_back(transform_for_tile(map, ch, ax, ay, tr, tc, params));
      }
    }
  }
  return out;
}

FeatureMap enhance_serial(const FeatureMap& map, const ClaheParams& params) {
  const auto tiles = tile_transforms(map, params);
  const Axis ax = make_axis(map.width, params.grid_a);
  const Axis ay = make_axis(map.height, params.grid_b);
  FeatureMap out(map.width, map.height, map.channels);
  for (std::uint32_t ch = 0; ch < map.channels; ++ch) {
    for (std::uint32_t y = 0; y < map.height; ++y) {
      const auto wy = axis_weight(ay, y);
      for (std::uint32_t x = 0; x < map.width; ++x) {
        out.at(y, x, ch) = interpolate(tiles[ch], params.grid_a, axis_weight(ax, x), wy, map.at(y, x, ch));
      }
    }
  }
  return out;
}

FeatureMap enhance(const FeatureMap& map, const ClaheParams& params, const EnhanceOptions& options) {
  check_map(map, params);
  const Axis ax = make_axis(map.width, params.grid_a);
  const Axis ay = make_axis(map.height, params.grid_b);
  const std::uint32_t per_channel = params.grid_a * params.grid_b;
  const int threads = options.threads > 0 ? options.threads : omp_get_max_threads();

  std::vector<std::vector<TileTransform>> tiles(map.channels,
                                                std::vector<TileTransform>(per_channel));
  const auto jobs = static_cast<std::ptrdiff_t>(map.channels) * per_channel;
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (std::ptrdiff_t j = 0; j < jobs; ++j) {
    const auto ch = static_cast<std::uint32_t>(j / per_channel);
    const auto t = static_cast<std::uint32_t>(j % per_channel);
    tiles[ch][t] = transform_for_tile(map, ch, ax, ay, t / params.grid_a, t % params.grid_a, params);
  }

  std::vector<AxisWeight> wxs(map.width);
  for (std::uint32_t x = 0; x < map.width; ++x) wxs[x] = axis_weight(ax, x);

  FeatureMap out(map.width, map.height, map.channels);
  const auto rows = static_cast<std::ptrdiff_t>(map.height);
#pragma omp parallel for schedule(static) num_threads(threads)
  for (std::ptrdiff_t yy = 0; yy < rows; ++yy) {
    const auto y = static_cast<std::uint32_t>(yy);
    const auto wy = axis_weight(ay, y);
    for (std::uint32_t x = 0; x < map.width; ++x) {
      for (std::uint32_t ch = 0; ch < map.channels; ++ch) {
        out.at(y, x, ch) = interpolate(tiles[ch], params.grid_a, wxs[x], wy, map.at(y, x, ch));
      }
    }
  }
  return out;
}

FeatureMap resize(const FeatureMap& map, std::uint32_t out_w, std::uint32_t out_h) {
  if (out_w == 0 || out_h == 0 || map.width == 0 || map.height == 0) {
    throw Error(ErrorCode::InvalidArgument, "resize needs non-zero dimensions");
  }
  if (out_w == map.width && out_h == map.height) return map;

  struct Tap {
    std::uint32_t i0, i1;
    double f;
  };
  auto taps = [](std::uint32_t src, std::uint32_t dst) {
    std::vector<Tap> t(dst);
    const double scale = static_cast<double>(src) / dst;
    for (std::uint32_t i = 0; i < dst; ++i) {
      double s = (i + 0.5) * scale - 0.5;
      s = std::clamp(s, 0.0, static_cast<double>(src - 1));
      const auto i0 = static_cast<std::uint32_t>(std::floor(s));
      const std::uint32_t i1 = std::min(i0 + 1, src - 1);
      t[i] = {i0, i1, s - i0};
    }
    return t;
  };
  const auto tx = taps(map.width, out_w);
  const auto ty = taps(map.height, out_h);

  FeatureMap out(out_w, out_h, map.channels);
  const auto rows = static_cast<std::ptrdiff_t>(out_h);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t yy = 0; yy < rows; ++yy) {
    const auto& vy = ty[static_cast<std::size_t>(yy)];
    for (std::uint32_t x = 0; x < out_w; ++x) {
      const auto& vx = tx[x];
      for (std::uint32_t ch = 0; ch < map.channels; ++ch) {
        const double top = (1.0 - vx.f) * map.at(vy.i0, vx.i0, ch) + vx.f * map.at(vy.i0, vx.i1, ch);
        const double bot = (1.0 - vx.f) * map.at(vy.i1, vx.i0, ch) + vx.f * map.at(vy.i1, vx.i1, ch);
        const double v = (1.0 - vy.f) * top + vy.f * bot;
        out.at(static_cast<std::uint32_t>(yy), x, ch) =
            static_cast<std::uint8_t>(std::clamp<long>(std::lround(v), 0, 255));
      }
    }
  }
  return out;
}

FeatureMap pad_to(const FeatureMap& map, std::uint32_t min_w, std::uint32_t min_h) {
  if (map.width >= min_w && map.height >= min_h) return map;
  FeatureMap out(std::max(map.width, min_w), std::max(map.height, min_h), map.channels, 0);
  for (std::uint32_t y = 0; y < map.height; ++y) {
    for (std::uint32_t x = 0; x < map.width; ++x) {
      for (std::uint32_t ch = 0; ch < map.channels; ++ch) out.at(y, x, ch) = map.at(y, x, ch);
    }
  }
  return out;
}

}  // namespace visunpack::clahe
