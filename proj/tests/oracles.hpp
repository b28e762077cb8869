#pragma once

// Independent reference implementations used only by the tests. Each one is
// written from the definition, without the library's shortcuts.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "visunpack/feature_map.hpp"
#include "visunpack/packerid.hpp"

namespace oracle {

// ---------------------------------------------------------------------------
// Signature scan: every offset, every element compared.

inline std::vector<std::size_t> naive_scan(const std::vector<std::uint8_t>& bytes, std::size_t begin,
                                           std::size_t end,
                                           const visunpack::packerid::PackerSignature& sig) {
  std::vector<std::size_t> hits;
  const std::size_t m = sig.pattern.size();
  for (std::size_t off = begin; off + m <= end; ++off) {
    bool ok = true;
    for (std::size_t i = 0; i < m; ++i) {
      if (!sig.pattern[i].wildcard && bytes[off + i] != sig.pattern[i].value) ok = false;
    }
    if (ok) hits.push_back(off);
  }
  return hits;
}

// ---------------------------------------------------------------------------
// Local similarity descriptor by enumeration of all windows of the block.

struct DescriptorSpec {
  std::size_t unit = 3;
  std::size_t region = 15;
  std::size_t angular = 1;
  std::size_t radial = 3;
  bool scaled = true;
};

inline std::size_t radial_bin(std::size_t distance, std::size_t radial_bins) {
  // Edges at 1, 2, 4, 8, ...: bin r holds [2^r, 2^(r+1)).
  std::size_t r = 0;
  std::size_t upper = 2;
  while (distance >= upper && r + 1 < radial_bins) {
    ++r;
    upper *= 2;
  }
  return r;
}

/// Empty optional-like result: `ok` false when no candidate exists.
struct DescriptorResult {
  bool ok = false;
  std::vector<double> values;
};

inline DescriptorResult descriptor(const std::vector<std::uint8_t>& block, std::size_t center,
                                   const DescriptorSpec& spec) {
  DescriptorResult res;
  res.values.assign(spec.angular * spec.radial, 0.0);
  const long long half = static_cast<long long>((spec.region - spec.unit) / 2);
  const long long lo = static_cast<long long>(center) - half;
  const long long hi = static_cast<long long>(center + spec.unit) + half;  // exclusive
  for (std::size_t s = 0; s + spec.unit <= block.size(); ++s) {
    const long long first = static_cast<long long>(s);
    const long long last = first + static_cast<long long>(spec.unit);  // exclusive
    if (first < lo || last > hi || s == center) continue;
    double sum = 0.0;
    for (std::size_t i = 0; i < spec.unit; ++i) {
      double d = static_cast<double>(block[center + i]) - static_cast<double>(block[s + i]);
      if (spec.scaled) d /= 255.0;
      sum += d * d;
    }
    const double corr = std::exp(-sum);
    const long long d = first - static_cast<long long>(center);
    const std::size_t ang = d < 0 ? spec.angular / 2 : 0;
    const std::size_t bin = ang * spec.radial + radial_bin(static_cast<std::size_t>(d < 0 ? -d : d), spec.radial);
    res.values[bin] = std::max(res.values[bin], corr);
    res.ok = true;
  }
  return res;
}

// ---------------------------------------------------------------------------
// Plain global histogram equalization of one channel.

inline std::vector<std::uint8_t> plain_equalization_lut(const visunpack::FeatureMap& map, std::uint32_t ch) {
  std::array<std::uint64_t, 256> hist{};
  for (std::uint32_t y = 0; y < map.height; ++y) {
    for (std::uint32_t x = 0; x < map.width; ++x) ++hist[map.at(y, x, ch)];
  }
  std::array<std::uint64_t, 256> cdf{};
  std::uint64_t run = 0;
  for (int i = 0; i < 256; ++i) cdf[i] = run += hist[i];
  std::uint64_t cdf_min = 0;
  for (int i = 0; i < 256; ++i) {
    if (cdf[i] != 0) {
      cdf_min = cdf[i];
      break;
    }
  }
  const std::uint64_t cdf_max = cdf[255];
  std::vector<std::uint8_t> lut(256, 0);
  if (cdf_max == cdf_min) return lut;
  for (int i = 0; i < 256; ++i) {
    if (cdf[i] < cdf_min) continue;
    const double v = static_cast<double>(cdf[i] - cdf_min) / static_cast<double>(cdf_max - cdf_min) * 255.0;
    lut[i] = static_cast<std::uint8_t>(std::round(v));
  }
  return lut;
}

inline visunpack::FeatureMap plain_equalization(const visunpack::FeatureMap& map) {
  visunpack::FeatureMap out(map.width, map.height, map.channels);
  for (std::uint32_t ch = 0; ch < map.channels; ++ch) {
    const auto lut = plain_equalization_lut(map, ch);
    for (std::uint32_t y = 0; y < map.height; ++y) {
      for (std::uint32_t x = 0; x < map.width; ++x) out.at(y, x, ch) = lut[map.at(y, x, ch)];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Region-by-region CLAHE interpolation. Tile mappings are supplied (one LUT
// per tile, row-major over the grid); the oracle classifies every cell into
// corner / edge / interior and applies the single-tile, linear, or bilinear
// rule with exact rational arithmetic.

struct Rational {
  long long num = 0;
  long long den = 1;
};

inline long long round_half_up(Rational r) { return (2 * r.num + r.den) / (2 * r.den); }

inline visunpack::FeatureMap region_interpolation(const visunpack::FeatureMap& map, std::uint32_t grid_a,
                                                  std::uint32_t grid_b,
                                                  const std::vector<std::vector<std::vector<std::uint8_t>>>& luts) {
  // Work in doubled coordinates so centers (c + 0.5) * size are integers.
  const long long tw = map.width / grid_a;
  const long long th = map.height / grid_b;
  auto cx = [&](long long c) { return (2 * c + 1) * tw; };
  auto cy = [&](long long r) { return (2 * r + 1) * th; };
  visunpack::FeatureMap out(map.width, map.height, map.channels);

  for (std::uint32_t ch = 0; ch < map.channels; ++ch) {
    auto f = [&](long long r, long long c, std::uint8_t v) -> long long {
      return luts[ch][static_cast<std::size_t>(r * grid_a + c)][v];
    };
    for (std::uint32_t y = 0; y < map.height; ++y) {
      for (std::uint32_t x = 0; x < map.width; ++x) {
        const long long px = 2LL * x;
        const long long py = 2LL * y;
        const std::uint8_t v = map.at(y, x, ch);
        const bool left = px <= cx(0), right = px >= cx(grid_a - 1);
        const bool top = py <= cy(0), bottom = py >= cy(grid_b - 1);
        const bool x_clamped = left || right;
        const bool y_clamped = top || bottom;
        long long c0 = left ? 0 : right ? grid_a - 1 : 0;
        long long r0 = top ? 0 : bottom ? grid_b - 1 : 0;
        if (!x_clamped) {
          while (!(cx(c0) <= px && px < cx(c0 + 1))) ++c0;
        }
        if (!y_clamped) {
          while (!(cy(r0) <= py && py < cy(r0 + 1))) ++r0;
        }

        long long result = 0;
        if (x_clamped && y_clamped) {
          result = f(r0, c0, v);  // corner
        } else if (y_clamped) {
          // horizontal edge: linear between two centers along x
          const long long x0 = cx(c0), x1 = cx(c0 + 1);
          result = round_half_up({(x1 - px) * f(r0, c0, v) + (px - x0) * f(r0, c0 + 1, v), x1 - x0});
        } else if (x_clamped) {
          const long long y0 = cy(r0), y1 = cy(r0 + 1);
          result = round_half_up({(y1 - py) * f(r0, c0, v) + (py - y0) * f(r0 + 1, c0, v), y1 - y0});
        } else {
          // interior: R1, R2 along x, then P along y
          const long long x1 = cx(c0), x2 = cx(c0 + 1);
          const long long y1 = cy(r0), y2 = cy(r0 + 1);
          const Rational r1{(x2 - px) * f(r0, c0, v) + (px - x1) * f(r0, c0 + 1, v), x2 - x1};
          const Rational r2{(x2 - px) * f(r0 + 1, c0, v) + (px - x1) * f(r0 + 1, c0 + 1, v), x2 - x1};
          const Rational p{(y2 - py) * r1.num + (py - y1) * r2.num, (y2 - y1) * r1.den};
          result = round_half_up(p);
        }
        out.at(y, x, ch) = static_cast<std::uint8_t>(result);
      }
    }
  }
  return out;
}

/// Per-tile LUT of plain equalization on the tile's own pixels (no clipping).
inline std::vector<std::vector<std::vector<std::uint8_t>>> unclipped_tile_luts(const visunpack::FeatureMap& map,
                                                                               std::uint32_t grid_a,
                                                                               std::uint32_t grid_b) {
  std::vector<std::vector<std::vector<std::uint8_t>>> luts(map.channels);
  const std::uint32_t tw = map.width / grid_a, th = map.height / grid_b;
  for (std::uint32_t ch = 0; ch < map.channels; ++ch) {
    for (std::uint32_t r = 0; r < grid_b; ++r) {
      for (std::uint32_t c = 0; c < grid_a; ++c) {
        const std::uint32_t x0 = c * tw, x1 = c + 1 == grid_a ? map.width : (c + 1) * tw;
        const std::uint32_t y0 = r * th, y1 = r + 1 == grid_b ? map.height : (r + 1) * th;
        visunpack::FeatureMap tile(x1 - x0, y1 - y0, 1);
        for (std::uint32_t y = y0; y < y1; ++y) {
          for (std::uint32_t x = x0; x < x1; ++x) tile.at(y - y0, x - x0, 0) = map.at(y, x, ch);
        }
        luts[ch].push_back(plain_equalization_lut(tile, 0));
      }
    }
  }
  return luts;
}

// ---------------------------------------------------------------------------
// Exhaustive nearest neighbour.

inline std::string knn(const std::vector<visunpack::FeatureMap>& train, const std::vector<std::string>& labels,
                       const visunpack::FeatureMap& query, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> table;
  for (std::size_t i = 0; i < train.size(); ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < query.data.size(); ++j) {
      const double d = static_cast<double>(train[i].data[j]) - query.data[j];
      sum += d * d;
    }
    table.emplace_back(std::sqrt(sum), i);
  }
  std::sort(table.begin(), table.end());
  std::map<std::string, std::pair<int, double>> votes;
  for (std::size_t i = 0; i < std::min(k, table.size()); ++i) {
    auto& v = votes[labels[table[i].second]];
    ++v.first;
    v.second += table[i].first;
  }
  std::string best;
  std::pair<int, double> bv{-1, 0.0};
  for (const auto& [label, v] : votes) {
    if (v.first > bv.first || (v.first == bv.first && v.second < bv.second)) {
      best = label;
      bv = v;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Cohen's kappa from a contingency table, and a search over all 3x3 tables
// with a fixed number of items.

inline double kappa_from_table(const std::array<std::array<int, 3>, 3>& t) {
  double n = 0, agree = 0;
  std::array<double, 3> rows{}, cols{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      n += t[i][j];
      rows[i] += t[i][j];
      cols[j] += t[i][j];
    }
    agree += t[i][i];
  }
  double pe = 0;
  for (int i = 0; i < 3; ++i) pe += rows[i] * cols[i];
  pe /= n * n;
  const double po = agree / n;
  return (po - pe) / (1.0 - pe);
}

struct KappaSearch {
  std::array<std::array<int, 3>, 3> table{};
  double kappa = 0.0;
};

/// Table of `total` items whose kappa is closest to `target`; `agreements`
/// fixes the trace when non-negative. Ties keep the first table found.
inline KappaSearch search_kappa(int total, double target, int agreements = -1) {
  KappaSearch best;
  double best_gap = 1e9;
  std::array<int, 9> cell{};
  // Enumerate compositions of `total` into 9 cells.
  auto rec = [&](auto&& self, int idx, int left) -> void {
    if (idx == 8) {
      cell[8] = left;
      std::array<std::array<int, 3>, 3> t{};
      for (int i = 0; i < 9; ++i) t[i / 3][i % 3] = cell[i];
      const int trace = t[0][0] + t[1][1] + t[2][2];
      if (agreements >= 0 && trace != agreements) return;
      double rs[3]{}, cs[3]{};
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
          rs[i] += t[i][j];
          cs[j] += t[i][j];
        }
      }
      const double pe = (rs[0] * cs[0] + rs[1] * cs[1] + rs[2] * cs[2]) / (double(total) * total);
      if (pe >= 1.0) return;
      const double k = kappa_from_table(t);
      const double gap = std::abs(k - target);
      if (gap < best_gap) {
        best_gap = gap;
        best.table = t;
        best.kappa = k;
      }
      return;
    }
    for (int v = 0; v <= left; ++v) {
      cell[idx] = v;
      self(self, idx + 1, left - v);
    }
  };
  rec(rec, 0, total);
  return best;
}

/// Expands a contingency table into two aligned label vectors.
inline std::pair<std::vector<std::string>, std::vector<std::string>> vectors_from_table(
    const std::array<std::array<int, 3>, 3>& t) {
  static const char* names[3] = {"trojan", "adware", "worm"};
  std::vector<std::string> a, b;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      for (int k = 0; k < t[i][j]; ++k) {
        a.emplace_back(names[i]);
        b.emplace_back(names[j]);
      }
    }
  }
  return {a, b};
}

}  // namespace oracle
