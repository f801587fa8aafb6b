#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "atlas/common.hpp"
#include "atlas/tensor.hpp"

namespace atlas {

/// Equiangular latitude/longitude grid including both poles.
/// lat_i = 90 - 180*i/(n_lat-1), lon_j = 360*j/n_lon.
struct GridSpec {
  int n_lat = 0;
  int n_lon = 0;

  GridSpec() = default;
  GridSpec(int nlat, int nlon) : n_lat(nlat), n_lon(nlon) {
    ATLAS_REQUIRE(n_lat >= 3 && n_lat % 2 == 1,
                  "n_lat must be odd and >= 3, got " << n_lat);
    ATLAS_REQUIRE(n_lon >= 4, "n_lon must be >= 4, got " << n_lon);
  }

  double lat_deg(int i) const { return 90.0 - 180.0 * double(i) / double(n_lat - 1); }
  double lon_deg(int j) const { return 360.0 * double(j) / double(n_lon); }
  double colat_rad(int i) const { return deg2rad(90.0 - lat_deg(i)); }
  double lon_rad(int j) const { return deg2rad(lon_deg(j)); }
  int64_t n_pix() const { return int64_t(n_lat) * n_lon; }

  bool operator==(const GridSpec& o) const {
    return n_lat == o.n_lat && n_lon == o.n_lon;
  }
  bool operator!=(const GridSpec& o) const { return !(*this == o); }

  /// Grid coarsened by an integral per-axis factor (node-aligned).
  GridSpec coarsen(int factor) const {
    ATLAS_REQUIRE(factor >= 1, "coarsen factor must be >= 1");
    ATLAS_REQUIRE((n_lat - 1) % factor == 0,
                  "n_lat-1=" << (n_lat - 1) << " not divisible by factor " << factor);
    ATLAS_REQUIRE(n_lon % factor == 0,
                  "n_lon=" << n_lon << " not divisible by factor " << factor);
    return GridSpec((n_lat - 1) / factor + 1, n_lon / factor);
  }
};

/// Multi-channel real field on a grid; values indexed [c][i][j] row-major.
struct FieldTensor {
  GridSpec grid;
  int channels = 0;
  Tensor<double> values;  // shape {channels, n_lat, n_lon}

  FieldTensor() = default;
  FieldTensor(GridSpec g, int c)
      : grid(g), channels(c), values(Shape{c, g.n_lat, g.n_lon}) {}

  double& at(int c, int i, int j) {
    return values.v[size_t((int64_t(c) * grid.n_lat + i) * grid.n_lon + j)];
  }
  double at(int c, int i, int j) const {
    return values.v[size_t((int64_t(c) * grid.n_lat + i) * grid.n_lon + j)];
  }
  double* channel(int c) { return values.data() + int64_t(c) * grid.n_pix(); }
  const double* channel(int c) const {
    return values.data() + int64_t(c) * grid.n_pix();
  }
};

/// Normalized per-pixel area weights, constant along longitude.
struct AreaWeights {
  GridSpec grid;
  std::vector<double> row;  // per-latitude weight of a single pixel

  double at(int i, int) const { return row[size_t(i)]; }
  double row_weight(int i) const { return row[size_t(i)]; }
};

/// Cell-area weights from sine-of-latitude band widths. Band bounds are the
/// midpoints between adjacent rows, clamped to the poles; the result sums to
/// exactly one over all pixels.
inline AreaWeights area_weights(const GridSpec& g) {
  AreaWeights w;
  w.grid = g;
  w.row.resize(size_t(g.n_lat));
  double total = 0.0;
  std::vector<double> band(size_t(g.n_lat));
  for (int i = 0; i < g.n_lat; ++i) {
    const double upper =
        (i == 0) ? 90.0 : 0.5 * (g.lat_deg(i - 1) + g.lat_deg(i));
    const double lower =
        (i == g.n_lat - 1) ? -90.0 : 0.5 * (g.lat_deg(i) + g.lat_deg(i + 1));
    band[size_t(i)] = std::sin(deg2rad(upper)) - std::sin(deg2rad(lower));
    total += band[size_t(i)];
  }
  for (int i = 0; i < g.n_lat; ++i)
    w.row[size_t(i)] = band[size_t(i)] / (total * g.n_lon);
  return w;
}

namespace detail {

/// One axis of bilinear resampling between node-aligned equiangular grids:
/// for target index it, returns source index pair (i0, i1) and weight of i1.
/// Exact node coincidences are detected with integer arithmetic so coincident
/// values are copied bit-exactly.
struct AxisSample {
  int i0, i1;
  double w1;
};

inline AxisSample lat_sample(int it, int n_src, int n_tgt) {
  // position in source index space: it * (n_src-1) / (n_tgt-1)
  const int64_t num = int64_t(it) * (n_src - 1);
  const int64_t den = n_tgt - 1;
  if (num % den == 0) {
    const int i = int(num / den);
    return {i, i, 0.0};
  }
  const double pos = double(num) / double(den);
  int i0 = int(std::floor(pos));
  if (i0 > n_src - 2) i0 = n_src - 2;
  return {i0, i0 + 1, pos - double(i0)};
}

inline AxisSample lon_sample(int jt, int n_src, int n_tgt) {
  const int64_t num = int64_t(jt) * n_src;
  const int64_t den = n_tgt;
  if (num % den == 0) {
    const int j = int(num / den) % n_src;
    return {j, j, 0.0};
  }
  const double pos = double(num) / double(den);
  const int j0 = int(std::floor(pos)) % n_src;
  return {j0, (j0 + 1) % n_src, pos - std::floor(pos)};
}

inline FieldTensor bilinear_resample(const FieldTensor& x, const GridSpec& target) {
  const GridSpec& src = x.grid;
  FieldTensor out(target, x.channels);
  std::vector<AxisSample> lats(size_t(target.n_lat)), lons(size_t(target.n_lon));
  for (int i = 0; i < target.n_lat; ++i) lats[size_t(i)] = lat_sample(i, src.n_lat, target.n_lat);
  for (int j = 0; j < target.n_lon; ++j) lons[size_t(j)] = lon_sample(j, src.n_lon, target.n_lon);
  for (int c = 0; c < x.channels; ++c) {
    for (int i = 0; i < target.n_lat; ++i) {
      const auto& la = lats[size_t(i)];
      for (int j = 0; j < target.n_lon; ++j) {
        const auto& lo = lons[size_t(j)];
        if (la.w1 == 0.0 && lo.w1 == 0.0) {
          out.at(c, i, j) = x.at(c, la.i0, lo.i0);  // node coincidence: copy
          continue;
        }
        const double v00 = x.at(c, la.i0, lo.i0), v01 = x.at(c, la.i0, lo.i1);
        const double v10 = x.at(c, la.i1, lo.i0), v11 = x.at(c, la.i1, lo.i1);
        const double top = v00 + lo.w1 * (v01 - v00);
        const double bot = v10 + lo.w1 * (v11 - v10);
        out.at(c, i, j) = top + la.w1 * (bot - top);
      }
    }
  }
  return out;
}

}  // namespace detail

/// The encoder B: bilinear interpolation onto a coarser node-aligned grid.
/// Longitude interpolation wraps periodically; coincident nodes copy exactly.
inline FieldTensor bilinear_downsample(const FieldTensor& x, const GridSpec& target) {
  ATLAS_REQUIRE(target.n_lat <= x.grid.n_lat && target.n_lon <= x.grid.n_lon,
                "downsample target must be coarser than source");
  return detail::bilinear_resample(x, target);
}

/// Mirror of downsample with a finer target.
inline FieldTensor bilinear_upsample(const FieldTensor& x, const GridSpec& target) {
  ATLAS_REQUIRE(target.n_lat >= x.grid.n_lat && target.n_lon >= x.grid.n_lon,
                "upsample target must be finer than source");
  return detail::bilinear_resample(x, target);
}

namespace detail {

/// Source (row, col-shift) for a padded row index in spherically consistent
/// padding: rows wrap across the poles onto the opposite meridian.
inline std::pair<int, int> pole_row_map(int r_pad, int n_lat, int n_lon, int halo) {
  int r = r_pad - halo;
  int shift = 0;
  if (r < 0) {
    r = -r;  // row k beyond the north pole mirrors source row k
    shift = n_lon / 2;
  } else if (r > n_lat - 1) {
    r = 2 * (n_lat - 1) - r;
    shift = n_lon / 2;
  }
  return {r, shift};
}

}  // namespace detail

/// Spherically consistent halo padding: circular in longitude, across-pole
/// mirroring with a 180 degree shift in latitude. Output is
/// [C, n_lat + 2*halo, n_lon + 2*halo].
inline FieldTensor spherical_pad(const FieldTensor& x, int halo) {
  const GridSpec& g = x.grid;
  ATLAS_REQUIRE(halo >= 1, "halo must be >= 1");
  ATLAS_REQUIRE(halo < g.n_lon / 2, "halo " << halo << " too large for n_lon " << g.n_lon);
  ATLAS_REQUIRE(halo <= g.n_lat - 1, "halo " << halo << " too large for n_lat " << g.n_lat);
  ATLAS_REQUIRE(g.n_lon % 2 == 0, "spherical_pad requires even n_lon");
  FieldTensor out;
  out.grid = GridSpec();  // padded array is not itself a valid GridSpec
  out.grid.n_lat = g.n_lat + 2 * halo;
  out.grid.n_lon = g.n_lon + 2 * halo;
  out.channels = x.channels;
  out.values = Tensor<double>(Shape{x.channels, out.grid.n_lat, out.grid.n_lon});
  for (int c = 0; c < x.channels; ++c) {
    for (int rp = 0; rp < out.grid.n_lat; ++rp) {
      const auto [r, shift] = detail::pole_row_map(rp, g.n_lat, g.n_lon, halo);
      for (int cp = 0; cp < out.grid.n_lon; ++cp) {
        const int col = ((cp - halo + shift) % g.n_lon + g.n_lon) % g.n_lon;
        out.at(c, rp, cp) = x.at(c, r, col);
      }
    }
  }
  return out;
}

/// Flat source index of padded position (r_pad, c_pad) for a (rows x cols)
/// grid under the spherical_pad rule. Shared by field padding and the token
/// neighborhoods of local attention.
inline int64_t spherical_halo_source(int r_pad, int c_pad, int rows, int cols,
                                     int halo) {
  const auto [r, shift] = detail::pole_row_map(r_pad, rows, cols, halo);
  const int col = ((c_pad - halo + shift) % cols + cols) % cols;
  return int64_t(r) * cols + col;
}

}  // namespace atlas
