#pragma once

#include <Eigen/Dense>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "atlas/grid.hpp"

namespace atlas {

/// Complex spherical-harmonic coefficients a_{l,m}, 0 <= l <= lmax,
/// -l <= m <= l, for orthonormal (4pi-normalized) harmonics with
/// Condon-Shortley phase. Real fields satisfy a_{l,-m} = (-1)^m conj(a_{l,m}).
struct SphCoeffs {
  int lmax = 0;
  std::vector<std::complex<double>> a;  // index l*(l+1)+m

  SphCoeffs() = default;
  explicit SphCoeffs(int L) : lmax(L), a(size_t((L + 1) * (L + 1))) {}

  std::complex<double>& at(int l, int m) { return a[size_t(l * (l + 1) + m)]; }
  std::complex<double> at(int l, int m) const { return a[size_t(l * (l + 1) + m)]; }

  /// Largest |a_{l,-m} - (-1)^m conj(a_{l,m})| over all modes.
  double conjugate_symmetry_defect() const {
    double worst = 0.0;
    for (int l = 0; l <= lmax; ++l)
      for (int m = 0; m <= l; ++m) {
        const double sgn = (m % 2 == 0) ? 1.0 : -1.0;
        const auto d = at(l, -m) - sgn * std::conj(at(l, m));
        worst = std::max(worst, std::abs(d));
      }
    return worst;
  }

  /// Fills m < 0 entries from the m >= 0 entries of a real field.
  void enforce_real_symmetry() {
    for (int l = 0; l <= lmax; ++l)
      for (int m = 1; m <= l; ++m) {
        const double sgn = (m % 2 == 0) ? 1.0 : -1.0;
        at(l, -m) = sgn * std::conj(at(l, m));
      }
  }
};

/// Per-degree power P_l = sum_m |a_{l,m}|^2.
struct PowerSpectrum {
  std::vector<double> p;  // index l
};

namespace sht {

/// Orthonormal associated Legendre values Pbar_l^m(x) for l in [m, lmax],
/// including the Condon-Shortley phase; int_{-1}^{1} Pbar^2 dx = 1/(2pi).
inline void legendre_column(int m, int lmax, double x, double* out) {
  const double sx = std::sqrt(std::max(0.0, 1.0 - x * x));
  double pmm = std::sqrt(1.0 / (4.0 * kPi));
  for (int k = 1; k <= m; ++k)
    pmm *= -std::sqrt((2.0 * k + 1.0) / (2.0 * k)) * sx;
  out[0] = pmm;
  if (lmax == m) return;
  double pm1 = x * std::sqrt(2.0 * m + 3.0) * pmm;
  out[1] = pm1;
  double pm2 = pmm;
  for (int l = m + 2; l <= lmax; ++l) {
    const double a = std::sqrt((4.0 * l * l - 1.0) / (double(l) * l - double(m) * m));
    const double b = std::sqrt(((double(l - 1) * (l - 1) - double(m) * m)) /
                               (4.0 * double(l - 1) * (l - 1) - 1.0));
    const double pl = a * (x * pm1 - b * pm2);
    out[l - m] = pl;
    pm2 = pm1;
    pm1 = pl;
  }
}

/// Gauss-Legendre nodes and weights on [-1, 1] (Newton on P_n).
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(size_t(n));
  w.resize(size_t(n));
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0, p1 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p2 = p1;
        p1 = p0;
        p0 = ((2.0 * j + 1.0) * z * p1 - j * p2) / (j + 1.0);
      }
      pp = n * (z * p0 - p1) / (z * z - 1.0);
      const double dz = p0 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[size_t(i)] = -z;
    x[size_t(n - 1 - i)] = z;
    w[size_t(i)] = 2.0 / ((1.0 - z * z) * pp * pp);
    w[size_t(n - 1 - i)] = w[size_t(i)];
  }
}

}  // namespace sht

/// Precomputed transform plan for one (grid, lmax) pair.
///
/// Longitude is handled by the exact discrete Fourier sum. Latitude follows
/// the two-stage route: the per-order band-limited interpolant is fitted to
/// the grid rows by least squares, resampled to Gauss-Legendre nodes, and
/// integrated there; for band-limited input the composition is exact.
class SphtPlan {
 public:
  SphtPlan(GridSpec grid, int lmax) : grid_(grid), lmax_(lmax) {
    ATLAS_REQUIRE(lmax >= 0, "lmax must be >= 0");
    ATLAS_REQUIRE(2 * lmax <= grid.n_lat - 1,
                  "lmax " << lmax << " too large for n_lat " << grid.n_lat);
    ATLAS_REQUIRE(2 * lmax + 1 <= grid.n_lon,
                  "lmax " << lmax << " too large for n_lon " << grid.n_lon);
    build();
  }

  const GridSpec& grid() const { return grid_; }
  int lmax() const { return lmax_; }

  /// Analysis of one channel (pointer to n_lat*n_lon values).
  SphCoeffs analyze(const double* x) const {
    const int nlat = grid_.n_lat, nlon = grid_.n_lon;
    SphCoeffs out(lmax_);
    // longitude DFT: g[m][i] = (2pi/nlon) * sum_j x(i,j) e^{-im phi_j}
    Eigen::MatrixXcd g(lmax_ + 1, nlat);
    for (int m = 0; m <= lmax_; ++m) {
      for (int i = 0; i < nlat; ++i) {
        std::complex<double> acc(0.0, 0.0);
        for (int j = 0; j < nlon; ++j) {
          const double ph = -double(m) * grid_.lon_rad(j);
          acc += x[int64_t(i) * nlon + j] * std::complex<double>(std::cos(ph), std::sin(ph));
        }
        g(m, i) = acc * (kTwoPi / nlon);
      }
    }
    for (int m = 0; m <= lmax_; ++m) {
      const auto& A = analysis_[size_t(m)];  // [(lmax+1-m) x nlat]
      Eigen::VectorXcd gm = g.row(m).transpose();
      Eigen::VectorXcd coef = A.cast<std::complex<double>>() * gm;
      for (int l = m; l <= lmax_; ++l) out.at(l, m) = coef(l - m);
    }
    out.enforce_real_symmetry();
    return out;
  }

  /// Synthesis of one channel into `x` (n_lat*n_lon values). Requires the
  /// real-field conjugate symmetry.
  void synthesize(const SphCoeffs& c, double* x) const {
    ATLAS_REQUIRE(c.lmax <= lmax_, "coefficient lmax exceeds plan lmax");
    ATLAS_REQUIRE(c.conjugate_symmetry_defect() < 1e-9,
                  "broken conjugate symmetry: field would not be real");
    const int nlat = grid_.n_lat, nlon = grid_.n_lon;
    // h[m][i] = sum_l a_lm Pbar_l^m(x_i); then x = h0 + 2 Re sum_{m>0} h e^{im phi}
    std::vector<std::vector<std::complex<double>>> h(
        size_t(c.lmax + 1), std::vector<std::complex<double>>(size_t(nlat)));
    for (int m = 0; m <= c.lmax; ++m)
      for (int i = 0; i < nlat; ++i) {
        std::complex<double> acc(0.0, 0.0);
        for (int l = m; l <= c.lmax; ++l)
          acc += c.at(l, m) * leg_grid_[size_t(m)](i, l - m);
        h[size_t(m)][size_t(i)] = acc;
      }
    for (int i = 0; i < nlat; ++i) {
      for (int j = 0; j < nlon; ++j) {
        double v = h[0][size_t(i)].real();
        for (int m = 1; m <= c.lmax; ++m) {
          const double ph = double(m) * grid_.lon_rad(j);
          const std::complex<double> e(std::cos(ph), std::sin(ph));
          v += 2.0 * (h[size_t(m)][size_t(i)] * e).real();
        }
        x[int64_t(i) * nlon + j] = v;
      }
    }
  }

  /// Dense real matrix mapping pixel values to stacked (Re, Im) pairs of the
  /// m >= 0 coefficients, row layout: for tri-index t=(l,m): rows 2t, 2t+1.
  /// Used where the transform must be differentiable.
  EigenRowMat<double> analysis_matrix() const {
    const int nlat = grid_.n_lat, nlon = grid_.n_lon;
    const int ncoef = (lmax_ + 1) * (lmax_ + 2) / 2;
    EigenRowMat<double> M(2 * ncoef, int64_t(nlat) * nlon);
    M.setZero();
    for (int m = 0; m <= lmax_; ++m) {
      const auto& A = analysis_[size_t(m)];
      for (int l = m; l <= lmax_; ++l) {
        const int t = tri_index(l, m);
        for (int i = 0; i < nlat; ++i) {
          const double coef = A(l - m, i) * (kTwoPi / nlon);
          for (int j = 0; j < nlon; ++j) {
            const double ph = -double(m) * grid_.lon_rad(j);
            M(2 * t, int64_t(i) * nlon + j) += coef * std::cos(ph);
            M(2 * t + 1, int64_t(i) * nlon + j) += coef * std::sin(ph);
          }
        }
      }
    }
    return M;
  }

  static int tri_index(int l, int m) { return l * (l + 1) / 2 + m; }
  static int tri_count(int lmax) { return (lmax + 1) * (lmax + 2) / 2; }

 private:
  void build() {
    const int nlat = grid_.n_lat;
    const int ngl = lmax_ + 1;
    std::vector<double> xg, wg;
    sht::gauss_legendre(ngl, xg, wg);
    analysis_.resize(size_t(lmax_ + 1));
    leg_grid_.resize(size_t(lmax_ + 1));
    std::vector<double> col(size_t(lmax_ + 1));
    for (int m = 0; m <= lmax_; ++m) {
      const int nl = lmax_ + 1 - m;
      // V[i,l]: basis at grid colatitudes (fit), and at Gauss nodes (E, Q).
      Eigen::MatrixXd V(nlat, nl), E(ngl, nl);
      for (int i = 0; i < nlat; ++i) {
        sht::legendre_column(m, lmax_, std::cos(grid_.colat_rad(i)), col.data());
        for (int l = 0; l < nl; ++l) V(i, l) = col[size_t(l)];
      }
      leg_grid_[size_t(m)] = V;
      for (int k = 0; k < ngl; ++k) {
        sht::legendre_column(m, lmax_, xg[size_t(k)], col.data());
        for (int l = 0; l < nl; ++l) E(k, l) = col[size_t(l)];
      }
      // fit: c = pinv(2pi V) g ;  resample to Gauss nodes: ghat = 2pi E c ;
      // quadrature: a_l = sum_k w_k ghat(x_k) Pbar_l(x_k)
      Eigen::MatrixXd pinv =
          (V.transpose() * V).ldlt().solve(V.transpose()) / kTwoPi;
      Eigen::MatrixXd Q(nl, ngl);
      for (int l = 0; l < nl; ++l)
        for (int k = 0; k < ngl; ++k) Q(l, k) = wg[size_t(k)] * E(k, l);
      analysis_[size_t(m)] = kTwoPi * (Q * E * pinv);
    }
  }

  GridSpec grid_;
  int lmax_;
  std::vector<Eigen::MatrixXd> analysis_;  // per m: [(lmax+1-m) x nlat]
  std::vector<Eigen::MatrixXd> leg_grid_;  // per m: [nlat x (lmax+1-m)]
};

/// Shared plan cache; plans are immutable after construction.
inline const SphtPlan& sht_plan(const GridSpec& g, int lmax) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int>, std::unique_ptr<SphtPlan>> cache;
  std::lock_guard<std::mutex> lk(mu);
  auto key = std::make_tuple(g.n_lat, g.n_lon, lmax);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, std::make_unique<SphtPlan>(g, lmax)).first;
  return *it->second;
}

/// Per-channel analysis of a field.
inline std::vector<SphCoeffs> analyze(const FieldTensor& x, int lmax) {
  const SphtPlan& plan = sht_plan(x.grid, lmax);
  std::vector<SphCoeffs> out(size_t(x.channels));
  for (int c = 0; c < x.channels; ++c) out[size_t(c)] = plan.analyze(x.channel(c));
  return out;
}

/// Synthesis of per-channel coefficients onto a grid.
inline FieldTensor synthesize(const std::vector<SphCoeffs>& c, const GridSpec& grid) {
  ATLAS_REQUIRE(!c.empty(), "no coefficients");
  const SphtPlan& plan = sht_plan(grid, c.front().lmax);
  FieldTensor out(grid, int(c.size()));
  for (int ch = 0; ch < int(c.size()); ++ch)
    plan.synthesize(c[size_t(ch)], out.channel(ch));
  return out;
}

/// |a_{l,m}| for m >= 0, per channel; tri-layout index l(l+1)/2 + m.
inline std::vector<std::vector<double>> spectral_magnitudes(const FieldTensor& x,
                                                            int lmax) {
  auto coeffs = analyze(x, lmax);
  std::vector<std::vector<double>> out(coeffs.size());
  for (size_t c = 0; c < coeffs.size(); ++c) {
    out[c].resize(size_t(SphtPlan::tri_count(lmax)));
    for (int l = 0; l <= lmax; ++l)
      for (int m = 0; m <= l; ++m)
        out[c][size_t(SphtPlan::tri_index(l, m))] = std::abs(coeffs[c].at(l, m));
  }
  return out;
}

/// Angular power spectrum P_l = sum_m |a_{l,m}|^2, optionally normalized so
/// sum_l P_l = 1.
inline std::vector<PowerSpectrum> power_spectrum(const FieldTensor& x, int lmax,
                                                 bool normalized = false) {
  auto coeffs = analyze(x, lmax);
  std::vector<PowerSpectrum> out(coeffs.size());
  for (size_t c = 0; c < coeffs.size(); ++c) {
    out[c].p.assign(size_t(lmax + 1), 0.0);
    for (int l = 0; l <= lmax; ++l)
      for (int m = -l; m <= l; ++m)
        out[c].p[size_t(l)] += std::norm(coeffs[c].at(l, m));
    if (normalized) {
      double tot = 0.0;
      for (double pl : out[c].p) tot += pl;
      if (tot > 0.0)
        for (double& pl : out[c].p) pl /= tot;
    }
  }
  return out;
}

}  // namespace atlas
