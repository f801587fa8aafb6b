#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "atlas/grid.hpp"
#include "atlas/harmonics.hpp"
#include "atlas/rng.hpp"

using namespace atlas;

namespace {

/// Random band-limited real field via random symmetric coefficients.
std::vector<SphCoeffs> random_coeffs(int lmax, int channels, uint64_t seed) {
  Rng rng(seed);
  std::vector<SphCoeffs> cs;
  for (int c = 0; c < channels; ++c) {
    SphCoeffs sc(lmax);
    for (int l = 0; l <= lmax; ++l) {
      sc.at(l, 0) = std::complex<double>(rng.normal(), 0.0);
      for (int m = 1; m <= l; ++m)
        sc.at(l, m) = std::complex<double>(rng.normal(), rng.normal()) / std::sqrt(2.0);
    }
    sc.enforce_real_symmetry();
    cs.push_back(sc);
  }
  return cs;
}

double max_coef_diff(const SphCoeffs& a, const SphCoeffs& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.a.size(); ++i)
    worst = std::max(worst, std::abs(a.a[i] - b.a[i]));
  return worst;
}

}  // namespace

TEST_CASE("analyze: constant field projects onto Y00 only") {
  GridSpec g(9, 16);
  FieldTensor x(g, 1);
  const double c = 2.5;
  std::fill(x.values.v.begin(), x.values.v.end(), c);
  auto coeffs = analyze(x, 4);
  // Y00 = 1/sqrt(4pi), so a00 = c * sqrt(4pi) analytically.
  CHECK(std::abs(coeffs[0].at(0, 0) - c * std::sqrt(4.0 * kPi)) < 1e-10);
  for (int l = 1; l <= 4; ++l)
    for (int m = -l; m <= l; ++m) CHECK(std::abs(coeffs[0].at(l, m)) < 1e-10);
}

TEST_CASE("analyze: cos(colatitude) excites only (1,0)") {
  GridSpec g(9, 16);
  FieldTensor x(g, 1);
  for (int i = 0; i < g.n_lat; ++i)
    for (int j = 0; j < g.n_lon; ++j)
      x.at(0, i, j) = std::cos(g.colat_rad(i));
  auto coeffs = analyze(x, 4);
  // cos(theta) = sqrt(4pi/3) * Y10.
  CHECK(std::abs(coeffs[0].at(1, 0) - std::sqrt(4.0 * kPi / 3.0)) < 1e-10);
  for (int l = 0; l <= 4; ++l)
    for (int m = -l; m <= l; ++m)
      if (!(l == 1 && m == 0)) CHECK(std::abs(coeffs[0].at(l, m)) < 1e-10);
}

TEST_CASE("zero field analyzes to zero; zero coeffs synthesize to zero") {
  GridSpec g(9, 16);
  FieldTensor x(g, 1);
  auto coeffs = analyze(x, 4);
  for (auto& a : coeffs[0].a) CHECK(std::abs(a) == 0.0);
  auto back = synthesize({SphCoeffs(4)}, g);
  for (double v : back.values.v) CHECK(v == 0.0);
}

TEST_CASE("synthesize: a00 = sqrt(4pi) gives the unit field") {
  GridSpec g(9, 16);
  SphCoeffs c(3);
  c.at(0, 0) = std::sqrt(4.0 * kPi);
  auto x = synthesize({c}, g);
  for (double v : x.values.v) CHECK(std::abs(v - 1.0) < 1e-12);
}

TEST_CASE("round trip analyze(synthesize(c)) = c for band-limited c") {
  GridSpec g(19, 32);
  const int lmax = 9;  // (n_lat-1)/2
  auto cs = random_coeffs(lmax, 2, 42);
  auto x = synthesize(cs, g);
  auto back = analyze(x, lmax);
  CHECK(max_coef_diff(cs[0], back[0]) < 1e-8);
  CHECK(max_coef_diff(cs[1], back[1]) < 1e-8);
}

TEST_CASE("round trip at the larger verification grid") {
  GridSpec g(73, 128);
  const int lmax = 36;
  auto cs = random_coeffs(lmax, 1, 4242);
  auto x = synthesize(cs, g);
  auto back = analyze(x, lmax);
  CHECK(max_coef_diff(cs[0], back[0]) < 1e-8);
}

TEST_CASE("Parseval: sum_l P_l equals the quadrature of |x|^2") {
  GridSpec g(19, 32);
  const int lmax = 9;
  auto cs = random_coeffs(lmax, 1, 5);
  auto x = synthesize(cs, g);
  auto ps = power_spectrum(x, lmax);
  double total = 0.0;
  for (double pl : ps[0].p) total += pl;
  // independent quadrature of |x|^2: it is band-limited to 2*lmax, so its
  // mean is exact on a grid that resolves 2*lmax; project x^2 onto Y00 there.
  GridSpec fine(2 * 2 * lmax + 1, 4 * lmax + 4);
  auto xf = synthesize(cs, fine);
  FieldTensor xf2(fine, 1);
  for (size_t i = 0; i < xf.values.v.size(); ++i)
    xf2.values.v[i] = xf.values.v[i] * xf.values.v[i];
  const double integral =
      analyze(xf2, 2 * lmax)[0].at(0, 0).real() * std::sqrt(4.0 * kPi);
  CHECK(std::abs(total - integral) < 1e-8 * std::abs(integral));
}

TEST_CASE("power spectrum: cos(colatitude) concentrates at l=1") {
  GridSpec g(9, 16);
  FieldTensor x(g, 1);
  for (int i = 0; i < g.n_lat; ++i)
    for (int j = 0; j < g.n_lon; ++j)
      x.at(0, i, j) = std::cos(g.colat_rad(i));
  auto ps = power_spectrum(x, 4);
  CHECK(ps[0].p[1] > 0.0);
  for (int l = 0; l <= 4; ++l)
    if (l != 1) CHECK(ps[0].p[size_t(l)] < 1e-16 * ps[0].p[1]);
}

TEST_CASE("spectral magnitudes: invariant to grid-step longitude rotation") {
  GridSpec g(19, 32);
  const int lmax = 9;
  auto cs = random_coeffs(lmax, 1, 99);
  auto x = synthesize(cs, g);
  for (int k : {1, 5, 16}) {
    FieldTensor xs(g, 1);
    for (int i = 0; i < g.n_lat; ++i)
      for (int j = 0; j < g.n_lon; ++j)
        xs.at(0, i, j) = x.at(0, i, (j + k) % g.n_lon);
    auto m0 = spectral_magnitudes(x, lmax);
    auto m1 = spectral_magnitudes(xs, lmax);
    double worst = 0.0;
    for (size_t t = 0; t < m0[0].size(); ++t)
      worst = std::max(worst, std::abs(m0[0][t] - m1[0][t]));
    CHECK(worst < 1e-8);
  }
}

TEST_CASE("spectral magnitudes: constant field has one nonzero entry") {
  GridSpec g(9, 16);
  FieldTensor x(g, 1);
  std::fill(x.values.v.begin(), x.values.v.end(), -1.25);
  auto m = spectral_magnitudes(x, 3);
  CHECK(m[0][0] == Catch::Approx(1.25 * std::sqrt(4.0 * kPi)).epsilon(1e-12));
  for (size_t t = 1; t < m[0].size(); ++t) CHECK(m[0][t] < 1e-10);
}

TEST_CASE("analyze is linear") {
  GridSpec g(19, 32);
  const int lmax = 6;
  auto ca = random_coeffs(lmax, 1, 1);
  auto cb = random_coeffs(lmax, 1, 2);
  auto xa = synthesize(ca, g), xb = synthesize(cb, g);
  FieldTensor xc(g, 1);
  for (size_t i = 0; i < xa.values.v.size(); ++i)
    xc.values.v[i] = 2.0 * xa.values.v[i] - 0.5 * xb.values.v[i];
  auto A = analyze(xa, lmax), B = analyze(xb, lmax), C = analyze(xc, lmax);
  double worst = 0.0;
  for (size_t i = 0; i < C[0].a.size(); ++i)
    worst = std::max(worst, std::abs(C[0].a[i] - (2.0 * A[0].a[i] - 0.5 * B[0].a[i])));
  CHECK(worst < 1e-10);
}

TEST_CASE("error paths: lmax too large, broken symmetry") {
  GridSpec g(9, 16);
  FieldTensor x(g, 1);
  CHECK_THROWS_AS(analyze(x, 5), Error);  // (n_lat-1)/2 = 4
  SphCoeffs c(2);
  c.at(1, 1) = {1.0, 0.0};
  c.at(1, -1) = {5.0, 0.0};  // violates (-1)^m conj rule
  CHECK_THROWS_AS(synthesize({c}, g), Error);
}

TEST_CASE("analysis matrix reproduces analyze()") {
  GridSpec g(9, 16);
  const int lmax = 4;
  auto cs = random_coeffs(lmax, 1, 33);
  auto x = synthesize(cs, g);
  const auto& plan = sht_plan(g, lmax);
  auto M = plan.analysis_matrix();
  Eigen::VectorXd pix(g.n_pix());
  for (int64_t i = 0; i < g.n_pix(); ++i) pix(i) = x.values.v[size_t(i)];
  Eigen::VectorXd proj = M * pix;
  auto direct = analyze(x, lmax);
  for (int l = 0; l <= lmax; ++l)
    for (int m = 0; m <= l; ++m) {
      const int t = SphtPlan::tri_index(l, m);
      CHECK(std::abs(proj(2 * t) - direct[0].at(l, m).real()) < 1e-10);
      CHECK(std::abs(proj(2 * t + 1) - direct[0].at(l, m).imag()) < 1e-10);
    }
}
