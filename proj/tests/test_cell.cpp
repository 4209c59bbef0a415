#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

#include "hjhom/cell.hpp"

using namespace hjhom;
using std::numbers::pi;

namespace {

// Analytic but not band-limited: Fourier coefficients decay like e^{-0.315 k},
// so N = 64 is visibly under-resolved.
Potential pole_potential() {
  return Potential::from_field(
      ScalarField::sample(TorusGrid(1, 1024), [](const Vec& x) { return 0.2 / (1.05 - std::cos(2 * pi * x[0])); }));
}

Vec p1(double p) { return Vec::Constant(1, p); }
Vec p2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

double hbar(const Potential& V, const Vec& p, int n = 128) { return solve_cell(V, p, n).hbar; }

// Top eigenvalue of 1/2 d^2 + cos(2 pi x) from the closed-form periodic sinc
// second-derivative matrix (trigonometric collocation on N points).
double collocation_oracle_p0(int n) {
  const double h = 2 * pi / n;
  Mat d2(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      if (j == k) {
        d2(j, k) = -pi * pi / (3 * h * h) - 1.0 / 6.0;
      } else {
        const double s = std::sin((j - k) * h / 2);
        d2(j, k) = -((j - k) % 2 == 0 ? 1.0 : -1.0) / (2 * s * s);
      }
    }
  Mat a = 0.5 * (2 * pi) * (2 * pi) * d2;
  for (int j = 0; j < n; ++j) a(j, j) += std::cos(2 * pi * j / static_cast<double>(n));
  Eigen::SelfAdjointEigenSolver<Mat> es(a);
  return es.eigenvalues().maxCoeff();
}

// Principal eigenvalue of L_p for V = amp*cos(2 pi x) in the Fourier basis
// e^{2 pi i k x}, |k| <= K: a complex tridiagonal matrix.
double galerkin_oracle(double p, double amp = 1.0, int K = 64) {
  const int n = 2 * K + 1;
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    const double k = i - K;
    a(i, i) = std::complex<double>(-2 * pi * pi * k * k + 0.5 * p * p, -2 * pi * k * p);
    if (i > 0) a(i, i - 1) = 0.5 * amp;
    if (i + 1 < n) a(i, i + 1) = 0.5 * amp;
  }
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(a);
  double best = -1e300;
  for (auto z : es.eigenvalues()) best = std::max(best, z.real());
  return best;
}

}  // namespace

TEST(SolveCell, ZeroPotential) {
  const auto V = Potential::zero(1);
  for (double p : {0.0, 0.7, -2.0, 5.0}) {
    auto s = solve_cell(V, p1(p), 64);
    EXPECT_NEAR(s.hbar, 0.5 * p * p, 1e-10);
    EXPECT_LT(s.v.sup_norm(), 1e-10);
    for (double x : s.pi.values()) EXPECT_NEAR(x, 1.0, 1e-10);
    EXPECT_NEAR(s.e_p, 0.0, 1e-10);
  }
}

TEST(SolveCell, ZeroPotential2D) {
  auto s = solve_cell(Potential::zero(2), p2(1.0, -2.0), 32);
  EXPECT_NEAR(s.hbar, 2.5, 1e-10);
}

TEST(SolveCell, BoundsAtP1) {
  auto s = solve_cell(Potential::cosine(1), p1(1.0), 128);
  EXPECT_GE(s.hbar, -0.5);
  EXPECT_LE(s.hbar, 1.5);
}

TEST(SolveCell, MatchesCollocationOracleAtZero) {
  // The N = 512 dense oracle carries roundoff of order eps*|A| ~ 2e-10.
  const double oracle = collocation_oracle_p0(512);
  EXPECT_NEAR(hbar(Potential::cosine(1), p1(0.0), 128), oracle, 1e-9);
  EXPECT_NEAR(hbar(Potential::cosine(1), p1(0.0), 128), galerkin_oracle(0.0), 1e-11);
}

TEST(SolveCell, MatchesGalerkinOracleForTiltedOperator) {
  for (double p : {0.5, 1.0, 2.5}) EXPECT_NEAR(hbar(Potential::cosine(1), p1(p), 128), galerkin_oracle(p), 1e-10);
}

TEST(SolveCell, Invariants) {
  auto s = solve_cell(Potential::cosine(1), p1(1.0), 128);
  EXPECT_GT(s.r.min(), 0.0);
  EXPECT_GT(s.pi.min(), 0.0);
  EXPECT_NEAR(mean(s.pi), 1.0, 1e-10);
  EXPECT_LE(std::abs(interpolate(s.v, p1(0.0))), 1e-10);
  for (std::size_t i = 0; i < s.r.size(); ++i) EXPECT_NEAR(s.r[i], std::exp(-s.v[i]), 1e-12 * s.r[i]);
}

TEST(SolveCell, PiIsEvenInP) {
  auto [a, b] = solve_cell_pair(Potential::cosine(1), p1(0.8), 64);
  for (std::size_t i = 0; i < a.pi.size(); ++i) EXPECT_NEAR(a.pi[i], b.pi[i], 1e-12);
  EXPECT_DOUBLE_EQ(a.hbar, b.hbar);
}

TEST(SolveCell, PropertySuite) {
  for (const auto& V : {Potential::cosine(1), Potential::random_harmonics(7)}) {
    std::vector<double> ps;
    for (int i = -12; i <= 12; ++i) ps.push_back(0.25 * i);
    std::vector<double> h;
    for (double p : ps) h.push_back(hbar(V, p1(p)));
    for (std::size_t i = 0; i < ps.size(); ++i) {
      EXPECT_GE(h[i], 0.5 * ps[i] * ps[i] + V.min() - 1e-8);
      EXPECT_LE(h[i], 0.5 * ps[i] * ps[i] + V.max() + 1e-8);
      EXPECT_NEAR(h[i], h[ps.size() - 1 - i], 1e-8);
    }
    for (std::size_t i = 0; i + 2 < ps.size(); ++i) EXPECT_LE(h[i + 1], 0.5 * (h[i] + h[i + 2]) + 1e-8);
  }
}

TEST(SolveCell, SeparablePotentialIn2D) {
  const auto V2 = Potential::cosine(2);
  const auto V1 = Potential::cosine(1);
  auto s = solve_cell(V2, p2(0.5, -1.0), 32);
  EXPECT_NEAR(s.hbar, hbar(V1, p1(0.5), 32) + hbar(V1, p1(-1.0), 32), 1e-9);
  auto g = grad_hbar(s, solve_cell(V2, p2(-0.5, 1.0), 32));
  auto a = solve_cell_pair(V1, p1(0.5), 32);
  auto b = solve_cell_pair(V1, p1(-1.0), 32);
  EXPECT_NEAR(g[0], grad_hbar(a.first, a.second)[0], 1e-9);
  EXPECT_NEAR(g[1], grad_hbar(b.first, b.second)[0], 1e-9);
}

TEST(SolveCell, SpectralConvergence) {
  const auto V = pole_potential();
  const double h64 = hbar(V, p1(0.5), 64), h128 = hbar(V, p1(0.5), 128), h256 = hbar(V, p1(0.5), 256);
  EXPECT_GT(std::abs(h64 - h128) / std::abs(h128 - h256), 10.0);
}

TEST(SolveCell, Errors) {
  const auto V = Potential::cosine(1);
  EXPECT_THROW(solve_cell(V, p1(21.0), 64), Error);
  EXPECT_THROW(solve_cell(V, p1(0.0), 16), Error);
  EXPECT_THROW(solve_cell(V, p1(0.0), 48), Error);
  EXPECT_THROW(solve_cell(V, p2(0.0, 0.0), 64), Error);
  try {
    solve_cell(Potential::cosine(1, 4000.0, 512), p1(0.0), 32);
    ADD_FAILURE() << "under-resolved solve should be rejected";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoPositiveEigenvector);
  }
}

TEST(GradHbar, Examples) {
  auto z = solve_cell_pair(Potential::zero(1), p1(2.0), 64);
  EXPECT_NEAR(grad_hbar(z.first, z.second)[0], 2.0, 1e-10);
  const auto V = Potential::cosine(1);
  auto s0 = solve_cell_pair(V, p1(0.0), 128);
  EXPECT_LT(std::abs(grad_hbar(s0.first, s0.second)[0]), 1e-8);
  auto s1 = solve_cell_pair(V, p1(1.0), 128);
  const double h = 1e-3;
  const double fd = (hbar(V, p1(1 + h)) - hbar(V, p1(1 - h))) / (2 * h);
  EXPECT_NEAR(grad_hbar(s1.first, s1.second)[0], fd, 1e-5);
}

TEST(GradHbar, MatchesFiniteDifferences2D) {
  const Potential V = Potential::from_series(2, {{{1, 0}, 1.0, 0.0}, {{1, 1}, 0.3, 0.2}}, 64);
  const Vec p = p2(0.4, -0.3);
  auto [a, b] = solve_cell_pair(V, p, 32);
  auto g = grad_hbar(a, b);
  const double h = 1e-3;
  for (int j = 0; j < 2; ++j) {
    Vec e = Vec::Zero(2);
    e[j] = h;
    EXPECT_NEAR(g[j], (hbar(V, p + e, 32) - hbar(V, p - e, 32)) / (2 * h), 1e-5);
  }
}

TEST(GradHbar, RejectsMismatchedSolutions) {
  const auto V = Potential::cosine(1);
  auto a = solve_cell(V, p1(1.0), 64);
  auto b = solve_cell(V, p1(-1.0), 128);
  auto c = solve_cell(V, p1(-0.5), 64);
  auto d = solve_cell(Potential::cosine(1, 2.0), p1(-1.0), 64);
  for (const auto* other : {&b, &c, &d}) {
    try {
      grad_hbar(a, *other);
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MismatchedSolutions);
    }
  }
}

TEST(HessHbar, Examples) {
  auto id = hess_hbar(Potential::zero(2), p2(0.3, 0.1), 1e-3, 32);
  EXPECT_LT((id - Mat::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-6);
  auto h = hess_hbar(Potential::cosine(1), p1(0.0));
  EXPECT_GT(h(0, 0), 0.0);
  EXPECT_LT(h(0, 0), 1.0);  // homogenization lowers the curvature at p = 0
  EXPECT_THROW(hess_hbar(Potential::cosine(1), p1(0.0), 0.5), Error);
}

TEST(Residuals, Examples) {
  auto z = residuals(solve_cell(Potential::zero(1), p1(1.5), 64));
  EXPECT_LT(z.cell_residual, 1e-12);
  EXPECT_LT(z.stationarity_residual, 1e-12);

  auto s = solve_cell(Potential::cosine(1), p1(1.0), 128);
  auto r = residuals(s);
  EXPECT_LT(r.cell_residual, 1e-8);
  EXPECT_LT(r.stationarity_residual, 1e-8);

  auto bad = s;
  for (std::size_t i = 0; i < bad.v.size(); ++i) bad.v[i] += 1e-3 * std::sin(2 * pi * bad.v.grid().node(i)[0]);
  EXPECT_GT(residuals(bad).cell_residual, 1e-4);
}

TEST(Residuals, GrowWhenUnderResolved) {
  const auto V = pole_potential();
  const auto fine = residuals(solve_cell(V, p1(1.0), 128));
  const auto coarse = residuals(solve_cell(V, p1(1.0), 64));
  EXPECT_GT(coarse.cell_residual, fine.cell_residual);
  EXPECT_LT(fine.cell_residual, 1e-8);
}
