#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <numbers>

#include "hjhom/viscous_kernel.hpp"

using namespace hjhom;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }

// u^eps(0, 1) for V = 0 and g = min(|y|, 10), straight from the Gaussian
// integral. Independent of the solver: plain adaptive quadrature.
double free_capped_norm(double eps) {
  using boost::math::quadrature::gauss_kronrod;
  auto f = [eps](double y) { return std::exp(-(0.5 * y * y + std::min(std::abs(y), 10.0)) / eps); };
  double s = 0.0;
  for (auto [a, b] : {std::pair{-12.0, -1.0}, {-1.0, 0.0}, {0.0, 1.0}, {1.0, 12.0}})
    s += gauss_kronrod<double, 61>::integrate(f, a, b, 15, 1e-14);
  return -eps * std::log(s / std::sqrt(2.0 * std::numbers::pi * eps));
}

double heat(double t, double d) { return std::exp(-d * d / (2 * t)) / std::sqrt(2 * std::numbers::pi * t); }

}  // namespace

TEST(SolveEps, ZeroDataZeroPotential) {
  for (double eps : {0.5, 0.1}) {
    auto pr = EpsProblem::configure(Potential::zero(1), data::constant(0.0), eps, 0.7, {v1(0.0), v1(0.4)});
    for (double u : solve_eps(pr, {v1(0.0), v1(0.4)})) EXPECT_EQ(u, 0.0);
  }
}

TEST(SolveEps, FreeCappedNormMatchesQuadrature) {
  for (int k : {4, 6, 8}) {
    const double eps = std::pow(2.0, -k);
    auto pr = EpsProblem::configure(Potential::zero(1), data::capped_norm(), eps, 1.0, {v1(0.0)});
    EXPECT_NEAR(solve_eps(pr, {v1(0.0)})[0], free_capped_norm(eps), 1e-4) << "eps=2^-" << k;
  }
}

TEST(SolveEps, AffineDataWithTiltIsExact) {
  // u = a x - t a^2/2 for every eps; the tilt P = a makes the gauged state
  // constant, so only roundoff remains.
  const double a = 0.5, t = 0.8;
  const std::vector<Vec> ev{v1(-1.0), v1(0.0), v1(0.7)};
  auto pr = EpsProblem::configure(Potential::zero(1), data::affine_capped(v1(a)), 0.05, t, ev, 16.0, v1(a));
  const auto u = solve_eps(pr, ev);
  for (std::size_t i = 0; i < ev.size(); ++i) EXPECT_NEAR(u[i], a * ev[i][0] - 0.5 * t * a * a, 1e-12);
}

TEST(SolveEps, SmallTimeLemma) {
  const auto V = Potential::cosine(1);
  for (double eps : {0.1, 0.05}) {
    for (double t : {0.05, 0.1, 0.2}) {
      auto pr = EpsProblem::configure(V, data::constant(0.0), eps, t, {v1(0.0), v1(0.3)});
      for (double u : solve_eps(pr, {v1(0.0), v1(0.3)})) EXPECT_LE(std::abs(u), t * V.sup_norm() + 1e-12);
    }
  }
}

TEST(SolveEps, GaugeInvariance) {
  auto pr = EpsProblem::configure(Potential::cosine(1), data::smooth(), 0.1, 0.5, {v1(0.2)});
  const double a = solve_eps(pr, {v1(0.2)})[0];
  pr.renorm_every = 2;
  EXPECT_LT(std::abs(solve_eps(pr, {v1(0.2)})[0] - a), 1e-10);
}

TEST(SolveEps, TruncationStability) {
  const auto ev = std::vector<Vec>{v1(0.0), v1(0.5)};
  auto pr = EpsProblem::configure(Potential::cosine(1), data::capped_norm(), 0.1, 1.0, ev);
  const auto a = solve_eps(pr, ev);
  // At least 50% more room with the same spacing (and so the same step).
  pr.half_width *= 2.0;
  pr.grid_points *= 2;
  const auto b = solve_eps(pr, ev);
  for (std::size_t i = 0; i < ev.size(); ++i) EXPECT_LT(std::abs(a[i] - b[i]), 1e-6);
}

TEST(SolveEps, StepRichardsonConverged) {
  auto pr = EpsProblem::configure(Potential::cosine(1), data::smooth(), 0.1, 0.5, {v1(0.0)});
  const double a = solve_eps(pr, {v1(0.0)})[0];
  pr.ds = 1.0 / 256.0;
  const double b = solve_eps(pr, {v1(0.0)})[0];
  // Fourth order after extrapolation: about 1e-6 at the default step.
  EXPECT_LT(std::abs(a - b), 5e-6);
  pr.richardson = 0;
  EXPECT_GT(std::abs(solve_eps(pr, {v1(0.0)})[0] - b), std::abs(a - b));
}

TEST(SolveEps, RefusesUnderResolvedOrTruncatedBoxes) {
  auto pr = EpsProblem::configure(Potential::cosine(1), data::smooth(), 0.1, 0.5, {v1(0.0)});
  auto coarse = pr;
  coarse.grid_points /= 2;
  auto narrow = pr;
  narrow.half_width = 1.0;
  narrow.grid_points = 512;
  for (const auto& bad : {coarse, narrow}) {
    try {
      solve_eps(bad, {v1(0.0)});
      ADD_FAILURE();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::ResolutionRefused);
    }
  }
}

TEST(SolveEps, TwoDimensionalSeparable) {
  // V = cos x + cos y and g(x) = g1(x1) + g1(x2) split into two 1D problems.
  const double eps = 0.25, t = 0.5;
  LipschitzData g2{[](const Vec& x) { return std::sqrt(1 + x[0] * x[0]) + std::sqrt(1 + x[1] * x[1]) - 2.0; }, 2.0,
                   true, 1.0, "sep"};
  Vec x(2);
  x << 0.25, -0.5;
  auto pr2 = EpsProblem::configure(Potential::cosine(2), g2, eps, t, {x});
  auto pr1 = EpsProblem::configure(Potential::cosine(1), data::smooth(), eps, t, {v1(0.25), v1(-0.5)});
  const auto u1 = solve_eps(pr1, {v1(0.25), v1(-0.5)});
  EXPECT_NEAR(solve_eps(pr2, {x})[0], u1[0] + u1[1], 1e-8);
}

TEST(SolveEpsFd, ZeroAndConstantData) {
  auto pr = EpsProblem::configure(Potential::zero(1), data::constant(0.0), 0.1, 1.0, {v1(0.0)});
  EXPECT_EQ(solve_eps_fd(pr, {v1(0.0)})[0], 0.0);
  const auto V = Potential::cosine(1);
  auto pc = EpsProblem::configure(V, data::constant(2.0), 0.1, 1.0, {v1(0.0), v1(0.3)});
  for (double u : solve_eps_fd(pc, {v1(0.0), v1(0.3)})) EXPECT_LE(std::abs(u - 2.0), 1.0 * V.sup_norm());
}

TEST(SolveEpsFd, AgreesWithHopfCole) {
  const std::vector<Vec> ev{v1(-0.5), v1(0.0), v1(0.3), v1(1.0)};
  auto pr = EpsProblem::configure(Potential::cosine(1), data::smooth(), 0.05, 1.0, ev);
  const auto a = solve_eps(pr, ev);
  const auto b = solve_eps_fd(pr, ev);
  for (std::size_t i = 0; i < ev.size(); ++i) EXPECT_LT(std::abs(a[i] - b[i]), 5e-3);
}

TEST(SolveEpsFd, RejectsLargeSteps) {
  auto pr = EpsProblem::configure(Potential::cosine(1), data::smooth(), 0.1, 0.1, {v1(0.0)});
  try {
    solve_eps_fd(pr, {v1(0.0)}, 1, 1e-2);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CFLViolation);
  }
}

TEST(SchrodingerKernel, FreeHeatKernel) {
  const auto box = BoxGrid::around(v1(0.0), 12.0);
  for (double t : {0.5, 1.0, 3.0}) {
    const auto k = schrodinger_kernel(Potential::zero(1), t, v1(0.3), box);
    const auto p = k.profile();
    double err = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) err = std::max(err, std::abs(p[i] - heat(t, box.node(i)[0] - 0.3)));
    EXPECT_LT(err, 1e-6) << "t=" << t;
  }
}

TEST(SchrodingerKernel, RoughBoundAndMass) {
  const auto V = Potential::random_harmonics(5);
  const auto box = BoxGrid::around(v1(0.0), 16.0);
  for (double t : {0.5, 2.0}) {
    const auto k = schrodinger_kernel(V, t, v1(0.0), box);
    const auto p = k.profile();
    const double c = std::exp(t * V.sup_norm());
    const double top = *std::max_element(p.begin(), p.end());
    // Far tails sit on the FFT roundoff floor, about 1e-15 of the peak.
    const double floor = 1e-13 * top;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double h = heat(t, box.node(i)[0]);
      EXPECT_LE(p[i], 1.01 * c * h + floor);
      if (h > 1e3 * floor) {
        EXPECT_GE(p[i], h / (1.01 * c));
      }
    }
    EXPECT_LE(k.mass(), c);
    EXPECT_GE(k.mass(), 1.0 / c);
    for (double v : p) EXPECT_GE(v, 0.0);
  }
}

TEST(SchrodingerKernel, TiltedGaugeAgrees) {
  const auto V = Potential::cosine(1);
  const auto box = BoxGrid::around(v1(-1.0), 14.0);
  const auto a = schrodinger_kernel(V, 2.0, v1(0.0), box);
  const auto b = schrodinger_kernel(V, 2.0, v1(0.0), box, {}, v1(0.5));
  for (double y : {-2.0, -1.0, 0.0, 0.75}) EXPECT_NEAR(b.log_value(v1(y)), a.log_value(v1(y)), 1e-7);
}

TEST(SchrodingerKernel, MatchesMonteCarlo) {
  const auto V = Potential::cosine(1);
  const auto k = schrodinger_kernel(V, 1.0, v1(0.0), BoxGrid::around(v1(0.0), 12.0));
  const auto mc = feynman_kac_mc(V, 1.0, v1(0.0), v1(0.0), 20000, 7);
  EXPECT_LT(std::abs(k.value(v1(0.0)) - mc.estimate), 3.0 * mc.std_error);
}

TEST(SchrodingerKernel, RefusesSmallBoxesAndWideBumps) {
  const auto V = Potential::cosine(1);
  EXPECT_THROW(schrodinger_kernel(V, 4.0, v1(0.0), BoxGrid::around(v1(0.0), 8.0)), Error);
  KernelOptions opt;
  opt.bump_width = 1.0;
  EXPECT_THROW(schrodinger_kernel(V, 1.0, v1(0.0), BoxGrid::around(v1(0.0), 12.0), opt), Error);
}

TEST(FeynmanKac, ConstantPotentials) {
  const auto z = feynman_kac_mc(Potential::zero(1), 1.5, v1(0.2), v1(-0.3), 10000, 1);
  EXPECT_DOUBLE_EQ(z.estimate, heat(1.5, 0.5));
  EXPECT_EQ(z.std_error, 0.0);
  const auto c = feynman_kac_mc(Potential::constant(1, 0.7), 1.5, v1(0.2), v1(-0.3), 10000, 1);
  EXPECT_NEAR(c.estimate, heat(1.5, 0.5) * std::exp(0.7 * 1.5), 1e-13);
  EXPECT_LT(c.std_error, 1e-12);
}

TEST(FeynmanKac, ReproducibleAndThreadIndependent) {
  const auto V = Potential::cosine(1);
  const auto a = feynman_kac_mc(V, 1.0, v1(0.0), v1(0.1), 10000, 99, 256, 1);
  const auto b = feynman_kac_mc(V, 1.0, v1(0.0), v1(0.1), 10000, 99, 256, 3);
  EXPECT_EQ(a.estimate, b.estimate);
  EXPECT_EQ(a.std_error, b.std_error);
  EXPECT_NE(feynman_kac_mc(V, 1.0, v1(0.0), v1(0.1), 10000, 100).estimate, a.estimate);
  EXPECT_THROW(feynman_kac_mc(V, 1.0, v1(0.0), v1(0.1), 100, 1), Error);
}

TEST(DoobKernel, FreeCase) {
  const auto cell = solve_cell(Potential::zero(1), v1(0.0), 64);
  const auto box = BoxGrid::around(v1(0.0), 12.0);
  const auto k = doob_kernel(cell, 1.0, v1(0.0), box);
  const auto p = k.profile();
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], heat(1.0, box.node(i)[0]), 1e-6);
}

TEST(DoobKernel, MassAndIdentity) {
  HamiltonianModel m(Potential::cosine(1));
  const auto& cell = m.pair(v1(1.0))->first;
  for (double t : {1.0, 3.0}) {
    const auto box = BoxGrid::around(v1(-t), 8.0 * std::sqrt(t) + 4.0 + t);
    const auto P = doob_kernel(cell, t, v1(0.0), box);
    EXPECT_NEAR(P.mass(), 1.0, 1e-6);
    const auto K = schrodinger_kernel(m.potential(), t, v1(0.0), box);
    for (double y = -2.0 * t; y <= 1.0; y += 0.37) {
      const double rhs = t * cell.hbar + log_doob_h(cell, v1(0.0)) - log_doob_h(cell, v1(y)) + P.log_value(v1(y));
      EXPECT_LT(std::abs(std::expm1(K.log_value(v1(y)) - rhs)), 1e-3) << "t=" << t << " y=" << y;
    }
  }
}

TEST(DriftKernel, ConstantDriftShiftsTheHeatKernel) {
  const TorusGrid g(1, 32);
  const VectorField b({ScalarField(g, 0.75)});
  const auto box = BoxGrid::around(v1(1.0), 12.0);
  const auto k = drift_kernel(b, 2.0, v1(0.0), box);
  for (double y : {-1.0, 0.5, 1.5, 3.0}) EXPECT_NEAR(k.value(v1(y)), heat(2.0, y - 1.5), 1e-6);
}

TEST(BallisticBand, FreeSeriesIsConstant) {
  HamiltonianModel m(Potential::zero(1));
  for (double q : {0.0, 1.0}) {
    for (const auto& pt : ballistic_band(m, v1(q), {1.0, 4.0, 9.0}))
      EXPECT_NEAR(pt.value, 1.0 / std::sqrt(2.0 * std::numbers::pi), 1e-6) << "q=" << q << " t=" << pt.t;
  }
}

TEST(BallisticBand, CosineBandIsNarrow) {
  HamiltonianModel m(Potential::cosine(1));
  for (double q : {0.0, 1.0}) {
    const auto s = ballistic_band(m, v1(q), {5.0, 10.0, 20.0});
    double lo = 1e300, hi = 0.0;
    for (const auto& pt : s) {
      lo = std::min(lo, pt.value);
      hi = std::max(hi, pt.value);
    }
    EXPECT_GT(lo, 0.0);
    EXPECT_LE(hi / lo, 3.0);
  }
}

TEST(BallisticBand, RejectsTimesOutsideRange) {
  HamiltonianModel m(Potential::zero(1));
  EXPECT_THROW(ballistic_band(m, v1(0.0), {0.5}), Error);
}

TEST(SolveEps, RefusesLostDynamicRange) {
  // Untilted, w(0.3) ~ e^{-0.3/eps} below the peak at 0.
  const double eps = std::ldexp(1.0, -8), t = eps / 2;
  const auto V = Potential::cosine(1);
  const auto g = data::capped_norm();
  const std::vector<Vec> at{v1(0.3)};
  try {
    solve_eps(EpsProblem::configure(V, g, eps, t, at), at);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Underflow);
  }
  HamiltonianModel m(V);
  const double u = solve_eps(EpsProblem::configure(V, g, eps, t, at, 16, v1(1.0)), at)[0];
  EXPECT_NEAR(u, solve_hopflax(g, m, v1(0.3), t).value, 0.1 * eps);
}
