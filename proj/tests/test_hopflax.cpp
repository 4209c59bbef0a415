#include <gtest/gtest.h>

#include <chrono>
#include <cmath>

#include "hjhom/hopflax.hpp"

using namespace hjhom;

namespace {

Vec v1(double x) { return Vec::Constant(1, x); }

}  // namespace

TEST(LipschitzData, DifferenceQuotientsRespectBound) {
  for (const auto& g : {data::capped_norm(), data::smooth(), data::concave_huber(), data::quadratic_capped(3.0),
                        data::affine_capped(v1(-0.7)), data::constant(2.0)}) {
    double worst = 0.0;
    for (int i = -400; i < 400; ++i) {
      const double a = i * 0.037, b = a + 0.011;
      worst = std::max(worst, std::abs(g(v1(b)) - g(v1(a))) / 0.011);
    }
    EXPECT_LE(worst, g.lipschitz_bound * 1.01 + 1e-12) << g.name;
  }
}

TEST(LipschitzData, ParsesBuiltins) {
  EXPECT_EQ(data::parse("capped-norm").name, "capped-norm");
  EXPECT_DOUBLE_EQ(data::parse("const:2.5")(v1(3.0)), 2.5);
  EXPECT_DOUBLE_EQ(data::parse("affine:0.5")(v1(3.0)), 1.5);
  EXPECT_DOUBLE_EQ(data::parse("affine:1,2", 2)(Vec::Ones(2)), 3.0);
  EXPECT_DOUBLE_EQ(data::parse("quadratic-capped:2")(v1(3.0)), 4.0);
  EXPECT_THROW(data::parse("nonsense"), Error);
}

TEST(HopfLax, FreeCappedNormInsideUnitBall) {
  HamiltonianModel m(Potential::zero(1));
  for (double x : {-0.9, -0.3, 0.0, 0.5, 1.0}) {
    auto s = solve_hopflax(data::capped_norm(), m, v1(x), 1.0);
    EXPECT_NEAR(s.value, 0.5 * x * x, 1e-12);
    // At x = 1 the profile is quadratic on one side of the kink, so function
    // values only pin the minimizer to about sqrt(machine epsilon).
    EXPECT_NEAR(s.minimizer[0], 0.0, 1e-7);
  }
}

TEST(HopfLax, FreeCappedNorm2D) {
  HamiltonianModel m(Potential::zero(2));
  Vec x(2);
  x << 0.3, -0.4;
  HopfLaxOptions opt;
  opt.coarse_step_factor = 1.0 / 40.0;
  auto s = solve_hopflax(data::capped_norm(), m, x, 1.0, opt);
  EXPECT_NEAR(s.value, 0.5 * x.squaredNorm(), 1e-12);
}

TEST(HopfLax, ConstantDataRideTheMinimumOfHbar) {
  HamiltonianModel m(Potential::cosine(1), 64);
  auto s = solve_hopflax(data::constant(1.5), m, v1(0.2), 0.7);
  EXPECT_NEAR(s.value, 1.5 - 0.7 * m.hbar(v1(0.0)), 1e-12);
  EXPECT_NEAR(s.minimizer[0], 0.2, 1e-8);
}

TEST(HopfLax, AffineDataInTheCore) {
  HamiltonianModel m(Potential::cosine(1), 64);
  const double a = 0.6;
  for (double x : {-0.5, 0.0, 0.8}) {
    auto s = solve_hopflax(data::affine_capped(v1(a)), m, v1(x), 1.0);
    EXPECT_NEAR(s.value, a * x - m.hbar(v1(a)), 1e-10);
  }
}

TEST(HopfLax, SolutionInvariants) {
  HamiltonianModel m(Potential::cosine(1), 64);
  const auto g = data::capped_norm();
  auto s = solve_hopflax(g, m, v1(0.4), 1.0);
  EXPECT_LE(s.value, s.coarse_value);
  EXPECT_LE(std::abs(s.minimizer[0] - 0.4), s.search_radius);
  const auto lv = legendre(m, v1((0.4 - s.minimizer[0]) / 1.0));
  EXPECT_NEAR(s.value, g(s.minimizer) + lv.lbar, 1e-12);
  for (const auto& [y, hv] : s.h_profile) EXPECT_LE(s.value, hv + 1e-14);
  EXPECT_FALSE(s.h_profile.empty());
}

TEST(HopfLax, MinimizerMatchesCharacteristic) {
  HamiltonianModel m(Potential::cosine(1), 64);
  const auto g = data::smooth();
  const double x = 0.3, t = 1.0, d = 1e-4;
  auto s = solve_hopflax(g, m, v1(x), t);
  const double du = (solve_hopflax(g, m, v1(x + d), t).value - solve_hopflax(g, m, v1(x - d), t).value) / (2 * d);
  EXPECT_LT(std::abs(s.minimizer[0] - (x - t * m.grad(v1(du))[0])), 1e-3);
}

TEST(HopfLax, ParabolicScaling) {
  HamiltonianModel m(Potential::cosine(1), 64);
  const auto g = data::smooth();
  const double x0 = 0.2, t0 = 0.5, x = 0.3, t = 0.8;
  LipschitzData gs{[&](const Vec& y) { return g(Vec(v1(x0) + y * t0)) / t0; }, 1.0, true, t0, "scaled"};
  const double lhs = solve_hopflax(g, m, v1(x0 + x * t0), t * t0).value;
  const double rhs = t0 * solve_hopflax(gs, m, v1(x), t).value;
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(SmallTimeCheck, Examples) {
  HamiltonianModel free(Potential::zero(1));
  EXPECT_EQ(small_time_check(data::constant(0.0), free, v1(0.3), 0.5), 0.0);
  HamiltonianModel m(Potential::cosine(1), 64);
  EXPECT_NEAR(small_time_check(data::constant(2.0), m, v1(0.1), 0.3), std::abs(m.hbar(v1(0.0))), 1e-12);
  double prev = 1e300;
  for (double t : {0.1, 0.05, 0.025}) {
    const double c = small_time_check(data::capped_norm(), m, v1(0.0), t);
    EXPECT_LE(c, prev + 1e-12);
    EXPECT_LT(c, 1.0 + m.potential().sup_norm());
    prev = c;
  }
}

TEST(QuadGrowth, SumOfQuadratics) {
  HamiltonianModel m(Potential::zero(1));
  auto d = quad_growth_diag(data::quadratic_capped(10.0), m, v1(0.6), 1.0);
  EXPECT_NEAR(d.delta, 1.0, 1e-9);
  EXPECT_NEAR(d.minimizer[0], 0.3, 1e-9);
}

TEST(QuadGrowth, CappedNormGrowsLinearly) {
  HamiltonianModel m(Potential::zero(1));
  auto d = quad_growth_diag(data::capped_norm(), m, v1(0.0), 1.0);
  EXPECT_NEAR(d.minimizer[0], 0.0, 1e-9);
  for (const auto& [r, delta] : d.series) EXPECT_NEAR(delta, 1.0 / r + 0.5, 1e-6 / r);
  EXPECT_DOUBLE_EQ(d.r, 0.5);
}

TEST(QuadGrowth, SmoothDataTaylorLimit) {
  HamiltonianModel m(Potential::cosine(1), 64);
  const double t = 1.0;
  auto d = quad_growth_diag(data::smooth(), m, v1(0.0), t);
  // h''(0) = g''(0) + Lbar''(0)/t with Lbar''(0) = 1/Hbar''(0).
  const double curvature = 1.0 + 1.0 / (t * m.hess(v1(0.0))(0, 0));
  EXPECT_NEAR(d.series.back().second, 0.5 * curvature, 2e-3);
  EXPECT_GT(d.delta, 0.0);
}

TEST(QuadGrowth, FlatBottomRaises) {
  HamiltonianModel m(Potential::zero(1));
  // h(y) = g(y) + y^2/2 vanishes identically on [-1, 1].
  LipschitzData flat{[](const Vec& y) {
                       const double r = y.norm();
                       return r <= 1.0 ? -0.5 * y.squaredNorm() : 0.5 - r;
                     },
                     1.0, true, 0.0, "flat"};
  try {
    quad_growth_diag(flat, m, v1(0.0), 1.0);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NoQuadraticGrowth);
  }
}
