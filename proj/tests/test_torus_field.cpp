#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "hjhom/torus_field.hpp"

using namespace hjhom;
using std::numbers::pi;

namespace {

Vec pt(double x) { return Vec::Constant(1, x); }
Vec pt(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

double max_err(const ScalarField& a, auto&& exact) {
  double e = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) e = std::max(e, std::abs(a[i] - exact(a.grid().node(i))));
  return e;
}

}  // namespace

TEST(TorusGrid, RejectsBadSizes) {
  EXPECT_THROW(TorusGrid(1, 48), Error);
  EXPECT_THROW(TorusGrid(1, 4), Error);
  EXPECT_THROW(TorusGrid(3, 16), Error);
  EXPECT_NO_THROW(TorusGrid(2, 8));
  EXPECT_EQ(TorusGrid(2, 16).size(), 256u);
}

TEST(Gradient, SineIsExact) {
  const TorusGrid g(1, 32);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::sin(2 * pi * x[0]); });
  auto d = gradient(f);
  EXPECT_LT(max_err(d[0], [](const Vec& x) { return 2 * pi * std::cos(2 * pi * x[0]); }), 1e-12);
}

TEST(Gradient, ConstantGivesZero) {
  const TorusGrid g(2, 16);
  auto d = gradient(ScalarField(g, 3.0));
  EXPECT_LT(d[0].sup_norm(), 1e-13);
  EXPECT_LT(d[1].sup_norm(), 1e-13);
}

TEST(Gradient, TwoHarmonics) {
  const TorusGrid g(1, 64);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::cos(2 * pi * x[0]) + std::cos(4 * pi * x[0]); });
  auto d = gradient(f);
  EXPECT_LT(max_err(d[0],
                    [](const Vec& x) { return -2 * pi * std::sin(2 * pi * x[0]) - 4 * pi * std::sin(4 * pi * x[0]); }),
            1e-12);
}

TEST(Gradient, TwoDimensionalComponents) {
  const TorusGrid g(2, 32);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::sin(2 * pi * x[0]) * std::cos(4 * pi * x[1]); });
  auto d = gradient(f);
  EXPECT_LT(max_err(d[0], [](const Vec& x) { return 2 * pi * std::cos(2 * pi * x[0]) * std::cos(4 * pi * x[1]); }),
            1e-11);
  EXPECT_LT(max_err(d[1], [](const Vec& x) { return -4 * pi * std::sin(2 * pi * x[0]) * std::sin(4 * pi * x[1]); }),
            1e-11);
}

TEST(Gradient, NyquistDerivativeDropped) {
  const TorusGrid g(1, 16);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::cos(16 * pi * x[0]); });
  EXPECT_LT(gradient(f)[0].sup_norm(), 1e-12);
}

TEST(Gradient, ReproducesFieldFromAntiderivative) {
  // F = sum sin(2 pi k x)/(2 pi k) has F' = sum cos(2 pi k x), mean zero.
  const TorusGrid g(1, 64);
  auto F = ScalarField::sample(g, [](const Vec& x) {
    double s = 0;
    for (int k = 1; k <= 5; ++k) s += std::sin(2 * pi * k * x[0]) / (2 * pi * k) / k;
    return s;
  });
  auto d = gradient(F);
  EXPECT_LT(max_err(d[0],
                    [](const Vec& x) {
                      double s = 0;
                      for (int k = 1; k <= 5; ++k) s += std::cos(2 * pi * k * x[0]) / k;
                      return s;
                    }),
            1e-12);
}

TEST(Laplacian, Cosine) {
  const TorusGrid g(1, 32);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::cos(2 * pi * x[0]); });
  EXPECT_LT(max_err(laplacian(f), [](const Vec& x) { return -4 * pi * pi * std::cos(2 * pi * x[0]); }), 1e-11);
  EXPECT_LT(laplacian(ScalarField(g, 2.0)).sup_norm(), 1e-12);
}

TEST(Laplacian, ProductOfSines2D) {
  const TorusGrid g(2, 32);
  auto fn = [](const Vec& x) { return std::sin(2 * pi * x[0]) * std::sin(2 * pi * x[1]); };
  auto f = ScalarField::sample(g, fn);
  EXPECT_LT(max_err(laplacian(f), [&](const Vec& x) { return -8 * pi * pi * fn(x); }), 1e-10);
}

TEST(Laplacian, MeanIsZero) {
  const TorusGrid g(2, 16);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::exp(std::sin(2 * pi * x[0]) * std::cos(2 * pi * x[1])); });
  EXPECT_LT(std::abs(mean(laplacian(f))), 1e-12);
  const TorusGrid g1(1, 64);
  auto h = ScalarField::sample(g1, [](const Vec& x) { return std::abs(x[0] - 0.5); });
  EXPECT_LT(std::abs(mean(laplacian(h))), 1e-12);
}

TEST(Mean, Examples) {
  const TorusGrid g(1, 32);
  EXPECT_DOUBLE_EQ(mean(ScalarField(g, 3.0)), 3.0);
  EXPECT_LT(std::abs(mean(ScalarField::sample(g, [](const Vec& x) { return std::sin(2 * pi * x[0]); }))), 1e-15);
  EXPECT_NEAR(mean(ScalarField::sample(g, [](const Vec& x) { return std::pow(std::cos(2 * pi * x[0]), 2); })), 0.5,
              1e-15);
}

TEST(Interpolate, NodesAreExact) {
  const TorusGrid g(1, 32);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::exp(std::sin(2 * pi * x[0])); });
  for (int k = 0; k < 32; ++k) EXPECT_EQ(interpolate(f, pt(k / 32.0)), f[k]);
  const TorusGrid g2(2, 16);
  auto f2 = ScalarField::sample(g2, [](const Vec& x) { return std::cos(2 * pi * (x[0] + 2 * x[1])) + x[0]; });
  for (std::size_t i = 0; i < g2.size(); ++i) EXPECT_EQ(interpolate(f2, g2.node(i)), f2[i]);
}

TEST(Interpolate, OffNodeValues) {
  const TorusGrid g(1, 32);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::cos(2 * pi * x[0]); });
  EXPECT_NEAR(interpolate(f, pt(0.25)), 0.0, 1e-12);
  auto h = ScalarField::sample(g, [](const Vec& x) { return std::cos(2 * pi * x[0]) + 0.3 * std::cos(4 * pi * x[0]); });
  EXPECT_NEAR(interpolate(h, pt(1.0 / 3.0)), std::cos(2 * pi / 3) + 0.3 * std::cos(4 * pi / 3), 1e-12);
  const TorusGrid g2(2, 16);
  auto fn = [](const Vec& x) { return std::sin(2 * pi * x[0]) * std::cos(6 * pi * x[1]) + 0.5; };
  auto f2 = ScalarField::sample(g2, fn);
  EXPECT_NEAR(interpolate(f2, pt(0.123, 0.777)), fn(pt(0.123, 0.777)), 1e-12);
}

TEST(Interpolate, NyquistModeIsCosine) {
  const TorusGrid g(1, 8);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::cos(8 * pi * x[0]); });
  EXPECT_NEAR(interpolate(f, pt(0.3)), std::cos(8 * pi * 0.3), 1e-13);
}

TEST(Parseval, HoldsInOneAndTwoDimensions) {
  for (int dim : {1, 2}) {
    const TorusGrid g(dim, 32);
    auto f = ScalarField::sample(g, [](const Vec& x) {
      double s = std::exp(std::cos(2 * pi * x[0]));
      if (x.size() == 2) s *= 1 + 0.5 * std::sin(2 * pi * x[1]);
      return s;
    });
    double lhs = 0;
    for (double v : f.values()) lhs += v * v;
    lhs /= static_cast<double>(f.size());
    double rhs = 0;
    for (auto c : fourier_coefficients(f)) rhs += std::norm(c);
    EXPECT_NEAR(lhs, rhs, 1e-12 * lhs);
  }
}

TEST(Resample, UpsamplingKeepsInterpolant) {
  const TorusGrid g(1, 16);
  auto fn = [](const Vec& x) { return std::sin(2 * pi * x[0]) + 0.2 * std::cos(14 * pi * x[0]); };
  auto f = ScalarField::sample(g, fn);
  auto up = resample(f, 64);
  EXPECT_LT(max_err(up, fn), 1e-13);
  auto down = resample(up, 16);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_NEAR(down[i], f[i], 1e-13);
  const TorusGrid g2(2, 16);
  auto fn2 = [](const Vec& x) { return std::sin(2 * pi * x[0]) * std::cos(4 * pi * x[1]); };
  EXPECT_LT(max_err(resample(ScalarField::sample(g2, fn2), 32), fn2), 1e-13);
}

TEST(FieldIO, RoundTrip) {
  const auto dir = std::filesystem::temp_directory_path();
  const TorusGrid g(2, 8);
  auto f = ScalarField::sample(g, [](const Vec& x) { return std::exp(x[0]) / 3.0 + x[1]; });
  const auto path = (dir / "hjhom_field_roundtrip.txt").string();
  write_field(path, f);
  auto back = read_field(path);
  ASSERT_EQ(back.grid(), g);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(back[i], f[i]);
  auto grad = gradient(f);
  write_field(path, grad);
  auto comps = read_fields(path);
  ASSERT_EQ(comps.size(), 2u);
  for (std::size_t i = 0; i < f.size(); ++i) EXPECT_EQ(comps[1][i], grad[1][i]);
  std::remove(path.c_str());
  EXPECT_THROW(read_field((dir / "hjhom_missing_field.txt").string()), Error);
}
