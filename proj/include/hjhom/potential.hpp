#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "hjhom/error.hpp"
#include "hjhom/torus_field.hpp"

namespace hjhom {

/// One real mode a*cos(2 pi k.x) + b*sin(2 pi k.x).
struct TrigTerm {
  std::array<int, 2> k{0, 0};
  double a = 0.0;
  double b = 0.0;
};

inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fingerprint(const ScalarField& f) {
  const int hdr[2] = {f.grid().dim(), f.grid().points_per_axis()};
  auto h = fnv1a(hdr, sizeof hdr);
  return fnv1a(f.values().data(), f.size() * sizeof(double), h);
}

/// A periodic potential V on the torus. Stored both as grid values and as the
/// real trigonometric series of its interpolant, which lets V be evaluated at
/// arbitrary points of R^n.
class Potential {
 public:
  /// Builds from grid values; the series keeps every mode above 1e-14.
  static Potential from_field(const ScalarField& field, std::string name = "field") {
    const auto c = fourier_coefficients(field);
    const int n = field.grid().points_per_axis();
    const int dim = field.grid().dim();
    // Spread each coefficient over signed wavenumbers in [-n/2, n/2]; a
    // Nyquist factor is a cosine, i.e. half on each sign.
    std::map<std::array<int, 2>, cplx> d;
    for (std::size_t idx = 0; idx < c.size(); ++idx) {
      const int i = dim == 1 ? static_cast<int>(idx) : static_cast<int>(idx / n);
      const int j = dim == 1 ? 0 : static_cast<int>(idx % n);
      std::array<int, 2> k{fft::wavenumber(i, n), dim == 1 ? 0 : fft::wavenumber(j, n)};
      std::vector<std::pair<std::array<int, 2>, double>> spread{{k, 1.0}};
      for (int a = 0; a < dim; ++a) {
        if (std::abs(k[a]) != n / 2) continue;
        std::vector<std::pair<std::array<int, 2>, double>> next;
        for (auto [kk, w] : spread) {
          next.push_back({kk, 0.5 * w});
          kk[a] = -kk[a];
          next.push_back({kk, 0.5 * w});
        }
        spread = std::move(next);
      }
      for (const auto& [kk, w] : spread) d[kk] += w * c[idx];
    }
    std::vector<TrigTerm> terms;
    for (const auto& [k, ck] : d) {
      const bool zero = k[0] == 0 && k[1] == 0;
      const bool upper = k[0] > 0 || (k[0] == 0 && k[1] > 0);
      if (!zero && !upper) continue;
      // c_k e^{ikx} + conj(c_k) e^{-ikx} = 2 Re c_k cos - 2 Im c_k sin
      const double a = zero ? ck.real() : 2.0 * ck.real();
      const double b = zero ? 0.0 : -2.0 * ck.imag();
      if (std::abs(a) < 1e-14 && std::abs(b) < 1e-14) continue;
      terms.push_back({k, a, b});
    }
    return Potential(field, std::move(terms), std::move(name));
  }

  static Potential from_series(int dim, std::vector<TrigTerm> terms, int n = 256, std::string name = "series") {
    const TorusGrid g(dim, n);
    auto eval = [&](const Vec& x) { return eval_series(terms, dim, x); };
    return Potential(ScalarField::sample(g, eval), std::move(terms), std::move(name));
  }

  static Potential zero(int dim, int n = 64) { return constant(dim, 0.0, n); }
  static Potential constant(int dim, double c, int n = 64) {
    return from_series(dim, {{{0, 0}, c, 0.0}}, n, "const");
  }
  /// cos(2 pi x) in 1D, cos(2 pi x) + cos(2 pi y) in 2D.
  static Potential cosine(int dim, double amplitude = 1.0, int n = 256) {
    std::vector<TrigTerm> t{{{1, 0}, amplitude, 0.0}};
    if (dim == 2) t.push_back({{0, 1}, amplitude, 0.0});
    return from_series(dim, std::move(t), n, "cos");
  }
  /// Random trigonometric polynomial in 1D with harmonics 1..3, coefficients
  /// uniform in [-0.5, 0.5].
  static Potential random_harmonics(std::uint64_t seed, int harmonics = 3, int n = 256) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    std::vector<TrigTerm> t;
    for (int k = 1; k <= harmonics; ++k) {
      const double a = u(rng);
      const double b = u(rng);
      t.push_back({{k, 0}, a, b});
    }
    return from_series(1, std::move(t), n, "harmonics:" + std::to_string(seed));
  }

  int dim() const { return field_.grid().dim(); }
  const ScalarField& field() const { return field_; }
  const std::vector<TrigTerm>& series() const { return terms_; }
  const std::string& name() const { return name_; }
  double lipschitz_bound() const { return lipschitz_; }
  double max() const { return max_; }
  double min() const { return min_; }
  double sup_norm() const { return std::max(std::abs(max_), std::abs(min_)); }
  double oscillation() const { return max_ - min_; }
  bool is_constant() const {
    for (const auto& t : terms_)
      if (t.k[0] != 0 || t.k[1] != 0) return false;
    return true;
  }
  double constant_value() const {
    double c = 0.0;
    for (const auto& t : terms_)
      if (t.k[0] == 0 && t.k[1] == 0) c += t.a;
    return c;
  }

  /// V at an arbitrary point of R^n.
  double operator()(const Vec& x) const { return eval_series(terms_, dim(), x); }
  double operator()(double x) const {
    double s = 0.0;
    for (const auto& t : terms_) {
      const double ph = two_pi * t.k[0] * x;
      s += t.a * std::cos(ph) + t.b * std::sin(ph);
    }
    return s;
  }

  /// Values of V on another torus grid, evaluated from the series.
  ScalarField on(const TorusGrid& g) const {
    if (g == field_.grid()) return field_;
    return ScalarField::sample(g, [&](const Vec& x) { return (*this)(x); });
  }

 private:
  Potential(ScalarField field, std::vector<TrigTerm> terms, std::string name)
      : field_(std::move(field)), terms_(std::move(terms)), name_(std::move(name)) {
    require(field_.all_finite(), ErrorCode::InvalidArgument, "potential has non-finite values");
    // Extremes and the Lipschitz bound are measured on a 4x refined grid.
    const int nf = std::min(field_.grid().points_per_axis() * 4, dim() == 1 ? 4096 : 512);
    const TorusGrid fine(dim(), nf);
    const auto vf = ScalarField::sample(fine, [&](const Vec& x) { return (*this)(x); });
    max_ = std::max(vf.max(), field_.max());
    min_ = std::min(vf.min(), field_.min());
    lipschitz_ = gradient(vf).sup_norm() * 1.01;
  }

  static double eval_series(const std::vector<TrigTerm>& terms, int dim, const Vec& x) {
    double s = 0.0;
    for (const auto& t : terms) {
      double ph = two_pi * t.k[0] * x[0];
      if (dim == 2) ph += two_pi * t.k[1] * x[1];
      s += t.a * std::cos(ph) + t.b * std::sin(ph);
    }
    return s;
  }

  ScalarField field_;
  std::vector<TrigTerm> terms_;
  std::string name_;
  double max_ = 0.0, min_ = 0.0, lipschitz_ = 0.0;
};

/// Parses a potential description: "zero", "const:<c>", "cos", "cos:<amp>",
/// "harmonics:<seed>", or a field file path (optionally "file:<path>").
inline Potential parse_potential(const std::string& text, int dim = 1) {
  auto arg = [&](const std::string& prefix) { return text.substr(prefix.size()); };
  if (text == "zero") return Potential::zero(dim);
  if (text.rfind("const:", 0) == 0) return Potential::constant(dim, std::stod(arg("const:")));
  if (text == "cos") return Potential::cosine(dim);
  if (text.rfind("cos:", 0) == 0) return Potential::cosine(dim, std::stod(arg("cos:")));
  if (text == "cos2d") return Potential::cosine(2);
  if (text.rfind("harmonics:", 0) == 0) {
    require(dim == 1, ErrorCode::InvalidArgument, "harmonics potential is one-dimensional");
    return Potential::random_harmonics(std::stoull(arg("harmonics:")));
  }
  const std::string path = text.rfind("file:", 0) == 0 ? arg("file:") : text;
  return Potential::from_field(read_field(path), "file:" + path);
}

}  // namespace hjhom
