#pragma once

// Periodic grid functions on the unit torus in one or two dimensions, with
// Fourier-multiplier calculus and trigonometric interpolation.

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "hjhom/error.hpp"
#include "hjhom/fft.hpp"

namespace hjhom {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using cplx = std::complex<double>;

inline constexpr double two_pi = 2.0 * std::numbers::pi;

inline bool is_power_of_two(long n) { return n > 0 && (n & (n - 1)) == 0; }

inline long next_power_of_two(double x) {
  long n = 1;
  while (static_cast<double>(n) < x) n <<= 1;
  return n;
}

/// Uniform grid on [0,1)^dim; node k sits at coordinate k/N. Storage is
/// row-major with the last axis fastest.
class TorusGrid {
 public:
  TorusGrid(int dim, int n) : dim_(dim), n_(n) {
    require(dim == 1 || dim == 2, ErrorCode::InvalidArgument, "torus dimension must be 1 or 2");
    require(n >= 8 && is_power_of_two(n), ErrorCode::InvalidArgument,
            "points per axis must be a power of two >= 8, got " + std::to_string(n));
  }

  int dim() const { return dim_; }
  int points_per_axis() const { return n_; }
  double spacing() const { return 1.0 / n_; }
  std::size_t size() const { return dim_ == 1 ? n_ : static_cast<std::size_t>(n_) * n_; }
  std::vector<int> dims() const { return std::vector<int>(dim_, n_); }

  /// Coordinates of node `idx`.
  Vec node(std::size_t idx) const {
    Vec x(dim_);
    if (dim_ == 1) {
      x[0] = static_cast<double>(idx) / n_;
    } else {
      x[0] = static_cast<double>(idx / n_) / n_;
      x[1] = static_cast<double>(idx % n_) / n_;
    }
    return x;
  }

  bool operator==(const TorusGrid&) const = default;

 private:
  int dim_;
  int n_;
};

class ScalarField {
 public:
  ScalarField(TorusGrid grid, std::vector<double> values) : grid_(grid), values_(std::move(values)) {
    require(values_.size() == grid_.size(), ErrorCode::InvalidArgument, "field size does not match grid");
  }
  explicit ScalarField(TorusGrid grid, double c = 0.0) : grid_(grid), values_(grid.size(), c) {}

  template <class F>
  static ScalarField sample(TorusGrid grid, F&& f) {
    std::vector<double> v(grid.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = f(grid.node(i));
    return ScalarField(grid, std::move(v));
  }

  const TorusGrid& grid() const { return grid_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  std::size_t size() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  double& operator[](std::size_t i) { return values_[i]; }

  double max() const { return *std::max_element(values_.begin(), values_.end()); }
  double min() const { return *std::min_element(values_.begin(), values_.end()); }
  double sup_norm() const {
    double s = 0.0;
    for (double v : values_) s = std::max(s, std::abs(v));
    return s;
  }
  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  template <class F>
  ScalarField map(F&& f) const {
    ScalarField out(grid_);
    for (std::size_t i = 0; i < values_.size(); ++i) out.values_[i] = f(values_[i]);
    return out;
  }

  friend ScalarField operator+(const ScalarField& a, const ScalarField& b) { return zip(a, b, std::plus<>{}); }
  friend ScalarField operator-(const ScalarField& a, const ScalarField& b) { return zip(a, b, std::minus<>{}); }
  friend ScalarField operator*(const ScalarField& a, const ScalarField& b) { return zip(a, b, std::multiplies<>{}); }
  friend ScalarField operator*(double s, const ScalarField& a) {
    return a.map([s](double v) { return s * v; });
  }

 private:
  template <class Op>
  static ScalarField zip(const ScalarField& a, const ScalarField& b, Op op) {
    require(a.grid_ == b.grid_, ErrorCode::InvalidArgument, "fields live on different grids");
    ScalarField out(a.grid_);
    for (std::size_t i = 0; i < a.values_.size(); ++i) out.values_[i] = op(a.values_[i], b.values_[i]);
    return out;
  }

  TorusGrid grid_;
  std::vector<double> values_;
};

class VectorField {
 public:
  explicit VectorField(std::vector<ScalarField> components) : components_(std::move(components)) {
    require(!components_.empty(), ErrorCode::InvalidArgument, "vector field needs components");
    for (const auto& c : components_)
      require(c.grid() == components_.front().grid(), ErrorCode::InvalidArgument, "component grids differ");
    require(static_cast<int>(components_.size()) == grid().dim(), ErrorCode::InvalidArgument,
            "vector field needs one component per dimension");
  }

  const TorusGrid& grid() const { return components_.front().grid(); }
  int dim() const { return static_cast<int>(components_.size()); }
  const ScalarField& operator[](int j) const { return components_[j]; }
  ScalarField& operator[](int j) { return components_[j]; }

  /// Vector value at node `idx`.
  Vec at(std::size_t idx) const {
    Vec v(dim());
    for (int j = 0; j < dim(); ++j) v[j] = components_[j][idx];
    return v;
  }

  double sup_norm() const {
    double s = 0.0;
    for (std::size_t i = 0; i < grid().size(); ++i) s = std::max(s, at(i).norm());
    return s;
  }

 private:
  std::vector<ScalarField> components_;
};

namespace detail {

/// Applies a Fourier multiplier m(k) (k = integer wavenumbers) to a real field.
template <class M>
std::vector<double> apply_multiplier(const std::vector<int>& dims, const std::vector<double>& f, M&& m) {
  const auto half = fft::half_spectrum_size(dims);
  std::vector<cplx> coeffs(half);
  fft::r2c(dims, f, coeffs);
  const int last = dims.back() / 2 + 1;
  std::array<int, 2> k{0, 0};
  if (dims.size() == 1) {
    for (int j = 0; j < last; ++j) {
      k[0] = j;
      coeffs[j] *= m(k);
    }
  } else {
    for (int i = 0; i < dims[0]; ++i) {
      k[0] = fft::wavenumber(i, dims[0]);
      for (int j = 0; j < last; ++j) {
        k[1] = j;
        coeffs[static_cast<std::size_t>(i) * last + j] *= m(k);
      }
    }
  }
  std::vector<double> out(f.size());
  fft::c2r(dims, coeffs, out);
  return out;
}

}  // namespace detail

/// Partial derivative along `axis` of the trigonometric interpolant. The
/// Nyquist coefficient is dropped.
inline ScalarField partial(const ScalarField& f, int axis) {
  const int n = f.grid().points_per_axis();
  auto v = detail::apply_multiplier(f.grid().dims(), f.values(), [&](const std::array<int, 2>& k) {
    const int ka = k[axis];
    if (std::abs(ka) == n / 2) return cplx(0.0);
    return cplx(0.0, two_pi * ka);
  });
  return ScalarField(f.grid(), std::move(v));
}

inline VectorField gradient(const ScalarField& f) {
  std::vector<ScalarField> comps;
  for (int a = 0; a < f.grid().dim(); ++a) comps.push_back(partial(f, a));
  return VectorField(std::move(comps));
}

/// Second spectral derivative; the Nyquist mode is kept.
inline ScalarField laplacian(const ScalarField& f) {
  const int dim = f.grid().dim();
  auto v = detail::apply_multiplier(f.grid().dims(), f.values(), [&](const std::array<int, 2>& k) {
    double k2 = 0.0;
    for (int a = 0; a < dim; ++a) k2 += static_cast<double>(k[a]) * k[a];
    return cplx(-two_pi * two_pi * k2);
  });
  return ScalarField(f.grid(), std::move(v));
}

inline ScalarField divergence(const VectorField& b) {
  ScalarField out(b.grid());
  for (int a = 0; a < b.dim(); ++a) out = out + partial(b[a], a);
  return out;
}

inline double mean(const ScalarField& f) {
  // Kahan summation.
  double s = 0.0, c = 0.0;
  for (double v : f.values()) {
    const double y = v - c;
    const double t = s + y;
    c = (t - s) - y;
    s = t;
  }
  return s / static_cast<double>(f.size());
}

/// Pointwise Euclidean inner product of two vector fields.
inline ScalarField dot(const VectorField& a, const VectorField& b) {
  ScalarField out(a.grid());
  for (int j = 0; j < a.dim(); ++j) out = out + a[j] * b[j];
  return out;
}

/// Normalized full Fourier spectrum c_k = N^{-dim} sum_x f(x) e^{-2 pi i k.x},
/// in transform order (index i carries wavenumber fft::wavenumber(i, N)).
inline std::vector<cplx> fourier_coefficients(const ScalarField& f) {
  const auto dims = f.grid().dims();
  std::vector<cplx> in(f.values().begin(), f.values().end()), out(f.size());
  fft::forward(dims, in, out);
  const double s = 1.0 / static_cast<double>(f.size());
  for (auto& c : out) c *= s;
  return out;
}

/// Evaluates the trigonometric interpolant of real samples on a periodic box
/// [origin, origin + length)^dim with n points per axis. The Nyquist mode is
/// taken as a cosine so the interpolant is real. Node coordinates reproduce
/// the stored samples exactly.
class PeriodicInterpolant {
 public:
  PeriodicInterpolant(int dim, int n, std::vector<double> values, double length = 1.0, Vec origin = Vec())
      : dim_(dim), n_(n), length_(length), origin_(origin.size() ? origin : Vec::Zero(dim)),
        values_(std::move(values)) {
    const std::vector<int> dims(dim_, n_);
    std::vector<cplx> in(values_.begin(), values_.end());
    coeffs_.resize(values_.size());
    fft::forward(dims, in, coeffs_);
    const double s = 1.0 / static_cast<double>(values_.size());
    for (auto& c : coeffs_) c *= s;
  }

  double operator()(const Vec& x) const {
    std::array<double, 2> u{};
    std::array<int, 2> node{};
    bool on_node = true;
    for (int a = 0; a < dim_; ++a) {
      double t = (x[a] - origin_[a]) / length_;
      t -= std::floor(t);
      u[a] = t;
      const double kn = t * n_;
      const double r = std::round(kn);
      if (kn == r) {
        node[a] = static_cast<int>(r) % n_;
      } else {
        on_node = false;
      }
    }
    if (on_node) {
      return dim_ == 1 ? values_[node[0]] : values_[static_cast<std::size_t>(node[0]) * n_ + node[1]];
    }
    auto phases = [&](double t) {
      std::vector<cplx> e(n_);
      for (int i = 0; i < n_; ++i) {
        const int k = fft::wavenumber(i, n_);
        e[i] = (k == n_ / 2) ? cplx(std::cos(two_pi * k * t)) : std::polar(1.0, two_pi * k * t);
      }
      return e;
    };
    const auto ex = phases(u[0]);
    if (dim_ == 1) {
      cplx s = 0.0;
      for (int i = 0; i < n_; ++i) s += coeffs_[i] * ex[i];
      return s.real();
    }
    const auto ey = phases(u[1]);
    cplx s = 0.0;
    for (int i = 0; i < n_; ++i) {
      cplx row = 0.0;
      for (int j = 0; j < n_; ++j) row += coeffs_[static_cast<std::size_t>(i) * n_ + j] * ey[j];
      s += row * ex[i];
    }
    return s.real();
  }

 private:
  int dim_;
  int n_;
  double length_;
  Vec origin_;
  std::vector<double> values_;
  std::vector<cplx> coeffs_;
};

/// Value of the trigonometric interpolant of f at x in [0,1)^dim. For many
/// evaluations build a PeriodicInterpolant once instead.
inline double interpolate(const ScalarField& f, const Vec& x) {
  return PeriodicInterpolant(f.grid().dim(), f.grid().points_per_axis(), f.values())(x);
}

/// Spectral resampling onto a grid with `n` points per axis. Upsampling is
/// exact for the interpolant; downsampling truncates high modes.
inline ScalarField resample(const ScalarField& f, int n) {
  const TorusGrid target(f.grid().dim(), n);
  const int dim = f.grid().dim();
  const int n0 = f.grid().points_per_axis();
  if (n == n0) return f;
  const auto c = fourier_coefficients(f);
  std::vector<cplx> d(target.size(), cplx(0.0));

  // Each source wavenumber maps to one or two target bins with weights.
  auto targets = [&](int k) {
    std::vector<std::pair<int, double>> out;
    if (n > n0 && std::abs(k) == n0 / 2) {
      out.push_back({((n0 / 2) % n + n) % n, 0.5});
      out.push_back({((-n0 / 2) % n + n) % n, 0.5});
    } else if (std::abs(k) <= n / 2) {
      out.push_back({(k % n + n) % n, 1.0});
    }
    return out;
  };
  if (dim == 1) {
    for (int i = 0; i < n0; ++i)
      for (auto [ti, wi] : targets(fft::wavenumber(i, n0))) d[ti] += wi * c[i];
  } else {
    for (int i = 0; i < n0; ++i)
      for (int j = 0; j < n0; ++j)
        for (auto [ti, wi] : targets(fft::wavenumber(i, n0)))
          for (auto [tj, wj] : targets(fft::wavenumber(j, n0)))
            d[static_cast<std::size_t>(ti) * n + tj] += wi * wj * c[static_cast<std::size_t>(i) * n0 + j];
  }
  // Inverse transform: f(x) = sum_k d_k e^{2 pi i k x}. Use the forward
  // transform on the conjugate.
  for (auto& z : d) z = std::conj(z);
  std::vector<cplx> out(d.size());
  fft::forward(target.dims(), d, out);
  std::vector<double> v(out.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = out[i].real();
  return ScalarField(target, std::move(v));
}

// Field files: one JSON header line {"dim", "N", "components"}, then every
// value on its own line in %.17g, row-major over axes (last axis fastest),
// components one after another.

inline void write_fields(const std::string& path, const std::vector<ScalarField>& comps) {
  require(!comps.empty(), ErrorCode::InvalidArgument, "nothing to write");
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  const auto& g = comps.front().grid();
  nlohmann::json h = {{"dim", g.dim()}, {"N", g.points_per_axis()}, {"components", comps.size()}};
  os << h.dump() << '\n';
  char buf[40];
  for (const auto& c : comps)
    for (double v : c.values()) {
      std::snprintf(buf, sizeof buf, "%.17g\n", v);
      os << buf;
    }
  if (!os) throw Error(ErrorCode::IoFailure, "write failed for " + path);
}

inline void write_field(const std::string& path, const ScalarField& f) { write_fields(path, {f}); }

inline void write_field(const std::string& path, const VectorField& f) {
  std::vector<ScalarField> comps;
  for (int j = 0; j < f.dim(); ++j) comps.push_back(f[j]);
  write_fields(path, comps);
}

inline std::vector<ScalarField> read_fields(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::string line;
  std::getline(is, line);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::IoFailure, "bad field header in " + path + ": " + e.what());
  }
  const TorusGrid g(h.at("dim").get<int>(), h.at("N").get<int>());
  const int nc = h.value("components", 1);
  std::vector<ScalarField> out;
  for (int c = 0; c < nc; ++c) {
    std::vector<double> v(g.size());
    for (auto& x : v)
      if (!(is >> x)) throw Error(ErrorCode::IoFailure, "truncated field file " + path);
    out.emplace_back(g, std::move(v));
  }
  return out;
}

inline ScalarField read_field(const std::string& path) { return read_fields(path).front(); }

}  // namespace hjhom
