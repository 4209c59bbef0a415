#pragma once

// Homogenized solution by the Hopf-Lax formula
//   u(x,t) = min_y { g(y) + t Lbar((x - y)/t) }.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hjhom/error.hpp"
#include "hjhom/legendre.hpp"

namespace hjhom {

struct LipschitzData {
  std::function<double(const Vec&)> g;
  double lipschitz_bound = 0.0;
  bool semiconcave = false;
  std::optional<double> semiconcavity_constant;
  std::string name;

  double operator()(const Vec& x) const { return g(x); }
};

namespace data {

/// min{|x|, cap}.
inline LipschitzData capped_norm(double cap = 10.0) {
  return {[cap](const Vec& x) { return std::min(x.norm(), cap); }, 1.0, false, std::nullopt,
          "capped-norm"};
}

inline LipschitzData constant(double c) {
  return {[c](const Vec&) { return c; }, 0.0, true, 0.0, "const"};
}

/// a.x clamped to [-cap, cap].
inline LipschitzData affine_capped(const Vec& a, double cap = 10.0) {
  return {[a, cap](const Vec& x) { return std::clamp(a.dot(x), -cap, cap); }, a.norm(), false, std::nullopt,
          "affine-capped"};
}

/// sqrt(1 + |x|^2) - 1: smooth, convex, 1-Lipschitz, D2g <= I.
inline LipschitzData smooth() {
  return {[](const Vec& x) { return std::sqrt(1.0 + x.squaredNorm()) - 1.0; }, 1.0, true, 1.0, "smooth"};
}

/// Minus the Huber function: -|x|^2/2 for |x| <= 1, 1/2 - |x| beyond.
/// Concave, C^1, 1-Lipschitz.
inline LipschitzData concave_huber() {
  return {[](const Vec& x) {
            const double r = x.norm();
            return r <= 1.0 ? -0.5 * r * r : 0.5 - r;
          },
          1.0, true, 0.0, "concave-huber"};
}

/// |x|^2/2 for |x| <= R, continued linearly (R|x| - R^2/2). Convex with
/// D2g <= I.
inline LipschitzData quadratic_capped(double R = 10.0) {
  return {[R](const Vec& x) {
            const double r = x.norm();
            return r <= R ? 0.5 * r * r : R * r - 0.5 * R * R;
          },
          R, true, 1.0, "quadratic-capped"};
}

/// Piecewise linear interpolation of 1D samples "x g" (one pair per line),
/// extended as constants outside the sampled range.
inline LipschitzData from_samples(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  std::vector<std::pair<double, double>> pts;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double x, y;
    if (ss >> x >> y) pts.emplace_back(x, y);
  }
  require(pts.size() >= 2, ErrorCode::InvalidArgument, "need at least two samples in " + path);
  std::sort(pts.begin(), pts.end());
  double lip = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    require(pts[i].first > pts[i - 1].first, ErrorCode::InvalidArgument, "duplicate sample abscissa");
    lip = std::max(lip, std::abs(pts[i].second - pts[i - 1].second) / (pts[i].first - pts[i - 1].first));
  }
  auto f = [pts](const Vec& xv) {
    const double x = xv[0];
    if (x <= pts.front().first) return pts.front().second;
    if (x >= pts.back().first) return pts.back().second;
    auto it = std::upper_bound(pts.begin(), pts.end(), std::make_pair(x, -1e300));
    const auto& [x1, y1] = *it;
    const auto& [x0, y0] = *(it - 1);
    return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
  };
  return {f, lip, false, std::nullopt, "file:" + path};
}

/// Parses "capped-norm", "const:<c>", "affine:<a1>[,<a2>]", "smooth",
/// "concave-huber", "quadratic-capped[:<R>]", "file:<path>".
inline LipschitzData parse(const std::string& text, int dim = 1) {
  auto arg = [&](const std::string& prefix) { return text.substr(prefix.size()); };
  if (text == "capped-norm") return capped_norm();
  if (text.rfind("const:", 0) == 0) return constant(std::stod(arg("const:")));
  if (text.rfind("affine:", 0) == 0) {
    Vec a = Vec::Zero(dim);
    std::istringstream ss(arg("affine:"));
    std::string tok;
    for (int i = 0; i < dim && std::getline(ss, tok, ','); ++i) a[i] = std::stod(tok);
    return affine_capped(a);
  }
  if (text == "smooth") return smooth();
  if (text == "concave-huber") return concave_huber();
  if (text == "quadratic-capped") return quadratic_capped();
  if (text.rfind("quadratic-capped:", 0) == 0) return quadratic_capped(std::stod(arg("quadratic-capped:")));
  if (text.rfind("file:", 0) == 0) return from_samples(arg("file:"));
  throw Error(ErrorCode::InvalidArgument, "unknown initial data '" + text + "'");
}

}  // namespace data

struct HopfLaxSolution {
  Vec x;
  double t = 0.0;
  double value = 0.0;
  Vec minimizer;
  Vec p_at_minimizer;  // p((x - minimizer)/t), which equals Du(x,t) where u is differentiable
  double search_radius = 0.0;
  double coarse_value = 0.0;
  std::vector<std::pair<Vec, double>> h_profile;
};

struct HopfLaxOptions {
  double coarse_step_factor = 1.0 / 200.0;  // coarse step = factor * t
  int profile_half_width = 10;              // coarse nodes kept on each side of the minimizer
};

/// sup{|DHbar(p)| : |p| <= L}, sampled on the sphere |p| = L (plus p = 0).
inline double sup_grad_hbar(const HamiltonianModel& model, double L) {
  if (L == 0.0) return 0.0;
  double s = 0.0;
  if (model.dim() == 1) {
    for (double p : {-L, L}) s = std::max(s, model.grad(Vec::Constant(1, p)).norm());
  } else {
    for (int k = 0; k < 32; ++k) {
      const double a = two_pi * k / 32;
      Vec p(2);
      p << L * std::cos(a), L * std::sin(a);
      s = std::max(s, model.grad(p).norm());
    }
  }
  return s;
}

namespace detail {

/// h(y) = g(y) + t Lbar((x - y)/t) with a warm-started Legendre solve.
class HopfLaxObjective {
 public:
  HopfLaxObjective(const LipschitzData& g, const HamiltonianModel& model, const Vec& x, double t)
      : g_(g), model_(model), x_(x), t_(t), warm_(Vec::Zero(x.size())) {}

  double operator()(const Vec& y) {
    const Vec q = (x_ - y) / t_;
    const auto lv = legendre(model_, q, &warm_);
    warm_ = lv.p_of_q;
    return g_(y) + t_ * lv.lbar;
  }

  Vec p_of(const Vec& y) {
    const auto lv = legendre(model_, Vec((x_ - y) / t_), &warm_);
    return lv.p_of_q;
  }

  void warm_start(const Vec& p) { warm_ = p; }

 private:
  const LipschitzData& g_;
  const HamiltonianModel& model_;
  Vec x_;
  double t_;
  Vec warm_;
};

}  // namespace detail

inline HopfLaxSolution solve_hopflax(const LipschitzData& g, const HamiltonianModel& model, const Vec& x, double t,
                                     const HopfLaxOptions& opt = {}) {
  require(t > 0.0, ErrorCode::InvalidArgument, "Hopf-Lax needs t > 0");
  require(x.size() == model.dim(), ErrorCode::InvalidArgument, "x has the wrong dimension");
  const int dim = model.dim();
  const double R = t * sup_grad_hbar(model, g.lipschitz_bound) * 1.5 + t;
  const double step = opt.coarse_step_factor * t;
  const int m = static_cast<int>(std::ceil(R / step));
  detail::HopfLaxObjective h(g, model, x, t);

  HopfLaxSolution sol;
  sol.x = x;
  sol.t = t;
  sol.search_radius = R;
  Vec best = x;
  double best_val = 1e300;
  std::vector<std::pair<Vec, double>> coarse;

  if (dim == 1) {
    // Sweep outward from x so warm starts follow a continuous path.
    for (int dir : {1, -1}) {
      h.warm_start(Vec::Zero(1));
      for (int i = (dir == 1 ? 0 : 1); i <= m; ++i) {
        const Vec y = x + Vec::Constant(1, dir * std::min(i * step, R));
        const double v = h(y);
        coarse.emplace_back(y, v);
        if (v < best_val) {
          best_val = v;
          best = y;
        }
      }
    }
  } else {
    for (int i = -m; i <= m; ++i) {
      Vec prev_p = Vec::Zero(2);
      for (int j = -m; j <= m; ++j) {
        Vec d(2);
        d << i * step, j * step;
        if (d.norm() > R) continue;
        h.warm_start(prev_p);
        const Vec y = x + d;
        const double v = h(y);
        prev_p = h.p_of(y);
        if (v < best_val) {
          best_val = v;
          best = y;
        }
        if (std::abs(i) <= opt.profile_half_width && std::abs(j) <= opt.profile_half_width) coarse.emplace_back(y, v);
      }
    }
  }
  sol.coarse_value = best_val;

  // Local refinement.
  h.warm_start(legendre(model, Vec((x - best) / t)).p_of_q);
  if (dim == 1) {
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = std::max(best[0] - step, x[0] - R), b = std::min(best[0] + step, x[0] + R);
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double fc = h(Vec::Constant(1, c)), fd = h(Vec::Constant(1, d));
    while (b - a > 1e-10) {
      if (fc < fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - phi * (b - a);
        fc = h(Vec::Constant(1, c));
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + phi * (b - a);
        fd = h(Vec::Constant(1, d));
      }
    }
    const Vec ym = Vec::Constant(1, 0.5 * (a + b));
    const double fm = h(ym);
    if (fm < best_val) {
      best_val = fm;
      best = ym;
    }
  } else {
    double s = step;
    while (s > 1e-10) {
      bool moved = false;
      for (int axis = 0; axis < dim; ++axis)
        for (int sgn : {1, -1}) {
          Vec y = best;
          y[axis] += sgn * s;
          if ((y - x).norm() > R) continue;
          const double v = h(y);
          if (v < best_val) {
            best_val = v;
            best = y;
            moved = true;
          }
        }
      if (!moved) s *= 0.5;
    }
  }

  sol.value = best_val;
  sol.minimizer = best;
  sol.p_at_minimizer = legendre(model, Vec((x - best) / t)).p_of_q;
  if (dim == 1) {
    std::sort(coarse.begin(), coarse.end(), [](const auto& l, const auto& r) { return l.first[0] < r.first[0]; });
    for (const auto& [y, v] : coarse)
      if (std::abs(y[0] - best[0]) <= opt.profile_half_width * step) sol.h_profile.emplace_back(y, v);
  } else {
    sol.h_profile = std::move(coarse);
  }
  return sol;
}

/// |u(x,t) - g(x)| / t.
inline double small_time_check(const LipschitzData& g, const HamiltonianModel& model, const Vec& x, double t,
                               const HopfLaxOptions& opt = {}) {
  require(t > 0.0 && t <= 1.0, ErrorCode::InvalidArgument, "small_time_check needs t in (0, 1]");
  return std::abs(solve_hopflax(g, model, x, t, opt).value - g(x)) / t;
}

struct QuadGrowth {
  double delta = 0.0;
  double r = 0.0;
  std::vector<std::pair<double, double>> series;  // (r, delta(r)) per trial radius
  Vec minimizer;
};

/// Default trial radii r0 / 2^k, k = 0..7, with r0 = t/2.
inline std::vector<double> default_radius_grid(double t) {
  std::vector<double> r;
  for (int k = 0; k < 8; ++k) r.push_back(0.5 * t / std::pow(2.0, k));
  return r;
}

/// Quadratic-growth diagnostic at the Hopf-Lax minimizer:
/// delta(r) = min over sampled y in B(ybar, r) \ {ybar} of
/// (h(y) - h(ybar)) / |y - ybar|^2. Reports the largest r with delta(r) > 0.
inline QuadGrowth quad_growth_diag(const LipschitzData& g, const HamiltonianModel& model, const Vec& x, double t,
                                   std::vector<double> radius_grid = {}, const HopfLaxOptions& opt = {}) {
  require(t > 0.0, ErrorCode::InvalidArgument, "quad_growth_diag needs t > 0");
  if (radius_grid.empty()) radius_grid = default_radius_grid(t);
  const auto sol = solve_hopflax(g, model, x, t, opt);
  const Vec& yb = sol.minimizer;
  detail::HopfLaxObjective h(g, model, x, t);
  h.warm_start(sol.p_at_minimizer);
  const double h0 = sol.value;

  QuadGrowth out;
  out.minimizer = yb;
  bool found = false;
  for (double r : radius_grid) {
    double delta = 1e300;
    auto sample = [&](const Vec& d) {
      const double v = h(Vec(yb + d));
      delta = std::min(delta, (v - h0) / d.squaredNorm());
    };
    if (model.dim() == 1) {
      for (int j = 1; j <= 32; ++j)
        for (int sgn : {1, -1}) sample(Vec::Constant(1, sgn * r * j / 32.0));
    } else {
      for (int k = 1; k <= 8; ++k)
        for (int a = 0; a < 8; ++a) {
          Vec d(2);
          d << std::cos(two_pi * a / 8), std::sin(two_pi * a / 8);
          sample(d * (r * k / 8.0));
        }
    }
    out.series.emplace_back(r, delta);
    if (delta > 0.0 && (!found || r > out.r)) {
      out.r = r;
      out.delta = delta;
      found = true;
    }
  }
  if (!found)
    throw Error(ErrorCode::NoQuadraticGrowth, "h has no quadratic growth at the minimizer on any trial radius");
  return out;
}

}  // namespace hjhom
