#pragma once

// Viscous problem
//   u_t + 1/2 |Du|^2 + V(x/eps) = (eps/2) Lap u,   u(., 0) = g,
// through the Hopf-Cole transform u = -eps log w(x/eps, t/eps) with
//   w_s = 1/2 Lap w + V w,
// plus the kernels of 1/2 Lap + V and of drift-diffusions 1/2 Lap + b.D.
// Everything runs on a periodized box with Strang splitting: exact Fourier
// heat steps, exact pointwise multiplication by e^{ds V}.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <thread>
#include <vector>

#include "hjhom/cell.hpp"
#include "hjhom/error.hpp"
#include "hjhom/fft.hpp"
#include "hjhom/hopflax.hpp"
#include "hjhom/legendre.hpp"
#include "hjhom/potential.hpp"
#include "hjhom/torus_field.hpp"

namespace hjhom {

/// Box [origin, origin + length)^dim with `points` nodes per axis, treated as
/// periodic by the spectral steps. Node layout is row-major like TorusGrid.
struct BoxGrid {
  int dim = 1;
  long points = 0;
  double length = 0.0;
  Vec origin;

  double spacing() const { return length / static_cast<double>(points); }
  std::size_t size() const { return dim == 1 ? points : static_cast<std::size_t>(points) * points; }
  std::vector<int> dims() const { return std::vector<int>(dim, static_cast<int>(points)); }
  Vec node(std::size_t idx) const {
    Vec y(dim);
    if (dim == 1) {
      y[0] = origin[0] + spacing() * static_cast<double>(idx);
    } else {
      y[0] = origin[0] + spacing() * static_cast<double>(idx / points);
      y[1] = origin[1] + spacing() * static_cast<double>(idx % points);
    }
    return y;
  }
  Vec center() const { return origin + Vec::Constant(dim, 0.5 * length); }

  /// Box centered at `center` covering at least `half_width` on each side,
  /// with spacing exactly 1/points_per_unit (a power of two keeps nodes
  /// commensurate with the unit cell).
  static BoxGrid around(const Vec& center, double half_width, double points_per_unit = 16.0) {
    require(half_width > 0.0 && points_per_unit > 0.0, ErrorCode::InvalidArgument, "bad box parameters");
    BoxGrid b;
    b.dim = static_cast<int>(center.size());
    b.points = std::max(16L, next_power_of_two(points_per_unit * 2.0 * half_width));
    b.length = static_cast<double>(b.points) / points_per_unit;
    b.origin = center - Vec::Constant(b.dim, 0.5 * b.length);
    return b;
  }
};

namespace detail {

/// Neville extrapolation for rows computed at steps h, h/2, h/4, ... of a
/// quantity whose error expansion in h starts at h^power and continues in
/// even powers. rows[0] is the coarsest.
inline std::vector<double> extrapolate(std::vector<std::vector<double>> rows, int power = 2) {
  const std::size_t n = rows.size();
  for (std::size_t k = 1; k < n; ++k) {
    const double f = 1.0 / (std::pow(2.0, power + 2.0 * (static_cast<double>(k) - 1.0)) - 1.0);
    for (std::size_t j = n - 1; j >= k; --j) {
      for (std::size_t i = 0; i < rows[j].size(); ++i) rows[j][i] += f * (rows[j][i] - rows[j - 1][i]);
    }
  }
  return rows.back();
}

/// Half-spectrum wavevectors of a box; Nyquist entries flagged per axis.
template <class F>
void for_each_mode(const BoxGrid& box, F&& f) {
  const long m = box.points;
  const double dk = two_pi / box.length;
  const long half = m / 2 + 1;
  if (box.dim == 1) {
    for (long j = 0; j < half; ++j) {
      std::array<double, 2> k{dk * fft::wavenumber(static_cast<int>(j), static_cast<int>(m)), 0.0};
      f(static_cast<std::size_t>(j), k, std::array<bool, 2>{j == m / 2, false});
    }
    return;
  }
  for (long i = 0; i < m; ++i)
    for (long j = 0; j < half; ++j) {
      std::array<double, 2> k{dk * fft::wavenumber(static_cast<int>(i), static_cast<int>(m)),
                              dk * fft::wavenumber(static_cast<int>(j), static_cast<int>(m))};
      f(static_cast<std::size_t>(i * half + j), k, std::array<bool, 2>{i == m / 2, j == m / 2});
    }
}

/// Strang stepper for w_s = 1/2 Lap w + a.Dw + V w on a box. The constant
/// 1/2|a|^2 of a gauge tilt is not included; callers add it to the log.
class SplitStepper {
 public:
  SplitStepper(const BoxGrid& box, const std::vector<double>& v, const Vec& a, double ds)
      : box_(box), tr_(box.dims()), ds_(ds) {
    half_.resize(v.size());
    full_.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      half_[i] = std::exp(0.5 * ds * v[i]);
      full_[i] = std::exp(ds * v[i]);
    }
    heat_ = heat_multiplier(box, a, ds);
  }

  /// Half-spectrum multiplier of exp(ds (1/2 Lap + a.D)), including the
  /// 1/size normalization of the inverse transform. The drift phase is
  /// dropped on Nyquist modes so the result stays real.
  static std::vector<fft::cplx> heat_multiplier(const BoxGrid& box, const Vec& a, double ds) {
    std::vector<fft::cplx> m(fft::half_spectrum_size(box.dims()));
    const double scale = 1.0 / static_cast<double>(box.size());
    for_each_mode(box, [&](std::size_t idx, const std::array<double, 2>& k, const std::array<bool, 2>& nyq) {
      double k2 = 0.0, phase = 0.0;
      for (int d = 0; d < box.dim; ++d) {
        k2 += k[d] * k[d];
        if (a.size() && !nyq[d]) phase += a[d] * k[d];
      }
      m[idx] = scale * std::exp(-0.5 * ds * k2) * std::polar(1.0, ds * phase);
    });
    return m;
  }

  /// Advances `steps` steps. Renormalizes by the max every `renorm_every`
  /// steps and at the end, accumulating the log into log_gauge.
  void run(std::vector<double>& w, long steps, double& log_gauge, int renorm_every = 1) {
    auto& buf = tr_.real();
    auto& hat = tr_.coef();
    for (std::size_t i = 0; i < w.size(); ++i) buf[i] = w[i] * half_[i];
    for (long s = 0; s < steps; ++s) {
      tr_.forward();
      for (std::size_t i = 0; i < hat.size(); ++i) hat[i] *= heat_[i];
      tr_.inverse();
      const auto& mult = (s + 1 == steps) ? half_ : full_;
      for (std::size_t i = 0; i < buf.size(); ++i) buf[i] *= mult[i];
      if ((s + 1) % renorm_every == 0 || s + 1 == steps) renormalize(buf, log_gauge);
    }
    if (steps == 0) renormalize(buf, log_gauge);
    w.assign(buf.begin(), buf.end());
  }

  static void renormalize(std::vector<double>& w, double& log_gauge) {
    double mx = 0.0;
    for (double& x : w) {
      if (x < 0.0) x = 0.0;  // roundoff below the FFT noise floor
      mx = std::max(mx, x);
    }
    if (!(mx > 0.0) || !std::isfinite(mx))
      throw Error(ErrorCode::Underflow, "gauged state collapsed; check the truncation budget");
    const double inv = 1.0 / mx;
    for (double& x : w) x *= inv;
    log_gauge += std::log(mx);
  }

  double ds() const { return ds_; }

 private:
  BoxGrid box_;
  fft::RealTransform tr_;
  double ds_;
  std::vector<double> half_, full_;
  std::vector<fft::cplx> heat_;
};

/// V at every node of a box.
inline std::vector<double> potential_on(const Potential& V, const BoxGrid& box) {
  std::vector<double> v(box.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = box.dim == 1 ? V(box.node(i)[0]) : V(box.node(i));
  return v;
}

/// Step size rule: ds ||V|| <= 0.1 and ds <= 4 h^2, rounded so that an even
/// number of steps lands on s.
inline std::pair<double, long> split_steps(double s, double sup_v, double h, double ds_hint = 0.0) {
  double ds = std::min(sup_v > 0.0 ? 0.1 / sup_v : 1e300, 4.0 * h * h);
  if (ds_hint > 0.0) ds = std::min(ds, ds_hint);
  long n = static_cast<long>(std::ceil(s / ds - 1e-12));
  n = std::max(2L, n + (n % 2));
  return {s / n, n};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// The eps-problem

struct EpsProblem {
  Potential potential;
  LipschitzData data;
  double epsilon = 0.1;
  double half_width = 4.0;  // R, truncation radius in x around `center`
  long grid_points = 0;     // M per axis (power of two)
  double time = 1.0;
  Vec center;               // box center in x, default 0
  Vec tilt;                 // gauge tilt P, default 0; see solve_eps
  double ds = 0.0;          // splitting step cap in s = t/eps, 0 = automatic
  int richardson = -1;      // -1 automatic (on unless V is constant), 0 off, 1 on
  int renorm_every = 1;

  int dim() const { return potential.dim(); }
  Vec box_center() const { return center.size() ? center : Vec::Zero(dim()); }
  Vec tilt_or_zero() const { return tilt.size() ? tilt : Vec::Zero(dim()); }
  double points_per_period() const { return grid_points * epsilon / (2.0 * half_width); }

  /// Gaussian-tail budget e^{t max V} e^{-(R - |x - c|)^2/(2t)} at x.
  double tail_budget(const Vec& x) const {
    const double d = half_width - (x - box_center()).cwiseAbs().maxCoeff();
    if (d <= 0.0) return 1e300;
    return std::exp(time * potential.sup_norm() - d * d / (2.0 * time));
  }

  /// Throws ResolutionRefused if the problem cannot be trusted at `eval`.
  void validate(const std::vector<Vec>& eval) const {
    require(epsilon > 0.0 && epsilon <= 1.0, ErrorCode::InvalidArgument, "epsilon must lie in (0, 1]");
    require(time > 0.0, ErrorCode::InvalidArgument, "time must be positive");
    require(data.g != nullptr, ErrorCode::InvalidArgument, "initial data missing");
    require(is_power_of_two(grid_points), ErrorCode::ResolutionRefused, "grid_points must be a power of two");
    require(points_per_period() >= 16.0 - 1e-9, ErrorCode::ResolutionRefused,
            "fewer than 16 grid points per period of V(x/eps)");
    require(dim() == 1 || static_cast<double>(grid_points) * grid_points <= 1 << 24, ErrorCode::ResolutionRefused,
            "2D box too large");
    require(grid_points <= (1L << 23), ErrorCode::ResolutionRefused, "box too large");
    for (const auto& x : eval) {
      require(x.size() == dim(), ErrorCode::InvalidArgument, "evaluation point has the wrong dimension");
      require(tail_budget(x) < 1e-3 * epsilon, ErrorCode::ResolutionRefused,
              "Gaussian-tail budget violated at an evaluation point; enlarge R");
    }
  }

  /// Smallest box meeting the invariants for `eval`, with exactly
  /// points_per_period nodes per period of V(x/eps).
  static EpsProblem configure(Potential V, LipschitzData g, double eps, double t, const std::vector<Vec>& eval,
                              double points_per_period = 16.0, Vec tilt = Vec()) {
    require(eps > 0.0 && eps <= 1.0 && t > 0.0, ErrorCode::InvalidArgument, "need eps in (0,1] and t > 0");
    EpsProblem pr{std::move(V), std::move(g), eps, 1.0, 0, t, Vec(), std::move(tilt)};
    double reach = 0.0;
    for (const auto& x : eval) reach = std::max(reach, x.cwiseAbs().maxCoeff());
    const double tilt_norm = pr.tilt.size() ? pr.tilt.norm() : 0.0;
    const double need =
        reach + tilt_norm * t + std::sqrt(2.0 * t * (t * pr.potential.sup_norm() + std::log(1e3 / eps))) + 0.5;
    pr.grid_points = next_power_of_two(points_per_period * 2.0 * need / eps);
    pr.half_width = pr.grid_points * eps / (2.0 * points_per_period);
    return pr;
  }
};

/// Gauged Hopf-Cole state: the transformed solution is e^{log_gauge} w.
struct GaugedState {
  std::vector<double> w;
  double log_gauge = 0.0;
};

namespace detail {

struct EpsRun {
  BoxGrid box;  // in y = x/eps
  GaugedState state;
};

/// One splitting run of the w-equation in the tilted gauge
///   w~(y) = e^{P.y} w(y) e^{c0/eps},  c0 = min (g - P.x).
inline EpsRun eps_run(const EpsProblem& pr, double ds_cap, int level) {
  const double eps = pr.epsilon;
  const Vec P = pr.tilt_or_zero();
  BoxGrid box;
  box.dim = pr.dim();
  box.points = pr.grid_points;
  box.length = 2.0 * pr.half_width / eps;
  box.origin = (pr.box_center() - Vec::Constant(box.dim, pr.half_width)) / eps;

  std::vector<double> expo(box.size());
  double c0 = 1e300;
  for (std::size_t i = 0; i < expo.size(); ++i) {
    const Vec x = eps * box.node(i);
    expo[i] = pr.data(x) - P.dot(x);
    c0 = std::min(c0, expo[i]);
  }
  EpsRun run{box, {std::vector<double>(box.size()), 0.0}};
  for (std::size_t i = 0; i < expo.size(); ++i) run.state.w[i] = std::exp(-(expo[i] - c0) / eps);

  const double s = pr.time / eps;
  const Vec a = -P;
  const auto& V = pr.potential;
  if (V.is_constant()) {
    // Exact: a single heat step, V only shifts the gauge.
    SplitStepper st(box, std::vector<double>(box.size(), 0.0), a, s);
    st.run(run.state.w, 1, run.state.log_gauge);
    run.state.log_gauge += s * V.constant_value();
  } else {
    auto [ds, n] = split_steps(s, V.sup_norm(), box.spacing(), ds_cap);
    ds *= std::pow(2.0, level);
    n /= (1L << level);
    SplitStepper st(box, potential_on(V, box), a, ds);
    st.run(run.state.w, n, run.state.log_gauge, pr.renorm_every);
  }
  run.state.log_gauge += 0.5 * P.squaredNorm() * s;
  // Stash c0 in the gauge: u = P.x + c0 - eps (log w~ + gauge).
  run.state.log_gauge -= c0 / eps;
  return run;
}

inline std::vector<double> eps_values(const EpsProblem& pr, const EpsRun& run, const std::vector<Vec>& eval) {
  const auto& box = run.box;
  PeriodicInterpolant interp(box.dim, static_cast<int>(box.points), run.state.w, box.length, box.origin);
  const Vec P = pr.tilt_or_zero();
  const double wmax = *std::max_element(run.state.w.begin(), run.state.w.end());
  std::vector<double> out;
  for (const auto& x : eval) {
    const double wv = interp(Vec(x / pr.epsilon));
    if (!(wv > 0.0)) throw Error(ErrorCode::Underflow, "w is not positive at an evaluation point");
    // Below this, FFT roundoff at the peak swamps w here; tilt by Du(x,t).
    if (wv < 1e-8 * wmax)
      throw Error(ErrorCode::Underflow, "w lost its dynamic range at an evaluation point; set the tilt to Du there");
    out.push_back(P.dot(x) - pr.epsilon * (std::log(wv) + run.state.log_gauge));
  }
  return out;
}

}  // namespace detail

/// u^eps at `eval` by Hopf-Cole and Strang splitting. With a nonzero tilt P
/// the solver evolves e^{P.y} w instead of w, which keeps points where
/// Du = P inside the dynamic range of double precision. Richardson in the
/// splitting step (steps 2ds and ds) removes the O(ds^2) splitting bias.
inline std::vector<double> solve_eps(const EpsProblem& pr, const std::vector<Vec>& eval) {
  pr.validate(eval);
  require(pr.renorm_every >= 1, ErrorCode::InvalidArgument, "renorm_every must be at least 1");
  const bool rich = !pr.potential.is_constant() && pr.richardson != 0;
  const auto fine = detail::eps_values(pr, detail::eps_run(pr, pr.ds, 0), eval);
  if (!rich) return fine;
  const auto coarse = detail::eps_values(pr, detail::eps_run(pr, pr.ds, 1), eval);
  return detail::extrapolate({coarse, fine});
}

/// The gauged state at the final time, for inspection. Untilted, no
/// Richardson.
inline GaugedState solve_eps_state(const EpsProblem& pr) {
  pr.validate({});
  return detail::eps_run(pr, pr.ds, 0).state;
}

/// Direct explicit solver for the eps-problem in 1D: Godunov upwind flux for
/// 1/2|Du|^2 and centered differences for (eps/2) u_xx on [c - R, c + R]
/// with Dirichlet data g(x_b) - t (1/2 |g'(x_b)|^2 + mean V).
/// `refine` sets the grid to refine * 16 points per period of V(x/eps);
/// `dt` (0 = automatic) must respect the CFL bound or CFLViolation is thrown.
inline std::vector<double> solve_eps_fd(const EpsProblem& pr, const std::vector<Vec>& eval, int refine = 1,
                                        double dt = 0.0) {
  require(pr.dim() == 1, ErrorCode::InvalidArgument, "the finite-difference cross-check is one-dimensional");
  require(refine >= 1, ErrorCode::InvalidArgument, "refine must be at least 1");
  pr.validate(eval);
  const double eps = pr.epsilon, R = pr.half_width, c = pr.box_center()[0];
  const long m = pr.grid_points * refine;
  const double dx = 2.0 * R / static_cast<double>(m);
  std::vector<double> x(m + 1), u(m + 1), v(m + 1), next(m + 1);
  for (long i = 0; i <= m; ++i) {
    x[i] = c - R + dx * i;
    u[i] = pr.data(Vec::Constant(1, x[i]));
    v[i] = pr.potential(x[i] / eps);
  }
  const double vbar = mean(pr.potential.field());
  auto boundary = [&](double xb, double t) {
    const double h = 1e-6;
    const double dg = (pr.data(Vec::Constant(1, xb + h)) - pr.data(Vec::Constant(1, xb - h))) / (2 * h);
    return pr.data(Vec::Constant(1, xb)) - t * (0.5 * dg * dg + vbar);
  };
  const double dt_diff = dx * dx / (2.0 * eps);
  double t = 0.0;
  while (t < pr.time) {
    double du = 0.0;
    for (long i = 0; i < m; ++i) du = std::max(du, std::abs(u[i + 1] - u[i]) / dx);
    const double bound = std::min(dt_diff, du > 0.0 ? dx / (2.0 * du) : 1e300);
    double step = bound;
    if (dt > 0.0) {
      if (dt > bound * (1.0 + 1e-12)) throw Error(ErrorCode::CFLViolation, "dt exceeds the CFL bound");
      step = dt;
    }
    step = std::min(step, pr.time - t);
    for (long i = 1; i < m; ++i) {
      const double a = (u[i] - u[i - 1]) / dx, b = (u[i + 1] - u[i]) / dx;
      const double ap = std::max(a, 0.0), bm = std::min(b, 0.0);
      const double ham = 0.5 * std::max(ap * ap, bm * bm);
      const double lap = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (dx * dx);
      next[i] = u[i] - step * (ham + v[i]) + step * 0.5 * eps * lap;
    }
    t += step;
    next[0] = boundary(x[0], t);
    next[m] = boundary(x[m], t);
    std::swap(u, next);
  }
  std::vector<double> out;
  for (const auto& p : eval) {
    const double s = (p[0] - x[0]) / dx;
    const long i = std::clamp(static_cast<long>(std::floor(s)), 0L, m - 1);
    const double f = s - i;
    out.push_back((1.0 - f) * u[i] + f * u[i + 1]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kernels

struct KernelOptions {
  double bump_width = 0.0;   // delta, 0 = four box spacings
  int richardson_order = 1;  // number of halvings of delta
  bool step_richardson = true;
  double ds = 0.0;           // step cap, 0 = automatic
};

/// Kernel values on a box, stored in the gauge
///   K(y) = exp(log_scale + tilt.(y - x)) w(y).
struct KernelEstimate {
  double t = 0.0;
  Vec x;
  BoxGrid grid;
  std::vector<double> w;
  double log_scale = 0.0;
  Vec tilt;
  double bump_width = 0.0;
  int richardson_order = 0;

  double log_factor(const Vec& y) const { return log_scale + (tilt.size() ? tilt.dot(y - x) : 0.0); }

  /// Kernel values at the grid nodes.
  std::vector<double> profile() const {
    std::vector<double> out(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) out[i] = w[i] * std::exp(log_factor(grid.node(i)));
    return out;
  }

  /// Kernel at an arbitrary point of the box (trigonometric interpolation of
  /// the gauged values).
  double value(const Vec& y) const { return std::exp(log_value(y)); }
  double log_value(const Vec& y) const {
    PeriodicInterpolant ip(grid.dim, static_cast<int>(grid.points), w, grid.length, grid.origin);
    const double wv = ip(y);
    if (!(wv > 0.0)) throw Error(ErrorCode::Underflow, "kernel is not positive at the requested point");
    return std::log(wv) + log_factor(y);
  }

  double mass() const {
    const auto p = profile();
    double s = 0.0;
    for (double v : p) s += v;
    return s * std::pow(grid.spacing(), grid.dim);
  }

  /// Writes the profile as a field file (values on the box nodes). The
  /// header dim/N refer to the box; metadata goes to a JSON side file.
  void write(const std::string& path) const;
};

namespace detail {

/// Values on the box nodes of e^{-a.(y - x)} phi_delta(y - x), with phi the
/// normalized Gaussian, built from its Fourier series (periodized).
inline std::vector<double> gauged_bump(const BoxGrid& box, const Vec& x, const Vec& a, double delta) {
  Vec c = x;
  double amp = 1.0;
  if (a.size()) {
    c = x - a * delta * delta;
    amp = std::exp(0.5 * a.squaredNorm() * delta * delta);
  }
  fft::RealTransform tr(box.dims());
  const double vol = std::pow(box.length, box.dim);
  const Vec shift = c - box.origin;
  for_each_mode(box, [&](std::size_t idx, const std::array<double, 2>& k, const std::array<bool, 2>&) {
    double k2 = 0.0, ph = 0.0;
    for (int d = 0; d < box.dim; ++d) {
      k2 += k[d] * k[d];
      ph += k[d] * shift[d];
    }
    tr.coef()[idx] = amp / vol * std::exp(-0.5 * delta * delta * k2) * std::polar(1.0, -ph);
  });
  tr.inverse();
  return tr.real();
}

/// Combines runs computed with different gauges into plain values relative
/// to exp(ref).
inline std::vector<double> rescale(const GaugedState& s, double ref) {
  std::vector<double> out(s.w);
  const double f = std::exp(s.log_gauge - ref);
  for (double& v : out) v *= f;
  return out;
}

/// Sets negligible negative values left by extrapolation to zero; anything
/// larger is an invariant violation.
inline void clamp_profile(std::vector<double>& w) {
  double mx = 0.0;
  for (double v : w) mx = std::max(mx, v);
  for (double& v : w) {
    if (v < 0.0) {
      if (v < -1e-9 * mx) throw Error(ErrorCode::InvariantViolation, "kernel profile went negative");
      v = 0.0;
    }
  }
}

/// Runs `evolve(delta, level)` over the bump widths and step levels and
/// extrapolates both to zero.
template <class Evolve>
KernelEstimate extrapolated_kernel(const BoxGrid& box, double t, const Vec& x, const Vec& tilt,
                                   const KernelOptions& opt, bool step_rich, int delta_power, Evolve&& evolve) {
  const double delta = opt.bump_width > 0.0 ? opt.bump_width : 4.0 * box.spacing();
  require(delta <= 4.0 * box.spacing() * (1.0 + 1e-12), ErrorCode::InvalidArgument,
          "bump width must not exceed four grid spacings");
  require(opt.richardson_order >= 0 && opt.richardson_order <= 4, ErrorCode::InvalidArgument,
          "richardson_order must lie in [0, 4]");
  require(delta * delta < 0.5 * t, ErrorCode::InvalidArgument, "bump width too large for this time");
  double ref = 0.0;
  bool have_ref = false;
  std::vector<std::vector<double>> by_delta;
  for (int j = 0; j <= opt.richardson_order; ++j) {
    const double dj = delta / std::pow(2.0, j);
    std::vector<std::vector<double>> by_step;
    for (int level = step_rich ? 1 : 0; level >= 0; --level) {
      GaugedState s = evolve(dj, level);
      if (!have_ref) {
        ref = s.log_gauge;
        have_ref = true;
      }
      by_step.push_back(rescale(s, ref));
    }
    by_delta.push_back(extrapolate(std::move(by_step), 2));
  }
  KernelEstimate k;
  k.t = t;
  k.x = x;
  k.grid = box;
  k.w = extrapolate(std::move(by_delta), delta_power);
  clamp_profile(k.w);
  // Keep the stored values O(1).
  double mx = 0.0;
  for (double v : k.w) mx = std::max(mx, v);
  if (!(mx > 0.0)) throw Error(ErrorCode::Underflow, "kernel profile vanished");
  for (double& v : k.w) v /= mx;
  k.log_scale = ref + std::log(mx);
  k.tilt = tilt;
  k.bump_width = delta;
  k.richardson_order = opt.richardson_order;
  return k;
}

inline void check_kernel_box(const BoxGrid& box, double t, const Vec& x, const Vec& center_shift) {
  require(box.dim == x.size(), ErrorCode::InvalidArgument, "source point has the wrong dimension");
  require(t > 0.0, ErrorCode::InvalidArgument, "kernel time must be positive");
  require(box.spacing() <= 1.0 / 16.0 + 1e-12, ErrorCode::ResolutionRefused,
          "kernel box needs at least 16 points per unit period");
  // The gauged mass sits near x + center_shift; its Gaussian tail must be
  // negligible at the box edge, or periodization wraps it around.
  const Vec c = x + center_shift;
  for (int d = 0; d < box.dim; ++d) {
    const double room = std::min(c[d] - box.origin[d], box.origin[d] + box.length - c[d]);
    require(room * room >= 2.0 * t * 32.0, ErrorCode::ResolutionRefused,
            "kernel box too small for the Gaussian tail (needs 8 sqrt(t) of room)");
  }
}

}  // namespace detail

/// K(t, x, .) for 1/2 Lap + V on `box`, from a Gaussian bump of width delta
/// at x, extrapolated in delta and in the splitting step. A tilt p computes
/// the gauged kernel e^{-p.(y - x)} K, whose mass sits near y = x - p t.
inline KernelEstimate schrodinger_kernel(const Potential& V, double t, const Vec& x, const BoxGrid& box,
                                         const KernelOptions& opt = {}, const Vec& tilt = Vec()) {
  require(V.dim() == box.dim, ErrorCode::InvalidArgument, "potential and box dimensions differ");
  const Vec a = tilt.size() ? tilt : Vec::Zero(box.dim);
  detail::check_kernel_box(box, t, x, Vec(-a * t));
  const auto vals = detail::potential_on(V, box);
  const bool constant = V.is_constant();
  const double vx = box.dim == 1 ? V(x[0]) : V(x);
  auto evolve = [&](double delta, int level) {
    // The bump is the free kernel at time delta^2; one exact Strang step
    // from the Dirac gives e^{delta^2 (V(x) + V(y))/2} times it, and the
    // splitting covers the remaining t - delta^2.
    const double d2 = delta * delta;
    GaugedState s{detail::gauged_bump(box, x, a, delta), 0.0};
    if (constant) {
      detail::SplitStepper st(box, std::vector<double>(box.size(), 0.0), a, t - d2);
      st.run(s.w, 1, s.log_gauge);
      s.log_gauge += t * V.constant_value();
    } else {
      for (std::size_t i = 0; i < s.w.size(); ++i) s.w[i] *= std::exp(0.5 * d2 * (vx + vals[i]));
      auto [ds, n] = detail::split_steps(t - d2, V.sup_norm(), box.spacing(), opt.ds);
      detail::SplitStepper st(box, vals, a, ds * (1 << level));
      st.run(s.w, n >> level, s.log_gauge);
    }
    // The bump already carries e^{|a|^2 delta^2/2}.
    s.log_gauge += 0.5 * a.squaredNorm() * (t - d2);
    return s;
  };
  return detail::extrapolated_kernel(box, t, x, a, opt, opt.step_richardson && !constant, 6, evolve);
}

namespace detail {

/// Strang stepper for the Fokker-Planck equation rho_s = 1/2 Lap rho - div(b rho).
/// The drift half-steps use classical RK4 substeps with spectral divergence.
class DriftStepper {
 public:
  DriftStepper(const BoxGrid& box, std::vector<std::vector<double>> b, double ds)
      : box_(box), b_(std::move(b)), tr_(box.dims()), ds_(ds) {
    heat_ = SplitStepper::heat_multiplier(box, Vec(), ds);
    double bmax = 0.0;
    for (const auto& comp : b_)
      for (double v : comp) bmax = std::max(bmax, std::abs(v));
    rate_ = bmax * std::numbers::pi / box.spacing() * box.dim;
    // Derivative multipliers (Nyquist dropped), normalized.
    const double scale = 1.0 / static_cast<double>(box.size());
    deriv_.assign(box.dim, std::vector<fft::cplx>(fft::half_spectrum_size(box.dims())));
    for_each_mode(box, [&](std::size_t idx, const std::array<double, 2>& k, const std::array<bool, 2>& nyq) {
      for (int d = 0; d < box.dim; ++d) deriv_[d][idx] = nyq[d] ? 0.0 : fft::cplx(0.0, k[d] * scale);
    });
  }

  // rho_s = -div(b rho) over time dt, RK4 with h |b| k_max <= 1.
  void drift(std::vector<double>& rho, double dt) {
    const int substeps = std::max(1, static_cast<int>(std::ceil(dt * rate_)));
    const double h = dt / substeps;
    const std::size_t n = rho.size();
    k1_.resize(n);
    k2_.resize(n);
    k3_.resize(n);
    k4_.resize(n);
    tmp_.resize(n);
    for (int s = 0; s < substeps; ++s) {
      rhs(rho, k1_);
      for (std::size_t i = 0; i < n; ++i) tmp_[i] = rho[i] + 0.5 * h * k1_[i];
      rhs(tmp_, k2_);
      for (std::size_t i = 0; i < n; ++i) tmp_[i] = rho[i] + 0.5 * h * k2_[i];
      rhs(tmp_, k3_);
      for (std::size_t i = 0; i < n; ++i) tmp_[i] = rho[i] + h * k3_[i];
      rhs(tmp_, k4_);
      for (std::size_t i = 0; i < n; ++i) rho[i] += h / 6.0 * (k1_[i] + 2.0 * k2_[i] + 2.0 * k3_[i] + k4_[i]);
    }
  }

  void run(std::vector<double>& rho, long steps) {
    for (long s = 0; s < steps; ++s) {
      drift(rho, 0.5 * ds_);
      heat(rho);
      drift(rho, 0.5 * ds_);
    }
  }

 private:
  // -div(b rho)
  void rhs(const std::vector<double>& rho, std::vector<double>& out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (int d = 0; d < box_.dim; ++d) {
      auto& buf = tr_.real();
      for (std::size_t i = 0; i < rho.size(); ++i) buf[i] = b_[d][i] * rho[i];
      tr_.forward();
      auto& sp = tr_.coef();
      for (std::size_t i = 0; i < sp.size(); ++i) sp[i] *= deriv_[d][i];
      tr_.inverse();
      for (std::size_t i = 0; i < rho.size(); ++i) out[i] -= buf[i];
    }
  }

  void heat(std::vector<double>& rho) {
    auto& buf = tr_.real();
    std::copy(rho.begin(), rho.end(), buf.begin());
    tr_.forward();
    auto& sp = tr_.coef();
    for (std::size_t i = 0; i < sp.size(); ++i) sp[i] *= heat_[i];
    tr_.inverse();
    std::copy(buf.begin(), buf.end(), rho.begin());
  }

  BoxGrid box_;
  std::vector<std::vector<double>> b_;
  fft::RealTransform tr_;
  double ds_;
  double rate_ = 0.0;
  std::vector<fft::cplx> heat_;
  std::vector<std::vector<fft::cplx>> deriv_;
  std::vector<double> k1_, k2_, k3_, k4_, tmp_;
};

}  // namespace detail

/// Periodic drift b sampled at the nodes of a box (trigonometric
/// interpolation of the torus field).
inline std::vector<std::vector<double>> drift_on(const VectorField& b, const BoxGrid& box) {
  const auto& g = b[0].grid();
  require(g.dim() == box.dim, ErrorCode::InvalidArgument, "drift and box dimensions differ");
  std::vector<std::vector<double>> out;
  for (int d = 0; d < g.dim(); ++d) {
    PeriodicInterpolant ip(g.dim(), g.points_per_axis(), b[d].values());
    std::vector<double> comp(box.size());
    for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = ip(box.node(i));
    out.push_back(std::move(comp));
  }
  return out;
}

/// Transition density p(t, x, .) of 1/2 Lap + b.D (forward equation
/// rho_t = 1/2 Lap rho - div(b rho)), extrapolated in delta and the step.
inline KernelEstimate drift_kernel(const VectorField& b, double t, const Vec& x, const BoxGrid& box,
                                   const KernelOptions& opt = {}) {
  require(t > 0.0, ErrorCode::InvalidArgument, "kernel time must be positive");
  require(box.spacing() <= 1.0 / 16.0 + 1e-12, ErrorCode::ResolutionRefused,
          "kernel box needs at least 16 points per unit period");
  const auto bn = drift_on(b, box);
  bool zero = true;
  for (const auto& c : bn)
    for (double v : c) zero = zero && v == 0.0;
  const double bsup = b.sup_norm();
  Vec bx(box.dim);
  for (int d = 0; d < box.dim; ++d) bx[d] = interpolate(b[d], x);
  auto evolve = [&](double delta, int level) {
    // Strang step from the Dirac: transport x by b(x) delta^2/2, the bump
    // is the heat kernel at delta^2, then the other drift half-step.
    const double d2 = delta * delta;
    if (zero) {
      GaugedState s{detail::gauged_bump(box, x, Vec(), delta), 0.0};
      detail::SplitStepper st(box, std::vector<double>(box.size(), 0.0), Vec(), t - d2);
      double lg = 0.0;
      st.run(s.w, 1, lg);
      s.log_gauge = lg;
      return s;
    }
    GaugedState s{detail::gauged_bump(box, Vec(x + 0.5 * d2 * bx), Vec(), delta), 0.0};
    auto [ds, n] = detail::split_steps(t - d2, bsup, box.spacing(), opt.ds);
    detail::DriftStepper st(box, bn, ds * (1 << level));
    st.drift(s.w, 0.5 * d2);
    st.run(s.w, n >> level);
    return s;
  };
  return detail::extrapolated_kernel(box, t, x, Vec(), opt, opt.step_richardson && !zero, 4, evolve);
}

/// b_p = -p - Dv_p from a cell solution.
inline VectorField doob_drift(const CellSolution& cell) {
  auto dv = gradient(cell.v);
  std::vector<ScalarField> comps;
  for (int d = 0; d < cell.v.grid().dim(); ++d) comps.push_back(dv[d].map([&](double g) { return -cell.p[d] - g; }));
  return VectorField(std::move(comps));
}

/// Kernel of the Doob-transformed generator 1/2 Lap + b_p.D.
inline KernelEstimate doob_kernel(const CellSolution& cell, double t, const Vec& x, const BoxGrid& box,
                                  const KernelOptions& opt = {}) {
  return drift_kernel(doob_drift(cell), t, x, box, opt);
}

/// h_p(x) = e^{-p.x - v_p(x)}, as a log.
inline double log_doob_h(const CellSolution& cell, const Vec& x) {
  return -cell.p.dot(x) - interpolate(cell.v, x);
}

// ---------------------------------------------------------------------------
// Monte Carlo oracle

struct MonteCarloEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
  long n_paths = 0;
  std::uint64_t seed = 0;
  int slices = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace detail

/// K(t, x, y) = p_t(x - y) E[exp(int_0^t V(B_s) ds)] over Brownian bridges
/// from x to y, with `slices` time slices and the midpoint rule. Each path
/// has its own generator seeded from (seed, path index), and paths are
/// reduced in fixed chunks, so results do not depend on the thread count.
inline MonteCarloEstimate feynman_kac_mc(const Potential& V, double t, const Vec& x, const Vec& y, long n_paths,
                                         std::uint64_t seed, int slices = 256, int threads = 0) {
  require(n_paths >= 10000, ErrorCode::InvalidArgument, "feynman_kac_mc needs at least 1e4 paths");
  require(t > 0.0 && slices >= 1, ErrorCode::InvalidArgument, "bad time or slice count");
  require(x.size() == V.dim() && y.size() == V.dim(), ErrorCode::InvalidArgument, "point dimension mismatch");
  const int dim = V.dim();
  const double pt = std::pow(2.0 * std::numbers::pi * t, -0.5 * dim) * std::exp(-(x - y).squaredNorm() / (2.0 * t));
  constexpr long chunk = 4096;
  const long n_chunks = (n_paths + chunk - 1) / chunk;
  std::vector<double> sum(n_chunks, 0.0), sumsq(n_chunks, 0.0);
  const int fine = 2 * slices;
  const double h = t / fine;

  auto work = [&](long c0, long c1) {
    std::vector<double> walk(static_cast<std::size_t>(fine + 1) * dim);
    for (long c = c0; c < c1; ++c) {
      double s1 = 0.0, s2 = 0.0;
      for (long p = c * chunk; p < std::min(n_paths, (c + 1) * chunk); ++p) {
        std::mt19937_64 rng(detail::splitmix64(seed ^ detail::splitmix64(static_cast<std::uint64_t>(p))));
        std::normal_distribution<double> z(0.0, std::sqrt(h));
        for (int d = 0; d < dim; ++d) walk[d] = 0.0;
        for (int k = 1; k <= fine; ++k)
          for (int d = 0; d < dim; ++d) walk[k * dim + d] = walk[(k - 1) * dim + d] + z(rng);
        double integral = 0.0;
        Vec b(dim);
        for (int k = 1; k < fine; k += 2) {
          const double s = k * h / t;
          for (int d = 0; d < dim; ++d)
            b[d] = x[d] + (y[d] - x[d]) * s + walk[k * dim + d] - s * walk[fine * dim + d];
          integral += dim == 1 ? V(b[0]) : V(b);
        }
        const double e = std::exp(integral * (t / slices));
        s1 += e;
        s2 += e * e;
      }
      sum[c] = s1;
      sumsq[c] = s2;
    }
  };

  int nt = threads > 0 ? threads : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  nt = static_cast<int>(std::min<long>(nt, n_chunks));
  if (nt <= 1) {
    work(0, n_chunks);
  } else {
    std::vector<std::thread> pool;
    const long per = (n_chunks + nt - 1) / nt;
    for (int i = 0; i < nt; ++i) pool.emplace_back(work, i * per, std::min(n_chunks, (i + 1) * per));
    for (auto& th : pool) th.join();
  }
  double s1 = 0.0, s2 = 0.0;
  for (long c = 0; c < n_chunks; ++c) {
    s1 += sum[c];
    s2 += sumsq[c];
  }
  const double n = static_cast<double>(n_paths);
  const double mean = s1 / n;
  const double var = std::max(0.0, s2 / n - mean * mean) * n / (n - 1.0);
  return {pt * mean, pt * std::sqrt(var / n), n_paths, seed, slices};
}

// ---------------------------------------------------------------------------
// Ballistic band

struct BallisticPoint {
  double t = 0.0;
  double value = 0.0;  // t^{n/2} e^{t Lbar(q)} K(t, 0, -q t)
  double lbar = 0.0;
  Vec p;               // p(q), the gauge tilt used
};

/// The kernel K(t, 0, .) computed in the gauge tilted by p(q), on a box
/// centered on the ray point -q t.
inline KernelEstimate ballistic_kernel(const HamiltonianModel& model, const Vec& q, double t,
                                       const KernelOptions& opt = {}, double points_per_unit = 16.0) {
  const auto lv = legendre(model, q);
  const BoxGrid box = BoxGrid::around(Vec(-q * t), 8.0 * std::sqrt(t) + 4.0, points_per_unit);
  return schrodinger_kernel(model.potential(), t, Vec::Zero(q.size()), box, opt, lv.p_of_q);
}

/// Series t^{n/2} e^{t Lbar(q)} K(t, 0, -q t) over t_list.
inline std::vector<BallisticPoint> ballistic_band(const HamiltonianModel& model, const Vec& q,
                                                  const std::vector<double>& t_list, const KernelOptions& opt = {},
                                                  double points_per_unit = 16.0) {
  require(q.size() == model.dim(), ErrorCode::InvalidArgument, "q has the wrong dimension");
  require(q.norm() <= legendre_range(model), ErrorCode::OutOfRange, "q outside the Legendre operating range");
  const auto lv = legendre(model, q);
  std::vector<BallisticPoint> out;
  for (double t : t_list) {
    require(t >= 1.0 && t <= 50.0, ErrorCode::InvalidArgument, "ballistic times must lie in [1, 50]");
    const auto k = ballistic_kernel(model, q, t, opt, points_per_unit);
    const double lg = k.log_value(Vec(-q * t)) + t * lv.lbar + 0.5 * model.dim() * std::log(t);
    out.push_back({t, std::exp(lg), lv.lbar, lv.p_of_q});
  }
  return out;
}

inline void KernelEstimate::write(const std::string& path) const {
  const TorusGrid g(grid.dim, static_cast<int>(grid.points));
  write_field(path, ScalarField(g, profile()));
}

}  // namespace hjhom
