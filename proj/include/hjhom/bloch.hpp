#pragma once

// Large-time asymptotics of A = 1/2 Lap + b.D with periodic b: invariant
// density m, effective drift bbar, correctors chi_j, effective diffusion Q,
// the Bloch fiber eigenvalue lambda(xi), the Gaussian main term and the
// sharp ballistic amplitude a_p.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <complex>
#include <optional>
#include <string>
#include <vector>

#include "hjhom/cell.hpp"
#include "hjhom/error.hpp"
#include "hjhom/torus_field.hpp"
#include "hjhom/viscous_kernel.hpp"

namespace hjhom {

struct PeriodicDrift {
  enum class Source { Explicit, Doob };

  VectorField b;
  Source source = Source::Explicit;
  std::optional<Vec> p;  // set for Doob drifts

  int dim() const { return b[0].grid().dim(); }

  static PeriodicDrift explicit_drift(VectorField b) { return {std::move(b), Source::Explicit, std::nullopt}; }

  /// b_p = -p - Dv_p from a cell solution.
  static PeriodicDrift doob(const CellSolution& cell) { return {doob_drift(cell), Source::Doob, cell.p}; }

  /// b(x) = amplitude sin(2 pi x_1) e_1 (1D: sin(2 pi x)), a gradient drift.
  static PeriodicDrift sine(int dim = 1, int n = 128, double amplitude = 1.0) {
    const TorusGrid g(dim, n);
    std::vector<ScalarField> comps{
        ScalarField::sample(g, [&](const Vec& x) { return amplitude * std::sin(two_pi * x[0]); })};
    if (dim == 2) comps.emplace_back(g, 0.0);
    return explicit_drift(VectorField(std::move(comps)));
  }

  static PeriodicDrift constant(const Vec& c, int n = 32) {
    const TorusGrid g(static_cast<int>(c.size()), n);
    std::vector<ScalarField> comps;
    for (Eigen::Index d = 0; d < c.size(); ++d) comps.emplace_back(g, c[d]);
    return explicit_drift(VectorField(std::move(comps)));
  }
};

struct EffectiveDiffusion {
  ScalarField m;
  Vec b_bar;
  std::vector<ScalarField> chi;
  Mat Q;
  double stationarity_residual = 0.0;
  std::vector<double> corrector_residuals;
};

namespace detail {

inline VectorField resample(const VectorField& b, int n) {
  std::vector<ScalarField> comps;
  for (int d = 0; d < b[0].grid().dim(); ++d) comps.push_back(hjhom::resample(b[d], n));
  return VectorField(std::move(comps));
}

/// Collocation matrix of A = 1/2 Lap + b.D.
inline Mat generator(const VectorField& b) {
  const auto& g = b[0].grid();
  std::vector<std::vector<double>> coeffs;
  for (int d = 0; d < g.dim(); ++d) coeffs.push_back(b[d].values());
  return assemble_operator(g, 0.5, coeffs, std::vector<double>(g.size(), 0.0));
}

inline ScalarField field_of(const TorusGrid& g, const Eigen::VectorXd& v) {
  return ScalarField(g, std::vector<double>(v.data(), v.data() + v.size()));
}

/// Solves [a c; r^T 0][x; mu] = [rhs; s] and reports the reciprocal
/// condition estimate.
inline std::pair<Eigen::VectorXd, double> bordered_solve(const Mat& a, const Eigen::VectorXd& c,
                                                         const Eigen::VectorXd& r, const Eigen::VectorXd& rhs,
                                                         double s) {
  const Eigen::Index n = a.rows();
  Mat big(n + 1, n + 1);
  big.topLeftCorner(n, n) = a;
  big.topRightCorner(n, 1) = c;
  big.bottomLeftCorner(1, n) = r.transpose();
  big(n, n) = 0.0;
  Eigen::VectorXd f(n + 1);
  f.head(n) = rhs;
  f[n] = s;
  Eigen::PartialPivLU<Mat> lu(big);
  return {lu.solve(f), lu.rcond()};
}

}  // namespace detail

/// m with -1/2 Lap m + div(b m) = 0 and mean 1: the nullspace of the
/// collocation adjoint A^T, pinned by a bordered mass row.
inline ScalarField invariant_density(const PeriodicDrift& drift, int n, double* residual = nullptr) {
  require(n >= 32 && is_power_of_two(n), ErrorCode::InvalidArgument, "invariant_density needs N >= 32");
  const VectorField b = detail::resample(drift.b, n);
  const auto& g = b[0].grid();
  const Mat at = detail::generator(b).transpose();
  const auto size = static_cast<Eigen::Index>(g.size());
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(size);
  auto [sol, rc] = detail::bordered_solve(at, ones, ones, Eigen::VectorXd::Zero(size), static_cast<double>(size));
  if (!(rc > 1e-14))
    throw Error(ErrorCode::NullspaceDegenerate, "adjoint generator nullspace is not one-dimensional");
  ScalarField m = detail::field_of(g, sol.head(size));
  require(m.min() > 0.0, ErrorCode::NullspaceDegenerate, "invariant density is not positive; refine N");
  if (residual) {
    std::vector<ScalarField> bm;
    for (int d = 0; d < g.dim(); ++d) bm.push_back(b[d] * m);
    *residual = (-0.5 * laplacian(m) + divergence(VectorField(std::move(bm)))).sup_norm();
  }
  return m;
}

/// Correctors A chi_j = -(b_j - bbar_j) with mean(chi_j m) = 0.
inline std::vector<ScalarField> correctors(const PeriodicDrift& drift, const ScalarField& m, const Vec& b_bar,
                                           std::vector<double>* residuals = nullptr) {
  const int n = m.grid().points_per_axis();
  const VectorField b = detail::resample(drift.b, n);
  const auto& g = m.grid();
  const Mat a = detail::generator(b);
  const auto size = static_cast<Eigen::Index>(g.size());
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(size);
  const Eigen::Map<const Eigen::VectorXd> mv(m.values().data(), size);
  Mat big(size + 1, size + 1);
  big.topLeftCorner(size, size) = a;
  big.topRightCorner(size, 1) = ones;
  big.bottomLeftCorner(1, size) = mv.transpose() / static_cast<double>(size);
  big(size, size) = 0.0;
  Eigen::PartialPivLU<Mat> lu(big);
  if (!(lu.rcond() > 1e-14)) throw Error(ErrorCode::SolveFailure, "corrector system is singular");
  std::vector<ScalarField> chi;
  if (residuals) residuals->clear();
  for (int j = 0; j < g.dim(); ++j) {
    Eigen::VectorXd f(size + 1);
    for (Eigen::Index i = 0; i < size; ++i) f[i] = -(b[j][i] - b_bar[j]);
    f[size] = 0.0;
    const Eigen::VectorXd x = lu.solve(f);
    ScalarField c = detail::field_of(g, x.head(size));
    if (!c.all_finite()) throw Error(ErrorCode::SolveFailure, "corrector solve produced non-finite values");
    if (residuals) {
      const auto dc = gradient(c);
      ScalarField ac = 0.5 * laplacian(c) + dot(b, dc);
      double r = 0.0;
      for (std::size_t i = 0; i < ac.size(); ++i) r = std::max(r, std::abs(ac[i] + b[j][i] - b_bar[j]));
      residuals->push_back(r);
    }
    chi.push_back(std::move(c));
  }
  return chi;
}

/// m, bbar, chi and Q_jk = mean((e_j + Dchi_j).(e_k + Dchi_k) m).
inline EffectiveDiffusion effective_diffusion(const PeriodicDrift& drift, int n = 128) {
  double stat = 0.0;
  auto m = invariant_density(drift, n, &stat);
  EffectiveDiffusion ed{std::move(m), Vec(), {}, Mat(), stat, {}};
  const VectorField b = detail::resample(drift.b, n);
  const int dim = drift.dim();
  ed.b_bar.resize(dim);
  for (int j = 0; j < dim; ++j) ed.b_bar[j] = mean(b[j] * ed.m);
  ed.chi = correctors(drift, ed.m, ed.b_bar, &ed.corrector_residuals);
  std::vector<VectorField> grads;
  for (const auto& c : ed.chi) grads.push_back(gradient(c));
  ed.Q.resize(dim, dim);
  for (int j = 0; j < dim; ++j)
    for (int k = 0; k < dim; ++k) {
      ScalarField prod(ed.m.grid(), 0.0);
      for (int l = 0; l < dim; ++l) {
        const ScalarField a = grads[j][l] + ScalarField(ed.m.grid(), j == l ? 1.0 : 0.0);
        const ScalarField c = grads[k][l] + ScalarField(ed.m.grid(), k == l ? 1.0 : 0.0);
        prod = prod + a * c;
      }
      ed.Q(j, k) = mean(prod * ed.m);
    }
  ed.Q = (0.5 * (ed.Q + ed.Q.transpose())).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(ed.Q);
  require(es.eigenvalues().minCoeff() > 0.0, ErrorCode::InvariantViolation, "Q is not positive definite");
  return ed;
}

/// Principal eigenvalue of A_xi = 1/2 (D + i xi)^2 + b.(D + i xi).
inline std::complex<double> bloch_fiber(const PeriodicDrift& drift, const Vec& xi, int n = 64) {
  using CMat = Eigen::MatrixXcd;
  using CVec = Eigen::VectorXcd;
  require(xi.size() == drift.dim(), ErrorCode::InvalidArgument, "xi has the wrong dimension");
  require(xi.norm() <= std::numbers::pi / 2 + 1e-12, ErrorCode::InvalidArgument, "need |xi| <= pi/2");
  require(n >= 16 && is_power_of_two(n), ErrorCode::InvalidArgument, "bloch_fiber needs N >= 16");
  const VectorField b = detail::resample(drift.b, n);
  const auto& g = b[0].grid();
  const auto size = static_cast<Eigen::Index>(g.size());
  // A_xi = A + i xi.D + i (b.xi) - |xi|^2/2
  std::vector<std::vector<double>> coeffs;
  for (int d = 0; d < g.dim(); ++d) coeffs.emplace_back(g.size(), xi[d]);
  const Mat dxi = detail::assemble_operator(g, 0.0, coeffs, std::vector<double>(g.size(), 0.0));
  CMat a = detail::generator(b).cast<std::complex<double>>();
  a += std::complex<double>(0.0, 1.0) * dxi.cast<std::complex<double>>();
  for (Eigen::Index i = 0; i < size; ++i) {
    double bx = 0.0;
    for (int d = 0; d < g.dim(); ++d) bx += b[d][i] * xi[d];
    a(i, i) += std::complex<double>(-0.5 * xi.squaredNorm(), bx);
  }
  // Shift-invert power iteration around sigma = 1, to the right of the
  // spectrum, where the principal eigenvalue is the nearest.
  const std::complex<double> sigma = 1.0;
  CMat shifted = a - sigma * CMat::Identity(size, size);
  Eigen::PartialPivLU<CMat> lu(shifted);
  CVec v = CVec::Ones(size);
  std::complex<double> lambda = 0.0;
  bool ok = false;
  for (int it = 0; it < 500; ++it) {
    CVec w = lu.solve(v);
    w /= w.norm();
    const std::complex<double> next = w.dot(a * w);  // w^H A w
    if (it > 0 && std::abs(next - lambda) < 1e-14 * std::max(1.0, std::abs(next))) {
      lambda = next;
      ok = true;
      break;
    }
    lambda = next;
    v = w;
  }
  if (ok && (a * v - lambda * v).norm() < 1e-9) return lambda;
  Eigen::ComplexEigenSolver<CMat> es(a, false);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::NonConvergence, "fiber eigenvalue solve failed");
  const auto& ev = es.eigenvalues();
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < ev.size(); ++i)
    if (ev[i].real() > ev[best].real()) best = i;
  return ev[best];
}

struct BlochExpansion {
  Vec b_bar;  // Im lambda'(0)
  Mat Q;      // -Re lambda''(0)
};

/// bbar and Q from 5-point differences of lambda(xi) at 0 with step h.
inline BlochExpansion bloch_expansion(const PeriodicDrift& drift, int n = 64, double h = 0.05) {
  const int dim = drift.dim();
  auto lam = [&](const Vec& xi) { return bloch_fiber(drift, xi, n); };
  const auto l0 = lam(Vec::Zero(dim));
  auto first = [&](const Vec& e) {
    return (-lam(Vec(2 * h * e)) + 8.0 * lam(Vec(h * e)) - 8.0 * lam(Vec(-h * e)) + lam(Vec(-2 * h * e))) / (12.0 * h);
  };
  auto second = [&](const Vec& e) {
    return (-lam(Vec(2 * h * e)) + 16.0 * lam(Vec(h * e)) - 30.0 * l0 + 16.0 * lam(Vec(-h * e)) -
            lam(Vec(-2 * h * e))) /
           (12.0 * h * h);
  };
  BlochExpansion out{Vec(dim), Mat(dim, dim)};
  for (int j = 0; j < dim; ++j) {
    const Vec e = Vec::Unit(dim, j);
    out.b_bar[j] = first(e).imag();
    out.Q(j, j) = -second(e).real();
  }
  for (int j = 0; j < dim; ++j)
    for (int k = j + 1; k < dim; ++k) {
      const Vec e = Vec::Unit(dim, j) + Vec::Unit(dim, k);
      const double qd = -second(e).real();
      out.Q(j, k) = out.Q(k, j) = 0.5 * (qd - out.Q(j, j) - out.Q(k, k));
    }
  return out;
}

/// m(y) (2 pi t)^{-n/2} det(Q)^{-1/2} exp(-(y - x - bbar t).Q^{-1}(...)/(2t)).
inline double gaussian_main_term(const EffectiveDiffusion& ed, double t, const Vec& x, const Vec& y) {
  require(t > 0.0, ErrorCode::InvalidArgument, "need t > 0");
  const int dim = static_cast<int>(x.size());
  const Vec d = y - x - ed.b_bar * t;
  const Eigen::LLT<Mat> llt(ed.Q);
  const double quad = d.dot(llt.solve(d));
  return interpolate(ed.m, y) * std::pow(two_pi * t, -0.5 * dim) / std::sqrt(ed.Q.determinant()) *
         std::exp(-quad / (2.0 * t));
}

struct RemainderPoint {
  double t = 0.0;
  double scaled_sup = 0.0;  // sup_y |p - main| t^{(n+1)/2}
  double sup = 0.0;
};

/// sup over the window |y - bbar t| <= 6 sqrt(t maxeig Q) of |p(t,0,y) - main|,
/// scaled by t^{(n+1)/2}. p comes from the drift kernel solver.
inline std::vector<RemainderPoint> remainder_scan(const PeriodicDrift& drift, const EffectiveDiffusion& ed,
                                                  const std::vector<double>& t_list, double points_per_unit = 16.0,
                                                  const KernelOptions& opt = {}) {
  const int dim = drift.dim();
  Eigen::SelfAdjointEigenSolver<Mat> es(ed.Q);
  const double qmax = es.eigenvalues().maxCoeff();
  std::vector<RemainderPoint> out;
  for (double t : t_list) {
    require(t >= 1.0 && t <= 50.0, ErrorCode::InvalidArgument, "remainder_scan times must lie in [1, 50]");
    const double window = 6.0 * std::sqrt(t * qmax);
    const Vec center = ed.b_bar * t;
    const BoxGrid box = BoxGrid::around(center, window + 8.0 * std::sqrt(t) + 4.0, points_per_unit);
    const auto k = drift_kernel(drift.b, t, Vec::Zero(dim), box, opt);
    const auto prof = k.profile();
    double sup = 0.0;
    for (std::size_t i = 0; i < prof.size(); ++i) {
      const Vec y = box.node(i);
      if ((y - center).cwiseAbs().maxCoeff() > window) continue;
      sup = std::max(sup, std::abs(prof[i] - gaussian_main_term(ed, t, Vec::Zero(dim), y)));
    }
    out.push_back({t, sup * std::pow(t, 0.5 * (dim + 1)), sup});
  }
  return out;
}

/// a_p(y) = e^{v_p(y) - v_p(0)} pi_p(y) (2 pi)^{-n/2} det(Q_p)^{-1/2}.
inline double sharp_ballistic_amplitude(const CellSolution& cell, const EffectiveDiffusion& ed, const Vec& y) {
  const int dim = static_cast<int>(y.size());
  const double dv = interpolate(cell.v, y) - interpolate(cell.v, Vec::Zero(dim));
  return std::exp(dv) * interpolate(cell.pi, y) * std::pow(two_pi, -0.5 * dim) / std::sqrt(ed.Q.determinant());
}

}  // namespace hjhom
