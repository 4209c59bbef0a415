#pragma once

// Cell problem for H(y,p) = |p|^2/2 + V(y):
//   -1/2 dv + 1/2 |p + Dv|^2 + V = Hbar(p),
// solved as the principal eigenproblem of the tilted operator
//   L_p r = 1/2 dr - p.Dr + (|p|^2/2 + V) r,   r = e^{-v}.

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <map>
#include <memory>
#include <mutex>
#include <utility>

#include "hjhom/error.hpp"
#include "hjhom/potential.hpp"
#include "hjhom/torus_field.hpp"

namespace hjhom {

struct CellResiduals {
  double cell_residual = 0.0;
  double stationarity_residual = 0.0;
};

struct CellSolution {
  Vec p;
  double hbar = 0.0;
  ScalarField v;
  ScalarField r;
  ScalarField r_minus;  // r_{-p}, same normalization
  ScalarField pi;
  double e_p = 0.0;
  int resolution = 0;
  ScalarField potential;  // V sampled on the solve grid
  std::uint64_t potential_id = 0;
  double residual_tolerance = 1e-8;
};

namespace detail {

/// Dense spectral collocation matrices on the 1D torus grid: first derivative
/// (Nyquist dropped, antisymmetric) and second derivative (symmetric).
struct Collocation1D {
  Mat d1;
  Mat d2;
};

inline const Collocation1D& collocation_1d(int n) {
  static std::mutex mutex;
  static std::map<int, std::shared_ptr<const Collocation1D>> cache;
  std::lock_guard lock(mutex);
  if (auto it = cache.find(n); it != cache.end()) return *it->second;
  const TorusGrid g(1, n);
  auto c = std::make_shared<Collocation1D>();
  c->d1.resize(n, n);
  c->d2.resize(n, n);
  for (int j = 0; j < n; ++j) {
    ScalarField e(g);
    e[j] = 1.0;
    const auto d1 = partial(e, 0);
    const auto d2 = laplacian(e);
    for (int i = 0; i < n; ++i) {
      c->d1(i, j) = d1[i];
      c->d2(i, j) = d2[i];
    }
  }
  // Enforce exact (anti)symmetry; roundoff otherwise breaks L_{-p} = L_p^T.
  c->d1 = 0.5 * (c->d1 - c->d1.transpose()).eval();
  c->d2 = 0.5 * (c->d2 + c->d2.transpose()).eval();
  return *cache.emplace(n, std::move(c)).first->second;
}

/// Dense collocation matrix of
///   c_lap * Lap + sum_j diag(drift_j) D_j + diag(diag)
/// on a TorusGrid. drift_j and diag are per-node coefficients (an empty
/// drift list means no first-order term).
inline Mat assemble_operator(const TorusGrid& g, double c_lap, const std::vector<std::vector<double>>& drift,
                             const std::vector<double>& diag) {
  const int n = g.points_per_axis();
  const auto& c1 = collocation_1d(n);
  const auto size = static_cast<Eigen::Index>(g.size());
  Mat a = Mat::Zero(size, size);
  if (g.dim() == 1) {
    a = c_lap * c1.d2;
    if (!drift.empty())
      for (int i = 0; i < n; ++i) a.row(i) += drift[0][i] * c1.d1.row(i);
  } else {
    // Node (i, j) has index i*n + j; D_0 acts on i, D_1 on j.
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Eigen::Index row = static_cast<Eigen::Index>(i) * n + j;
        const double b0 = drift.empty() ? 0.0 : drift[0][row];
        const double b1 = drift.empty() ? 0.0 : drift[1][row];
        for (int k = 0; k < n; ++k) {
          a(row, static_cast<Eigen::Index>(k) * n + j) += c_lap * c1.d2(i, k) + b0 * c1.d1(i, k);
          a(row, static_cast<Eigen::Index>(i) * n + k) += c_lap * c1.d2(j, k) + b1 * c1.d1(j, k);
        }
      }
  }
  for (Eigen::Index i = 0; i < size; ++i) a(i, i) += diag[i];
  return a;
}

/// The collocation matrix of L_p.
inline Mat tilted_operator(const TorusGrid& g, const ScalarField& v, const Vec& p) {
  std::vector<std::vector<double>> drift;
  for (int j = 0; j < g.dim(); ++j) drift.emplace_back(g.size(), -p[j]);
  std::vector<double> diag(v.values());
  for (double& d : diag) d += 0.5 * p.squaredNorm();
  return assemble_operator(g, 0.5, drift, diag);
}

struct Eigenpair {
  double lambda = 0.0;
  Eigen::VectorXd r;
  Eigen::VectorXd r_minus;
};

inline Eigen::VectorXd normalize_max(Eigen::VectorXd y) {
  Eigen::Index imax = 0;
  y.cwiseAbs().maxCoeff(&imax);
  return y / y[imax];
}

/// Principal eigenvalue/eigenvector of a, plus the principal eigenvector of
/// a^T (same eigenvalue), by shift-invert power iteration. Falls back to a full
/// eigendecomposition if the iteration stalls.
inline Eigenpair principal_pair(const Mat& a, double sigma) {
  const Eigen::Index n = a.rows();
  Mat shifted = a - sigma * Mat::Identity(n, n);
  Eigen::PartialPivLU<Mat> lu(shifted);

  auto iterate = [&](bool transpose, Eigen::VectorXd& y) {
    y = Eigen::VectorXd::Ones(n);
    for (int it = 0; it < 300; ++it) {
      Eigen::VectorXd z = transpose ? Eigen::VectorXd(lu.transpose().solve(y)) : Eigen::VectorXd(lu.solve(y));
      z = normalize_max(z);
      const double change = (z - y).cwiseAbs().maxCoeff();
      y = std::move(z);
      if (change <= 1e-13) return true;
    }
    return false;
  };

  Eigenpair out;
  bool ok = iterate(false, out.r) && iterate(true, out.r_minus);
  if (ok) {
    out.lambda = out.r.dot(a * out.r) / out.r.squaredNorm();
    return out;
  }

  auto dense_principal = [&](const Mat& m) {
    Eigen::EigenSolver<Mat> es(m);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::NonConvergence, "dense eigensolver failed");
    Eigen::Index best = 0;
    es.eigenvalues().real().maxCoeff(&best);
    return std::make_pair(es.eigenvalues()[best].real(), Eigen::VectorXd(es.eigenvectors().col(best).real()));
  };
  auto [lam, r] = dense_principal(a);
  auto [lam_t, rt] = dense_principal(a.transpose());
  if (std::abs(lam - lam_t) > 1e-8 * (1.0 + std::abs(lam)))
    throw Error(ErrorCode::NonConvergence, "eigen-iteration stalled and fallback is inconsistent");
  out.lambda = lam;
  out.r = normalize_max(r);
  out.r_minus = normalize_max(rt);
  return out;
}

inline void require_positive(const Eigen::VectorXd& r) {
  if (r.minCoeff() <= 0.0)
    throw Error(ErrorCode::NoPositiveEigenvector,
                "principal eigenvector changes sign (min/max = " + std::to_string(r.minCoeff() / r.maxCoeff()) +
                    "); increase the resolution");
}

inline ScalarField to_field(const TorusGrid& g, const Eigen::VectorXd& x) {
  return ScalarField(g, std::vector<double>(x.data(), x.data() + x.size()));
}

}  // namespace detail

/// Solves the cell problem at p and at -p on the same grid. Returns (sol_p,
/// sol_{-p}); the -p solve reuses the factorization since L_{-p} = L_p^T.
inline std::pair<CellSolution, CellSolution> solve_cell_pair(const Potential& V, const Vec& p, int n) {
  require(p.size() == V.dim(), ErrorCode::InvalidArgument, "p has the wrong dimension");
  require(n >= 32 && is_power_of_two(n), ErrorCode::InvalidArgument, "cell resolution must be a power of two >= 32");
  require(p.norm() <= 20.0, ErrorCode::OutOfRange, "|p| exceeds the operating range 20");
  const TorusGrid g(V.dim(), n);
  const ScalarField vf = V.on(g);
  detail::Eigenpair ep;
  if (V.is_constant()) {
    // Constants are eigenfunctions; skip the iteration and its roundoff.
    ep.lambda = 0.5 * p.squaredNorm() + V.constant_value();
    ep.r = ep.r_minus = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(g.size()));
  } else {
    const Mat a = detail::tilted_operator(g, vf, p);
    const double sigma = 0.5 * p.squaredNorm() + vf.max() + 1.0;
    ep = detail::principal_pair(a, sigma);
  }
  ep.r /= ep.r[0];
  ep.r_minus /= ep.r_minus[0];
  detail::require_positive(ep.r);
  detail::require_positive(ep.r_minus);

  auto build = [&](const Vec& pp, const Eigen::VectorXd& r, const Eigen::VectorXd& rm) {
    CellSolution s{.p = pp,
                   .hbar = ep.lambda,
                   .v = detail::to_field(g, (-r.array().log()).matrix()),
                   .r = detail::to_field(g, r),
                   .r_minus = detail::to_field(g, rm),
                   .pi = ScalarField(g),
                   .e_p = 0.5 * pp.squaredNorm() - ep.lambda,
                   .resolution = n,
                   .potential = vf,
                   .potential_id = fingerprint(vf)};
    s.v[0] = 0.0;
    const ScalarField prod = s.r * s.r_minus;
    s.pi = (1.0 / mean(prod)) * prod;
    return s;
  };
  return {build(p, ep.r, ep.r_minus), build(-p, ep.r_minus, ep.r)};
}

inline CellSolution solve_cell(const Potential& V, const Vec& p, int n) { return solve_cell_pair(V, p, n).first; }

inline CellResiduals residuals(const CellSolution& s) {
  const auto dv = gradient(s.v);
  const int dim = s.v.grid().dim();
  ScalarField cell = (-0.5) * laplacian(s.v) + s.potential;
  std::vector<ScalarField> flux;
  for (int j = 0; j < dim; ++j) {
    ScalarField pj = dv[j].map([&](double d) { return s.p[j] + d; });
    cell = cell + 0.5 * (pj * pj);
    flux.push_back(pj * s.pi);
  }
  cell = cell.map([&](double x) { return x - s.hbar; });
  const ScalarField stat = (-0.5) * laplacian(s.pi) - divergence(VectorField(std::move(flux)));
  return {cell.sup_norm(), stat.sup_norm()};
}

/// DHbar(p) = mean((p + Dv_p) pi_p).
inline Vec grad_hbar(const CellSolution& sp, const CellSolution& sm) {
  require(sp.resolution == sm.resolution && sp.potential_id == sm.potential_id &&
              (sp.p + sm.p).cwiseAbs().maxCoeff() <= 1e-12,
          ErrorCode::MismatchedSolutions, "grad_hbar needs solutions at p and -p for the same V and N");
  const auto dv = gradient(sp.v);
  Vec g(sp.p.size());
  for (int j = 0; j < g.size(); ++j)
    g[j] = mean(dv[j].map([&](double d) { return sp.p[j] + d; }) * sp.pi);
  return g;
}

/// Central differences of grad_hbar with step h, symmetrized.
template <class Grad>
Mat hessian_from_gradient(Grad&& grad, const Vec& p, double h) {
  require(h >= 1e-4 && h <= 1e-2, ErrorCode::InvalidArgument, "hessian step must lie in [1e-4, 1e-2]");
  const auto n = p.size();
  Mat m(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Vec e = Vec::Zero(n);
    e[j] = h;
    m.col(j) = (grad(Vec(p + e)) - grad(Vec(p - e))) / (2.0 * h);
  }
  Mat s = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  if (es.eigenvalues().minCoeff() <= 0.0)
    throw Error(ErrorCode::NotPositiveDefinite, "finite-difference Hessian of Hbar is not positive definite");
  return s;
}

inline Mat hess_hbar(const Potential& V, const Vec& p, double h = 1e-3, int n = 128) {
  return hessian_from_gradient(
      [&](const Vec& q) {
        auto [a, b] = solve_cell_pair(V, q, n);
        return grad_hbar(a, b);
      },
      p, h);
}

}  // namespace hjhom
