#pragma once

// Effective Hamiltonian as a function object, and its Legendre transform
//   Lbar(q) = sup_p { q.p - Hbar(p) }.

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <utility>
#include <vector>

#include "hjhom/cell.hpp"
#include "hjhom/error.hpp"
#include "hjhom/potential.hpp"

namespace hjhom {

/// Hbar, DHbar and D2Hbar backed by solve_cell with a cache of solved pairs.
/// Safe to share between threads.
class HamiltonianModel {
 public:
  using Pair = std::pair<CellSolution, CellSolution>;

  explicit HamiltonianModel(Potential V, int resolution = 128, double hess_step = 1e-3)
      : V_(std::move(V)), n_(resolution), h_(hess_step) {}

  const Potential& potential() const { return V_; }
  int dim() const { return V_.dim(); }
  int resolution() const { return n_; }
  double hess_step() const { return h_; }

  /// The cell solutions at p and -p.
  std::shared_ptr<const Pair> pair(const Vec& p) const {
    const auto key = make_key(p);
    {
      std::lock_guard lock(mutex_);
      if (auto it = cache_.find(key); it != cache_.end()) return it->second;
    }
    auto [sp, sm] = solve_cell_pair(V_, p, n_);
    auto fwd = std::make_shared<const Pair>(sp, sm);
    auto bwd = std::make_shared<const Pair>(std::move(sm), std::move(sp));
    std::lock_guard lock(mutex_);
    // Insert-if-absent: a concurrent solve of the same key keeps the first.
    auto it = cache_.emplace(key, fwd).first;
    cache_.emplace(make_key(-p), bwd);
    return it->second;
  }

  double hbar(const Vec& p) const {
    if (V_.is_constant()) return 0.5 * p.squaredNorm() + V_.constant_value();
    return pair(p)->first.hbar;
  }

  Vec grad(const Vec& p) const {
    if (V_.is_constant()) return p;
    auto pr = pair(p);
    return grad_hbar(pr->first, pr->second);
  }

  Mat hess(const Vec& p) const {
    if (V_.is_constant()) return Mat::Identity(p.size(), p.size());
    return hessian_from_gradient([this](const Vec& q) { return grad(q); }, p, h_);
  }

  std::size_t cache_size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
  }

 private:
  static std::vector<long long> make_key(const Vec& p) {
    std::vector<long long> k(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) k[i] = std::llround(p[i] / 1e-12);
    return k;
  }

  Potential V_;
  int n_;
  double h_;
  mutable std::mutex mutex_;
  mutable std::map<std::vector<long long>, std::shared_ptr<const Pair>> cache_;
};

struct LagrangianValue {
  Vec q;
  double lbar = 0.0;
  Vec p_of_q;
  double dual_gap = 0.0;
};

/// Largest |q| accepted by legendre for this potential.
inline double legendre_range(const HamiltonianModel& model) {
  return 20.0 - 2.0 * (1.0 + model.potential().oscillation());
}

/// Solves DHbar(p) = q by damped Newton from `start` (default q). Throws
/// NewtonDiverged if Newton and a grid-search restart both fail.
inline LagrangianValue legendre(const HamiltonianModel& model, const Vec& q, const Vec* start = nullptr) {
  require(q.size() == model.dim(), ErrorCode::InvalidArgument, "q has the wrong dimension");
  require(q.norm() <= legendre_range(model), ErrorCode::OutOfRange,
          "|q| exceeds the Legendre operating range " + std::to_string(legendre_range(model)));
  constexpr double tol = 1e-9;

  auto finish = [&](const Vec& p, double gap) {
    return LagrangianValue{q, q.dot(p) - model.hbar(p), p, gap};
  };

  auto newton = [&](Vec p) -> std::pair<bool, Vec> {
    Vec res = model.grad(p) - q;
    for (int it = 0; it < 50; ++it) {
      if (res.norm() < tol) return {true, p};
      Mat h;
      try {
        h = model.hess(p);
      } catch (const Error&) {
        return {false, p};
      }
      const Vec step = h.ldlt().solve(res);
      double lambda = 1.0;
      bool improved = false;
      for (int k = 0; k < 30; ++k, lambda *= 0.5) {
        const Vec trial = p - lambda * step;
        if (trial.norm() > 20.0) continue;
        const Vec r = model.grad(trial) - q;
        if (r.norm() < res.norm()) {
          p = trial;
          res = r;
          improved = true;
          break;
        }
      }
      if (!improved) return {res.norm() < tol, p};
    }
    return {res.norm() < tol, p};
  };

  if (model.potential().is_constant()) return finish(q, 0.0);

  Vec p0 = start ? *start : q;
  auto [ok, p] = newton(p0);
  if (!ok) {
    // Maximize q.p - Hbar(p) over a grid in |p - q| <= 2(1 + osc V), then
    // restart Newton from the best node.
    const double rad = 2.0 * (1.0 + model.potential().oscillation());
    const int m = model.dim() == 1 ? 80 : 20;
    Vec best = q;
    double best_val = -1e300;
    auto consider = [&](const Vec& pp) {
      if (pp.norm() > 20.0) return;
      const double val = q.dot(pp) - model.hbar(pp);
      if (val > best_val) {
        best_val = val;
        best = pp;
      }
    };
    if (model.dim() == 1) {
      for (int i = 0; i <= m; ++i) consider(q + Vec::Constant(1, -rad + 2.0 * rad * i / m));
    } else {
      for (int i = 0; i <= m; ++i)
        for (int j = 0; j <= m; ++j) {
          Vec d(2);
          d << -rad + 2.0 * rad * i / m, -rad + 2.0 * rad * j / m;
          if (d.norm() <= rad) consider(q + d);
        }
    }
    std::tie(ok, p) = newton(best);
    if (!ok) throw Error(ErrorCode::NewtonDiverged, "Legendre inversion DHbar(p) = q failed");
  }
  return finish(p, (model.grad(p) - q).norm());
}

/// DLbar(q) = p(q).
inline Vec dL(const LagrangianValue& value) { return value.p_of_q; }

/// D2Lbar(q) = (D2Hbar(p(q)))^{-1}.
inline Mat d2L(const HamiltonianModel& model, const Vec& q) {
  const auto v = legendre(model, q);
  return model.hess(v.p_of_q).inverse();
}

}  // namespace hjhom
