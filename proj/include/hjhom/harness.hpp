#pragma once

// Epsilon sweeps: u^eps from the viscous solvers against the Hopf-Lax value,
// fitted to e(eps) = eps (a + b log(1/eps)), plus report I/O.

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/tools/minima.hpp>
#include <boost/version.hpp>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hjhom/error.hpp"
#include "hjhom/hopflax.hpp"
#include "hjhom/viscous_kernel.hpp"

#define HJHOM_VERSION "0.3.0"

namespace hjhom {

using json = nlohmann::json;

inline constexpr const char* output_dir_env = "HJHOM_OUTPUT_DIR";

enum class EpsSolver { Spectral, FiniteDifference, Quadrature };

inline std::string to_string(EpsSolver s) {
  switch (s) {
    case EpsSolver::Spectral: return "spectral";
    case EpsSolver::FiniteDifference: return "fd";
    case EpsSolver::Quadrature: return "quadrature";
  }
  return "?";
}

inline EpsSolver parse_solver(const std::string& s) {
  if (s == "spectral") return EpsSolver::Spectral;
  if (s == "fd") return EpsSolver::FiniteDifference;
  if (s == "quadrature") return EpsSolver::Quadrature;
  throw Error(ErrorCode::InvalidArgument, "unknown solver '" + s + "'");
}

struct ExperimentConfig {
  std::string name = "rate";
  std::string potential = "zero";
  std::string data = "capped-norm";
  int dim = 1;
  std::vector<double> epsilons;
  std::vector<std::vector<double>> points{{0.0}};
  std::vector<double> times{1.0};
  std::vector<double> eps_times;  // extra times c * eps, one per c
  bool pointwise = false;         // quadratic-growth diagnostic per point
  EpsSolver solver = EpsSolver::Spectral;
  double points_per_period = 16.0;
  int cell_resolution = 128;
  int fd_refine = 1;
  std::uint64_t seed = 0;
  int threads = 0;  // 0 = hardware concurrency
  std::string output_dir = "out";

  std::vector<Vec> eval_points() const {
    std::vector<Vec> out;
    for (const auto& p : points) out.push_back(Eigen::Map<const Vec>(p.data(), static_cast<Eigen::Index>(p.size())));
    return out;
  }

  /// Absolute times followed by eps-relative ones.
  std::vector<double> times_at(double eps) const {
    auto out = times;
    for (double c : eps_times) out.push_back(c * eps);
    return out;
  }

  void validate() const {
    require(dim == 1 || dim == 2, ErrorCode::InvalidArgument, "dimension must be 1 or 2");
    for (std::size_t i = 0; i < epsilons.size(); ++i) {
      require(epsilons[i] > 0.0 && epsilons[i] <= 1.0, ErrorCode::InvalidArgument, "eps must lie in (0, 1]");
      require(i == 0 || epsilons[i] < epsilons[i - 1], ErrorCode::InvalidArgument,
              "eps list must be strictly decreasing");
    }
    require(!points.empty(), ErrorCode::InvalidArgument, "need at least one evaluation point");
    for (const auto& p : points)
      require(static_cast<int>(p.size()) == dim, ErrorCode::InvalidArgument, "evaluation point has the wrong dimension");
    require(!times.empty() || !eps_times.empty(), ErrorCode::InvalidArgument, "need at least one evaluation time");
    for (double t : times) require(t > 0.0, ErrorCode::InvalidArgument, "times must be positive");
    for (double c : eps_times) require(c > 0.0, ErrorCode::InvalidArgument, "eps_times must be positive");
    require(points_per_period >= 16.0, ErrorCode::ResolutionRefused, "points_per_period must be at least 16");
    require(cell_resolution >= 16 && is_power_of_two(cell_resolution), ErrorCode::ResolutionRefused,
            "cell_resolution must be a power of two >= 16");
    require(fd_refine >= 1, ErrorCode::InvalidArgument, "fd_refine must be at least 1");
    require(threads >= 0, ErrorCode::InvalidArgument, "threads must be nonnegative");
    require(solver != EpsSolver::FiniteDifference || dim == 1, ErrorCode::InvalidArgument,
            "the fd solver is one-dimensional");
    if (solver == EpsSolver::Quadrature)
      require(dim == 1 && parse_potential(potential, dim).is_constant() &&
                  parse_potential(potential, dim).constant_value() == 0.0,
              ErrorCode::InvalidArgument, "the quadrature oracle needs V = 0 and n = 1");
  }
};

inline void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"name", c.name},
           {"potential", c.potential},
           {"data", c.data},
           {"dimension", c.dim},
           {"epsilons", c.epsilons},
           {"points", c.points},
           {"times", c.times},
           {"eps_times", c.eps_times},
           {"pointwise", c.pointwise},
           {"solver", to_string(c.solver)},
           {"points_per_period", c.points_per_period},
           {"cell_resolution", c.cell_resolution},
           {"fd_refine", c.fd_refine},
           {"seed", c.seed},
           {"threads", c.threads},
           {"output_dir", c.output_dir}};
}

inline void from_json(const json& j, ExperimentConfig& c) {
  const ExperimentConfig d;
  c.name = j.value("name", d.name);
  c.potential = j.value("potential", d.potential);
  c.data = j.value("data", d.data);
  c.dim = j.value("dimension", d.dim);
  c.epsilons = j.value("epsilons", d.epsilons);
  // "epsilon_powers": [k0, k1] expands to 2^-k0 ... 2^-k1.
  if (j.contains("epsilon_powers")) {
    const auto k = j.at("epsilon_powers").get<std::vector<int>>();
    require(k.size() == 2 && k[0] <= k[1], ErrorCode::InvalidArgument, "epsilon_powers must be [k0, k1]");
    for (int i = k[0]; i <= k[1]; ++i) c.epsilons.push_back(std::ldexp(1.0, -i));
  }
  c.points.clear();
  if (j.contains("points")) {
    for (const auto& p : j.at("points")) {
      if (p.is_number())
        c.points.push_back({p.get<double>()});
      else
        c.points.push_back(p.get<std::vector<double>>());
    }
  } else {
    c.points.assign(1, std::vector<double>(c.dim, 0.0));
  }
  c.times = j.value("times", d.times);
  c.eps_times = j.value("eps_times", d.eps_times);
  c.pointwise = j.value("pointwise", d.pointwise);
  c.solver = parse_solver(j.value("solver", to_string(d.solver)));
  c.points_per_period = j.value("points_per_period", d.points_per_period);
  c.cell_resolution = j.value("cell_resolution", d.cell_resolution);
  c.fd_refine = j.value("fd_refine", d.fd_refine);
  c.seed = j.value("seed", d.seed);
  c.threads = j.value("threads", d.threads);
  c.output_dir = j.value("output_dir", d.output_dir);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::InvalidArgument, "cannot open config " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, path + ": " + e.what());
  }
  auto c = j.get<ExperimentConfig>();
  c.validate();
  return c;
}

/// Environment override first, then the configured directory.
inline std::string output_dir(const ExperimentConfig& c) {
  if (const char* env = std::getenv(output_dir_env); env && *env) return env;
  return c.output_dir;
}

/// FNV-1a of the canonical (sorted-key) JSON form.
inline std::uint64_t config_hash(const ExperimentConfig& c) {
  const std::string s = json(c).dump();
  return fnv1a(s.data(), s.size());
}

// ---------------------------------------------------------------------------
// Rate fit

struct RateFit {
  double a = 0.0;
  double b = 0.0;
  double residual = 0.0;  // rms of e/eps - (a + b log(1/eps))

  bool operator==(const RateFit&) const = default;
};

/// Least squares for e = eps (a + b log(1/eps)) with weights 1/eps^2, i.e.
/// ordinary least squares of e/eps on log(1/eps). Needs two distinct eps.
inline std::optional<RateFit> fit_rate(const std::vector<double>& eps, const std::vector<double>& err) {
  require(eps.size() == err.size(), ErrorCode::InvalidArgument, "eps and error lists differ in length");
  const std::size_t n = eps.size();
  if (n < 2) return std::nullopt;
  double lx = 0.0, ly = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    lx += std::log(1.0 / eps[i]);
    ly += err[i] / eps[i];
  }
  lx /= n;
  ly /= n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(1.0 / eps[i]) - lx;
    sxx += dx * dx;
    sxy += dx * (err[i] / eps[i] - ly);
  }
  if (sxx <= 0.0) return std::nullopt;
  RateFit f;
  f.b = sxy / sxx;
  f.a = ly - f.b * lx;
  double ss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = err[i] / eps[i] - (f.a + f.b * std::log(1.0 / eps[i]));
    ss += r * r;
  }
  f.residual = std::sqrt(ss / n);
  return f;
}

// ---------------------------------------------------------------------------
// Reports

struct PointSeries {
  std::vector<double> x;
  double t = 0.0;              // absolute time, or the multiplier when eps_relative
  bool eps_relative = false;
  double u = 0.0;              // Hopf-Lax value (absolute times only)
  std::optional<double> growth;  // quadratic-growth delta, pointwise mode
  std::vector<double> u_eps;
  std::vector<double> errors;

  bool operator==(const PointSeries&) const = default;
};

struct Manifest {
  std::string config_hash;
  std::string version = HJHOM_VERSION;
  std::string eigen;
  std::string fftw;
  std::string boost;
  std::uint64_t seed = 0;

  bool operator==(const Manifest&) const = default;
};

inline Manifest make_manifest(const ExperimentConfig& c) {
  Manifest m;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, config_hash(c));
  m.config_hash = buf;
  m.eigen = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
            std::to_string(EIGEN_MINOR_VERSION);
  m.fftw = fftw_version;
  m.boost = BOOST_LIB_VERSION;
  m.seed = c.seed;
  return m;
}

struct RateReport {
  ExperimentConfig config;
  Manifest manifest;
  std::vector<double> epsilons;
  std::vector<double> errors;  // sup over the evaluation set
  std::vector<double> model_values;
  std::vector<double> residuals;  // error - model value
  std::optional<RateFit> fit;
  std::optional<double> b_without_largest;  // refit with the largest eps dropped
  std::vector<PointSeries> series;
  bool partial = false;
  std::string failure;

  bool operator==(const RateReport& o) const {
    // NaN model values (no fit) compare equal
    auto same = [](const std::vector<double>& a, const std::vector<double>& b) {
      return std::equal(a.begin(), a.end(), b.begin(), b.end(),
                        [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); });
    };
    return json(config) == json(o.config) && manifest == o.manifest && epsilons == o.epsilons && errors == o.errors &&
           same(model_values, o.model_values) && same(residuals, o.residuals) && fit == o.fit &&
           b_without_largest == o.b_without_largest && series == o.series && partial == o.partial &&
           failure == o.failure;
  }

  /// max over eps / min over eps of e/eps for one series.
  static double spread(const PointSeries& s, const std::vector<double>& eps) {
    double lo = 1e300, hi = 0.0;
    for (std::size_t i = 0; i < s.errors.size(); ++i) {
      lo = std::min(lo, s.errors[i] / eps[i]);
      hi = std::max(hi, s.errors[i] / eps[i]);
    }
    return hi / lo;
  }
};

/// Fills model values, residuals and the fits from epsilons/errors.
inline void finish_fit(RateReport& r) {
  r.fit = fit_rate(r.epsilons, r.errors);
  r.model_values.clear();
  r.residuals.clear();
  for (std::size_t i = 0; i < r.epsilons.size(); ++i) {
    const double e = r.epsilons[i];
    const double m = r.fit ? e * (r.fit->a + r.fit->b * std::log(1.0 / e)) : std::numeric_limits<double>::quiet_NaN();
    r.model_values.push_back(m);
    r.residuals.push_back(r.errors[i] - m);
  }
  r.b_without_largest.reset();
  if (r.epsilons.size() >= 3) {
    const std::vector<double> e(r.epsilons.begin() + 1, r.epsilons.end()), v(r.errors.begin() + 1, r.errors.end());
    if (auto f = fit_rate(e, v)) r.b_without_largest = f->b;
  }
}

/// Thrown by rate_sweep when a solver fails; carries the eps levels that
/// completed before the failing one.
class SweepAborted : public Error {
 public:
  SweepAborted(const Error& cause, RateReport partial)
      : Error(cause.code(), std::string("sweep aborted: ") + cause.what()), report_(std::move(partial)) {}
  const RateReport& report() const { return report_; }

 private:
  RateReport report_;
};

// ---------------------------------------------------------------------------
// Quadrature oracle for V = 0, n = 1

/// u^eps(x,t) = -eps log int (2 pi eps t)^{-1/2} e^{-(x-y)^2/(2 eps t)} e^{-g(y)/eps} dy,
/// computed in z = (y - x)/sqrt(eps t) with the exponent shifted by its sampled
/// maximum. Outside |z| <= 4 L sqrt(t/eps) + 40 the integrand is below e^{-800}
/// relative to the peak.
inline double semianalytic_oracle_v0(const LipschitzData& g, double eps, double x, double t) {
  require(eps > 0.0 && eps <= 1.0 && t >= 0.0, ErrorCode::InvalidArgument, "need eps in (0,1] and t >= 0");
  if (t == 0.0) return g(Vec::Constant(1, x));
  const double sig = std::sqrt(eps * t), L = g.lipschitz_bound;
  const double zmax = 4.0 * L * std::sqrt(t / eps) + 40.0;
  auto phi = [&](double z) { return -0.5 * z * z - g(Vec::Constant(1, x + sig * z)) / eps; };
  const double dz = std::min(0.01, 0.1 / (L * std::sqrt(t / eps) + 1.0));
  double m = -1e300, zm = 0.0;
  for (long i = 0; -zmax + i * dz <= zmax; ++i)
    if (const double z = -zmax + i * dz, p = phi(z); p > m) m = p, zm = z;
  // the peak is often a kink of g; put a cut exactly on it
  const auto best = boost::math::tools::brent_find_minima([&](double z) { return -phi(z); }, zm - dz, zm + dz, 60);
  if (-best.second > m) m = -best.second, zm = best.first;
  // unit pieces, split at the sampled peak
  using GK = boost::math::quadrature::gauss_kronrod<double, 31>;
  std::vector<double> cuts{-zmax, zm, zmax};
  for (double z = std::ceil(-zmax); z < zmax; z += 1.0)
    if (std::abs(z - zm) > 1e-3) cuts.push_back(z);
  std::sort(cuts.begin(), cuts.end());
  double total = 0.0, err_total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    double err = 0.0;
    total += GK::integrate([&](double z) { return std::exp(phi(z) - m); }, cuts[i], cuts[i + 1], 20, 1e-13, &err);
    err_total += err;
  }
  if (!(total > 0.0) || !std::isfinite(total) || err_total > 1e-10 * total)
    throw Error(ErrorCode::QuadratureFailure, "quadrature did not converge");
  return -eps * (m + std::log(total / std::sqrt(two_pi)));
}

// ---------------------------------------------------------------------------
// Sweeps

namespace detail {

/// Runs tasks on a bounded pool; stops handing out tasks whose group index is
/// above the lowest failed group. Results are written by index.
template <class F>
void run_pool(std::size_t n, int threads, const std::vector<std::size_t>& group, F&& f,
              std::vector<std::exception_ptr>& failures) {
  failures.assign(n, nullptr);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> stop{std::numeric_limits<std::size_t>::max()};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      if (group[i] > stop.load()) continue;
      try {
        f(i);
      } catch (...) {
        failures[i] = std::current_exception();
        for (std::size_t s = stop.load(); group[i] < s && !stop.compare_exchange_weak(s, group[i]);) {
        }
      }
    }
  };
  unsigned hw = threads > 0 ? static_cast<unsigned>(threads) : std::max(1u, std::thread::hardware_concurrency());
  hw = static_cast<unsigned>(std::min<std::size_t>(hw, n));
  if (hw <= 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (unsigned k = 0; k < hw; ++k) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
}

struct SweepTask {
  std::size_t eps_index;
  std::size_t time_index;
  std::size_t point;
};

}  // namespace detail

/// For each eps, u^eps at every (point, time) against the Hopf-Lax value;
/// e(eps) is the sup of |u^eps - u|. Each point is solved separately in the
/// gauge tilted by Du(x,t) from Hopf-Lax, since one untilted solve loses
/// points where u - u(peak) >> eps. Pointwise mode adds the quadratic-growth
/// diagnostic. Throws SweepAborted (with the completed eps levels) when a
/// solver fails.
inline RateReport rate_sweep(const ExperimentConfig& config) {
  config.validate();
  const Potential V = parse_potential(config.potential, config.dim);
  const LipschitzData g = data::parse(config.data, config.dim);
  const HamiltonianModel model(V, config.cell_resolution);
  const auto pts = config.eval_points();
  const std::size_t ne = config.epsilons.size(), np = pts.size(), na = config.times.size(),
                    nt = na + config.eps_times.size();

  RateReport rep;
  rep.config = config;
  rep.manifest = make_manifest(config);

  // series index = time_index * np + point
  std::vector<PointSeries> series(nt * np);
  std::vector<HopfLaxSolution> hl(na * np);
  for (std::size_t k = 0; k < nt; ++k)
    for (std::size_t i = 0; i < np; ++i) {
      auto& s = series[k * np + i];
      s.x = config.points[i];
      s.eps_relative = k >= na;
      s.t = s.eps_relative ? config.eps_times[k - na] : config.times[k];
      s.u_eps.assign(ne, 0.0);
      s.errors.assign(ne, 0.0);
      if (!s.eps_relative) {
        hl[k * np + i] = solve_hopflax(g, model, pts[i], s.t);
        s.u = hl[k * np + i].value;
        if (config.pointwise) {
          try {
            s.growth = quad_growth_diag(g, model, pts[i], s.t).delta;
          } catch (const Error& e) {
            if (e.code() != ErrorCode::NoQuadraticGrowth) throw;
          }
        }
      }
    }

  std::vector<detail::SweepTask> tasks;
  for (std::size_t e = 0; e < ne; ++e)
    for (std::size_t k = 0; k < nt; ++k)
      for (std::size_t i = 0; i < np; ++i) tasks.push_back({e, k, i});
  std::vector<std::size_t> group;
  for (const auto& t : tasks) group.push_back(t.eps_index);

  auto run = [&](std::size_t ti) {
    const auto& task = tasks[ti];
    const double eps = config.epsilons[task.eps_index];
    const bool rel = task.time_index >= na;
    const double t = rel ? config.eps_times[task.time_index - na] * eps : config.times[task.time_index];
    const Vec& x = pts[task.point];
    // eps-relative times need their own Hopf-Lax solve
    const HopfLaxSolution sol = rel ? solve_hopflax(g, model, x, t) : hl[task.time_index * np + task.point];
    double ue = 0.0;
    switch (config.solver) {
      case EpsSolver::Quadrature: ue = semianalytic_oracle_v0(g, eps, x[0], t); break;
      case EpsSolver::Spectral:
      case EpsSolver::FiniteDifference: {
        const auto pr = EpsProblem::configure(V, g, eps, t, {x}, config.points_per_period, sol.p_at_minimizer);
        ue = config.solver == EpsSolver::Spectral ? solve_eps(pr, {x})[0] : solve_eps_fd(pr, {x}, config.fd_refine)[0];
        break;
      }
    }
    auto& s = series[task.time_index * np + task.point];
    s.u_eps[task.eps_index] = ue;
    s.errors[task.eps_index] = std::abs(ue - sol.value);
  };

  std::vector<std::exception_ptr> failures;
  detail::run_pool(tasks.size(), config.threads, group, run, failures);

  std::size_t done = ne;
  std::exception_ptr first;
  for (std::size_t i = 0; i < tasks.size(); ++i)
    if (failures[i] && tasks[i].eps_index < done) done = tasks[i].eps_index, first = failures[i];

  for (std::size_t e = 0; e < done; ++e) {
    rep.epsilons.push_back(config.epsilons[e]);
    double sup = 0.0;
    for (const auto& s : series) sup = std::max(sup, s.errors[e]);
    rep.errors.push_back(sup);
  }
  for (auto& s : series) {
    s.u_eps.resize(done);
    s.errors.resize(done);
  }
  rep.series = std::move(series);
  finish_fit(rep);

  if (first) {
    try {
      std::rethrow_exception(first);
    } catch (const Error& e) {
      rep.partial = true;
      rep.failure = e.what();
      throw SweepAborted(e, std::move(rep));
    }
  }
  return rep;
}

struct EnvelopeRow {
  double epsilon = 0.0;
  double t = 0.0;
  double error = 0.0;
  double bound = 0.0;  // eps (C + (n/2) log(max{t,eps}/eps))
  bool fitted = false;  // used to fit C
};

struct EnvelopeReport {
  bool ok = false;
  double margin = 0.0;  // min over the test half of bound - error
  double c_hat = 0.0;
  std::vector<EnvelopeRow> rows;
};

/// e(eps,t) <= eps (C + (n/2) log(max{t,eps}/eps)) with C fitted (as the
/// smallest admissible constant, clamped at 0) on the coarsest half of the
/// eps list and tested on the rest. A one-element list is fitted and tested
/// on itself.
inline EnvelopeReport envelope_check(const ExperimentConfig& config) {
  const auto rep = rate_sweep(config);
  const double half_n = 0.5 * config.dim;
  const std::size_t ne = rep.epsilons.size();
  const std::size_t nfit = ne <= 1 ? ne : (ne + 1) / 2;
  auto logterm = [&](double eps, double t) { return half_n * std::log(std::max(t, eps) / eps); };
  auto time_of = [](const PointSeries& s, double eps) { return s.eps_relative ? s.t * eps : s.t; };

  EnvelopeReport out;
  // sup over points for each (eps, time)
  std::vector<EnvelopeRow> rows;
  const std::size_t np = config.points.size();
  for (std::size_t e = 0; e < ne; ++e)
    for (std::size_t k = 0; k * np < rep.series.size(); ++k) {
      EnvelopeRow r;
      r.epsilon = rep.epsilons[e];
      r.t = time_of(rep.series[k * np], r.epsilon);
      for (std::size_t i = 0; i < np; ++i) r.error = std::max(r.error, rep.series[k * np + i].errors[e]);
      r.fitted = e < nfit;
      rows.push_back(r);
    }
  for (const auto& r : rows)
    if (r.fitted) out.c_hat = std::max(out.c_hat, r.error / r.epsilon - logterm(r.epsilon, r.t));
  out.margin = 1e300;
  for (auto& r : rows) {
    r.bound = r.epsilon * (out.c_hat + logterm(r.epsilon, r.t));
    if (!r.fitted || ne == 1) out.margin = std::min(out.margin, r.bound - r.error);
  }
  if (rows.empty()) out.margin = 0.0;
  out.ok = out.margin >= 0.0;
  out.rows = std::move(rows);
  return out;
}

// ---------------------------------------------------------------------------
// Report I/O

inline void to_json(json& j, const PointSeries& s) {
  j = json{{"x", s.x},          {"t", s.t},          {"eps_relative", s.eps_relative},
           {"u", s.u},          {"u_eps", s.u_eps},  {"errors", s.errors},
           {"growth", s.growth ? json(*s.growth) : json(nullptr)}};
}

inline void from_json(const json& j, PointSeries& s) {
  s.x = j.at("x").get<std::vector<double>>();
  s.t = j.at("t").get<double>();
  s.eps_relative = j.at("eps_relative").get<bool>();
  s.u = j.at("u").get<double>();
  s.u_eps = j.at("u_eps").get<std::vector<double>>();
  s.errors = j.at("errors").get<std::vector<double>>();
  s.growth = j.at("growth").is_null() ? std::nullopt : std::optional<double>(j.at("growth").get<double>());
}

inline json report_json(const RateReport& r) {
  json m{{"config_hash", r.manifest.config_hash}, {"version", r.manifest.version}, {"eigen", r.manifest.eigen},
         {"fftw", r.manifest.fftw},               {"boost", r.manifest.boost},     {"seed", r.manifest.seed}};
  json fit = nullptr;
  if (r.fit) fit = json{{"a", r.fit->a}, {"b", r.fit->b}, {"residual", r.fit->residual}};
  // NaN model values (no fit) become null
  json models = json::array(), res = json::array();
  for (std::size_t i = 0; i < r.model_values.size(); ++i) {
    models.push_back(std::isfinite(r.model_values[i]) ? json(r.model_values[i]) : json(nullptr));
    res.push_back(std::isfinite(r.residuals[i]) ? json(r.residuals[i]) : json(nullptr));
  }
  return json{{"manifest", m},
              {"config", r.config},
              {"epsilons", r.epsilons},
              {"errors", r.errors},
              {"model_values", models},
              {"residuals", res},
              {"fit", fit},
              {"b_without_largest", r.b_without_largest ? json(*r.b_without_largest) : json(nullptr)},
              {"series", r.series},
              {"partial", r.partial},
              {"failure", r.failure}};
}

inline RateReport parse_report(const json& j) {
  RateReport r;
  r.config = j.at("config").get<ExperimentConfig>();
  const auto& m = j.at("manifest");
  auto str = [&](const char* k) { return m.at(k).get<std::string>(); };
  r.manifest = {str("config_hash"), str("version"), str("eigen"), str("fftw"), str("boost"),
                m.at("seed").get<std::uint64_t>()};
  r.epsilons = j.at("epsilons").get<std::vector<double>>();
  r.errors = j.at("errors").get<std::vector<double>>();
  auto nan_or = [](const json& v) { return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>(); };
  for (const auto& v : j.at("model_values")) r.model_values.push_back(nan_or(v));
  for (const auto& v : j.at("residuals")) r.residuals.push_back(nan_or(v));
  if (!j.at("fit").is_null()) r.fit = RateFit{j["fit"]["a"].get<double>(), j["fit"]["b"].get<double>(), j["fit"]["residual"].get<double>()};
  if (!j.at("b_without_largest").is_null()) r.b_without_largest = j["b_without_largest"].get<double>();
  r.series = j.at("series").get<std::vector<PointSeries>>();
  r.partial = j.at("partial").get<bool>();
  r.failure = j.at("failure").get<std::string>();
  return r;
}

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string report_csv(const RateReport& r) {
  std::string s = "epsilon,error,model_value,residual\n";
  for (std::size_t i = 0; i < r.epsilons.size(); ++i)
    s += format_double(r.epsilons[i]) + "," + format_double(r.errors[i]) + "," + format_double(r.model_values[i]) +
         "," + format_double(r.residuals[i]) + "\n";
  return s;
}

enum class ReportFormat { Csv, Json };

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream os(path, std::ios::binary);
  if (!os || !(os << text) || !os.flush()) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
}

/// Writes <dir>/<name>.csv or <dir>/<name>.json and returns the path.
inline std::filesystem::path emit_report(const RateReport& r, ReportFormat fmt, const std::string& dir) {
  const auto path = std::filesystem::path(dir) / (r.config.name + (fmt == ReportFormat::Csv ? ".csv" : ".json"));
  write_text(path, fmt == ReportFormat::Csv ? report_csv(r) : report_json(r).dump(2) + "\n");
  return path;
}

inline RateReport read_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::IoFailure, "cannot open " + path);
  try {
    return parse_report(json::parse(is));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoFailure, path + ": " + e.what());
  }
}

inline json envelope_json(const EnvelopeReport& e) {
  json rows = json::array();
  for (const auto& r : e.rows)
    rows.push_back({{"epsilon", r.epsilon}, {"t", r.t}, {"error", r.error}, {"bound", r.bound}, {"fitted", r.fitted}});
  return json{{"ok", e.ok}, {"margin", e.margin}, {"c_hat", e.c_hat}, {"rows", rows}};
}

}  // namespace hjhom
