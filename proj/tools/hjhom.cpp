// hjhom: command line front end. Every subcommand prints a JSON (or CSV)
// summary on stdout and writes its artifacts under the output directory:
// --out if given, else $HJHOM_OUTPUT_DIR, else ./out (rate/envelope: the
// config's output_dir, which the environment variable overrides).
//
// Exit codes: 0 ok, 1 bad input or refused precondition, 2 solver failure,
// 3 invariant violation.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "hjhom/hjhom.hpp"

using namespace hjhom;
namespace fs = std::filesystem;

namespace {

constexpr int exit_usage = 1, exit_solver = 2, exit_invariant = 3;

int exit_code(const Error& e) {
  if (e.code() == ErrorCode::InvariantViolation || e.code() == ErrorCode::MismatchedSolutions) return exit_invariant;
  return e.is_solver_failure() ? exit_solver : exit_usage;
}

Vec parse_vec(const std::string& s, int dim) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    try {
      v.push_back(std::stod(tok));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad number '" + tok + "' in '" + s + "'");
    }
  }
  require(static_cast<int>(v.size()) == dim, ErrorCode::InvalidArgument,
          "'" + s + "' needs " + std::to_string(dim) + " comma-separated components");
  return Eigen::Map<Vec>(v.data(), dim);
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) v.push_back(std::stod(tok));
  return v;
}

/// "lo:hi:n" (n evenly spaced values) or "a,b,c".
std::vector<double> parse_grid(const std::string& s) {
  if (s.find(':') == std::string::npos) return parse_list(s);
  double lo, hi;
  int n;
  require(std::sscanf(s.c_str(), "%lf:%lf:%d", &lo, &hi, &n) == 3 && n >= 1, ErrorCode::InvalidArgument,
          "grid drift must be lo:hi:n");
  std::vector<double> v;
  for (int i = 0; i < n; ++i) v.push_back(n == 1 ? lo : lo + (hi - lo) * i / (n - 1));
  return v;
}

json vec_json(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json mat_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
  return rows;
}

struct Common {
  std::string out;
  std::string potential = "cos";
  int dim = 1;

  fs::path dir() const {
    fs::path d = out;
    if (d.empty()) {
      const char* env = std::getenv(output_dir_env);
      d = env && *env ? env : "out";
    }
    fs::create_directories(d);
    return d;
  }
};

void add_common(CLI::App* sub, Common& c, bool with_potential = true) {
  sub->add_option("--out", c.out, "output directory (default: $HJHOM_OUTPUT_DIR or ./out)");
  sub->add_option("--dim", c.dim, "dimension (1 or 2)")->check(CLI::Range(1, 2));
  if (with_potential)
    sub->add_option("--potential", c.potential, "zero | const:<c> | cos[:<amp>] | harmonics:<seed> | <field file>");
}

void emit(const json& j, const fs::path& path) {
  write_text(path, j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Periodic homogenization of viscous Hamilton-Jacobi equations"};
  app.require_subcommand(1);
  Common com;

  // cell
  auto* cell = app.add_subcommand("cell", "solve the cell problem at p");
  add_common(cell, com);
  std::string p_str = "0";
  int n = 128;
  cell->add_option("--p", p_str, "p, comma separated");
  cell->add_option("--n", n, "grid points per axis");

  // lagrangian
  auto* lag = app.add_subcommand("lagrangian", "Lbar on a q grid (CSV)");
  add_common(lag, com);
  std::string q_grid = "-1:1:9";
  lag->add_option("--q-grid", q_grid, "lo:hi:n or a,b,c (per axis in 2D)");
  lag->add_option("--n", n, "cell resolution");

  // hopflax
  auto* hl = app.add_subcommand("hopflax", "homogenized solution by Hopf-Lax");
  add_common(hl, com);
  std::string g_text = "capped-norm", x_str = "0";
  double t = 1.0;
  hl->add_option("--g", g_text, "capped-norm | const:<c> | affine:<a> | smooth | concave-huber | file:<path>");
  hl->add_option("--x", x_str, "x, comma separated");
  hl->add_option("--t", t, "time");
  hl->add_option("--n", n, "cell resolution");

  // solve-eps
  auto* se = app.add_subcommand("solve-eps", "u^eps at points by Hopf-Cole splitting");
  add_common(se, com);
  std::vector<std::string> xs{"0"};
  double eps = 0.0625, ppu = 16.0;
  bool fd = false, no_tilt = false;
  se->add_option("--g", g_text, "initial data");
  se->add_option("--x", xs, "evaluation points (repeatable)");
  se->add_option("--t", t, "time");
  se->add_option("--eps", eps, "epsilon in (0, 1]");
  se->add_option("--ppu", ppu, "grid points per period of V(x/eps)");
  se->add_flag("--fd", fd, "finite-difference cross-check instead (1D)");
  se->add_flag("--no-tilt", no_tilt, "solve untilted instead of in the gauge Du(x,t)");
  se->add_option("--n", n, "cell resolution for the Hopf-Lax comparison");

  // kernel
  auto* ke = app.add_subcommand("kernel", "Schroedinger or Doob kernel profile");
  add_common(ke, com);
  std::string kind = "schrodinger";
  double half_width = 0.0, delta = 0.0;
  int order = 1;
  long mc_paths = 0;
  std::uint64_t seed = 1;
  ke->add_option("--kind", kind, "schrodinger | doob")->check(CLI::IsMember({"schrodinger", "doob"}));
  ke->add_option("--t", t, "time");
  ke->add_option("--x", x_str, "source point");
  ke->add_option("--p", p_str, "p for the Doob kernel");
  ke->add_option("--half-width", half_width, "box half width around x (0 = 8 sqrt(t) + 4)");
  ke->add_option("--ppu", ppu, "grid points per unit length");
  ke->add_option("--delta", delta, "bump width (0 = four spacings)");
  ke->add_option("--order", order, "Richardson halvings of delta");
  ke->add_option("--mc-paths", mc_paths, "also compare K(t,x,x) with Feynman-Kac Monte Carlo");
  ke->add_option("--seed", seed, "Monte Carlo seed");
  ke->add_option("--n", n, "cell resolution (Doob)");

  // ballistic
  auto* ba = app.add_subcommand("ballistic", "t^{n/2} e^{t Lbar(q)} K(t,0,-qt) series");
  add_common(ba, com);
  std::string q_str = "0", t_list = "5,10,20,40";
  ba->add_option("--q", q_str, "velocity");
  ba->add_option("--t-list", t_list, "times in [1, 50]");
  ba->add_option("--n", n, "cell resolution");

  // bloch
  auto* bl = app.add_subcommand("bloch", "effective drift and diffusion of 1/2 Lap + b.D");
  add_common(bl, com);
  std::string drift_arg = "sine";
  bool expansion = false;
  bl->add_option("--drift", drift_arg, "sine | const:<c> | doob:<p> | <field file>");
  bl->add_option("--n", n, "grid points per axis");
  bl->add_flag("--expansion", expansion, "also fit bbar and Q from the Bloch fiber");

  // rate
  auto* ra = app.add_subcommand("rate", "eps sweep and rate fit from a config");
  std::string config_path, format = "both";
  ra->add_option("--config", config_path, "JSON config")->required();
  ra->add_option("--format", format, "csv | json | both")->check(CLI::IsMember({"csv", "json", "both"}));

  // envelope
  auto* en = app.add_subcommand("envelope", "check e <= eps (C + n/2 log(max{t,eps}/eps))");
  en->add_option("--config", config_path, "JSON config")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cell) {
      const auto V = parse_potential(com.potential, com.dim);
      const auto s = solve_cell(V, parse_vec(p_str, com.dim), n);
      const auto res = residuals(s);
      const auto d = com.dir();
      write_field((d / "cell_v.field").string(), s.v);
      write_field((d / "cell_r.field").string(), s.r);
      write_field((d / "cell_pi.field").string(), s.pi);
      emit({{"p", vec_json(s.p)},
            {"hbar", s.hbar},
            {"e_p", s.e_p},
            {"N", s.resolution},
            {"residuals", {{"cell", res.cell_residual}, {"stationarity", res.stationarity_residual}}}},
           d / "cell.json");
      if (res.cell_residual > s.residual_tolerance || res.stationarity_residual > s.residual_tolerance)
        throw Error(ErrorCode::InvariantViolation, "cell residuals above tolerance");
    } else if (*lag) {
      const HamiltonianModel model(parse_potential(com.potential, com.dim), n);
      const auto axis = parse_grid(q_grid);
      std::string csv = com.dim == 1 ? "q,lbar,p_of_q,dual_gap\n" : "q1,q2,lbar,p1,p2,dual_gap\n";
      auto row = [&](const Vec& q) {
        const auto lv = legendre(model, q);
        for (int j = 0; j < com.dim; ++j) csv += format_double(q[j]) + ",";
        csv += format_double(lv.lbar) + ",";
        for (int j = 0; j < com.dim; ++j) csv += format_double(lv.p_of_q[j]) + ",";
        csv += format_double(lv.dual_gap) + "\n";
      };
      for (double a : axis) {
        if (com.dim == 1) {
          row(Vec::Constant(1, a));
        } else {
          for (double b : axis) row((Vec(2) << a, b).finished());
        }
      }
      write_text(com.dir() / "lagrangian.csv", csv);
      std::cout << csv;
    } else if (*hl) {
      const HamiltonianModel model(parse_potential(com.potential, com.dim), n);
      const auto g = data::parse(g_text, com.dim);
      const Vec x = parse_vec(x_str, com.dim);
      const auto s = solve_hopflax(g, model, x, t);
      json j{{"x", vec_json(x)}, {"t", t}, {"value", s.value}, {"minimizer", vec_json(s.minimizer)},
             {"p", vec_json(s.p_at_minimizer)}, {"delta", nullptr}, {"r", nullptr}};
      try {
        const auto q = quad_growth_diag(g, model, x, t);
        j["delta"] = q.delta;
        j["r"] = q.r;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoQuadraticGrowth) throw;
      }
      emit(j, com.dir() / "hopflax.json");
    } else if (*se) {
      const auto V = parse_potential(com.potential, com.dim);
      const auto g = data::parse(g_text, com.dim);
      const HamiltonianModel model(V, n);
      json pts = json::array();
      for (const auto& xsv : xs) {
        const Vec x = parse_vec(xsv, com.dim);
        const auto h = solve_hopflax(g, model, x, t);
        const auto pr = EpsProblem::configure(V, g, eps, t, {x}, ppu, no_tilt ? Vec() : h.p_at_minimizer);
        const double ue = fd ? solve_eps_fd(pr, {x})[0] : solve_eps(pr, {x})[0];
        pts.push_back({{"x", vec_json(x)}, {"u_eps", ue}, {"u", h.value}, {"error", std::abs(ue - h.value)},
                       {"grid_points", pr.grid_points}, {"half_width", pr.half_width}});
      }
      emit({{"epsilon", eps}, {"t", t}, {"solver", fd ? "fd" : "spectral"}, {"points", pts}},
           com.dir() / "solve_eps.json");
    } else if (*ke) {
      const auto V = parse_potential(com.potential, com.dim);
      const Vec x = parse_vec(x_str, com.dim);
      const auto box = BoxGrid::around(x, half_width > 0.0 ? half_width : 8.0 * std::sqrt(t) + 4.0, ppu);
      KernelOptions opt;
      opt.bump_width = delta;
      opt.richardson_order = order;
      KernelEstimate k = kind == "doob" ? doob_kernel(solve_cell(V, parse_vec(p_str, com.dim), n), t, x, box, opt)
                                        : schrodinger_kernel(V, t, x, box, opt);
      const auto d = com.dir();
      k.write((d / "kernel.field").string());
      json j{{"t", k.t},
             {"x", vec_json(k.x)},
             {"delta", k.bump_width},
             {"richardson_order", k.richardson_order},
             {"kind", kind},
             {"box", {{"origin", vec_json(box.origin)}, {"length", box.length}, {"points", box.points}}},
             {"mass", k.mass()},
             {"value_at_x", k.value(x)}};
      if (mc_paths > 0) {
        require(kind == "schrodinger", ErrorCode::InvalidArgument, "Monte Carlo compares the Schroedinger kernel");
        const auto mc = feynman_kac_mc(V, t, x, x, mc_paths, seed);
        j["mc"] = {{"estimate", mc.estimate}, {"std_error", mc.std_error}, {"paths", mc.n_paths}, {"seed", mc.seed}};
      }
      emit(j, d / "kernel.json");
    } else if (*ba) {
      const HamiltonianModel model(parse_potential(com.potential, com.dim), n);
      const Vec q = parse_vec(q_str, com.dim);
      const auto series = ballistic_band(model, q, parse_list(t_list));
      json rows = json::array();
      double lo = 1e300, hi = 0.0;
      for (const auto& s : series) {
        rows.push_back({{"t", s.t}, {"value", s.value}});
        lo = std::min(lo, s.value);
        hi = std::max(hi, s.value);
      }
      const auto lv = legendre(model, q);
      emit({{"q", vec_json(q)}, {"lbar", lv.lbar}, {"p", vec_json(lv.p_of_q)}, {"series", rows},
            {"ratio", hi / lo}},
           com.dir() / "ballistic.json");
    } else if (*bl) {
      std::optional<PeriodicDrift> drift;
      if (drift_arg == "sine") {
        drift = PeriodicDrift::sine(com.dim, n);
      } else if (drift_arg.rfind("const:", 0) == 0) {
        drift = PeriodicDrift::constant(parse_vec(drift_arg.substr(6), com.dim), n);
      } else if (drift_arg.rfind("doob:", 0) == 0) {
        const auto V = parse_potential(com.potential, com.dim);
        drift = PeriodicDrift::doob(solve_cell(V, parse_vec(drift_arg.substr(5), com.dim), n));
      } else {
        drift = PeriodicDrift::explicit_drift(VectorField(read_fields(drift_arg)));
      }
      const auto ed = effective_diffusion(*drift, n);
      const auto d = com.dir();
      write_field((d / "bloch_m.field").string(), ed.m);
      write_fields((d / "bloch_chi.field").string(), ed.chi);
      json j{{"b_bar", vec_json(ed.b_bar)},
             {"Q", mat_json(ed.Q)},
             {"residuals", {{"stationarity", ed.stationarity_residual}, {"correctors", ed.corrector_residuals}}}};
      if (expansion) {
        const auto be = bloch_expansion(*drift, std::min(n, 64));
        j["bloch"] = {{"b_bar", vec_json(be.b_bar)}, {"Q", mat_json(be.Q)}};
      }
      emit(j, d / "bloch.json");
    } else if (*ra) {
      const auto cfg = load_config(config_path);
      const auto dir = output_dir(cfg);
      auto write = [&](const RateReport& r) {
        if (format != "json") std::cerr << "wrote " << emit_report(r, ReportFormat::Csv, dir).string() << "\n";
        if (format != "csv") std::cerr << "wrote " << emit_report(r, ReportFormat::Json, dir).string() << "\n";
      };
      try {
        const auto r = rate_sweep(cfg);
        write(r);
        json s{{"epsilons", r.epsilons}, {"errors", r.errors}, {"fit", nullptr}};
        if (r.fit) s["fit"] = {{"a", r.fit->a}, {"b", r.fit->b}, {"residual", r.fit->residual}};
        std::cout << s.dump(2) << "\n";
      } catch (const SweepAborted& e) {
        write(e.report());
        throw;
      }
    } else if (*en) {
      const auto cfg = load_config(config_path);
      const auto env = envelope_check(cfg);
      const auto j = envelope_json(env);
      write_text(fs::path(output_dir(cfg)) / (cfg.name + "_envelope.json"), j.dump(2) + "\n");
      std::cout << j.dump(2) << "\n";
      if (!env.ok) throw Error(ErrorCode::InvariantViolation, "envelope violated, margin " + format_double(env.margin));
    }
  } catch (const Error& e) {
    std::cerr << "hjhom: " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    std::cerr << "hjhom: " << e.what() << "\n";
    return exit_solver;
  } catch (const json::exception& e) {
    std::cerr << "hjhom: " << e.what() << "\n";
    return exit_usage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "hjhom: bad number: " << e.what() << "\n";
    return exit_usage;
  }
  return 0;
}
