// Command-line laboratory driver.  Subcommands wrap the library modules;
// every run is deterministic given its config and seed (no timestamps),
// writes a metadata JSON describing all parameters, and maps failures to
// exit codes: 0 success, 1 check failure, 2 usage, 3 numerical.
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "wmlab/functionals.hpp"
#include "wmlab/grid.hpp"
#include "wmlab/io.hpp"
#include "wmlab/modulation.hpp"
#include "wmlab/operators.hpp"
#include "wmlab/profiles.hpp"
#include "wmlab/tower_ode.hpp"
#include "wmlab/wavemap_pde.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wmlab;

namespace {

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;  // overrides config seed
  int threads = 1;
};

json load_config(const GlobalOpts& g) {
  if (g.config_path.empty()) return json::object();
  json j = read_json_file(g.config_path);
  require(j.is_object(), "config must be a JSON object");
  return j;
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw usage_error("unknown key '" + it.key() + "' in " + ctx + " config");
}

template <class T>
T jget(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw usage_error("config key '" + key + "' has the wrong type");
  }
}

std::uint64_t pick_seed(const json& cfg, const GlobalOpts& g, std::uint64_t fallback) {
  if (g.seed) return *g.seed;
  return jget<std::uint64_t>(cfg, "seed", fallback);
}

fs::path out_file(const GlobalOpts& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return fs::path(g.out_dir) / name;
}

void write_metadata(const GlobalOpts& g, const std::string& command, const json& effective) {
  json meta{{"version", version_string}, {"command", command}, {"parameters", effective}};
  write_json_file(out_file(g, "metadata.json").string(), meta);
}

// ------------------------------------------------------------------ verify

json run_check(const std::string& name, double measured, double bound) {
  const bool pass = std::isfinite(measured) && measured <= bound;
  return json{{"name", name}, {"measured", measured}, {"bound", bound}, {"pass", pass}};
}

int cmd_verify(const GlobalOpts& g) {
  json cfg = load_config(g);
  check_keys(cfg, {}, "verify");
  json checks = json::array();
  auto vgrid = share(make_log_grid(1e-8, 1e8, 16385));

  for (int k = 2; k <= 5; ++k) {
    const double kap = kappa_norm(k);
    double kq = 0, res = 0;
    for (int i = 0; i < vgrid->n; ++i) {
      const double y = vgrid->r[i];
      const double lq = lambda_q(k, y);
      kq += vgrid->w[i] * sq(lq);
      res += vgrid->w[i] * 4.0 * lq * lq * lq * std::pow(y, -k - 2.0);
    }
    checks.push_back(run_check("kappa_quadrature_k" + std::to_string(k),
                               std::abs(kq / kap - 1.0), 1e-8));
    checks.push_back(run_check("interaction_residue_k" + std::to_string(k),
                               std::abs(res / (8.0 * k * k) - 1.0), 1e-6));
    TowerConfig single{k, 1, {1}, {1.0}, {}};
    const double en = energy(sample_tower_pair(single, vgrid), k);
    checks.push_back(
        run_check("bubble_energy_k" + std::to_string(k), std::abs(en / (4.0 * pi * k) - 1.0), 1e-8));
    double lmax = 0;
    for (int i = 0; i < 2001; ++i) {
      const double y = std::pow(10.0, -8.0 + 16.0 * i / 2000.0);
      const QTrig t = q_trig(k, y);
      lmax = std::max(lmax, std::abs(lambda_q(k, y) - k * t.sin_q));
    }
    checks.push_back(run_check("scaling_generator_identity_k" + std::to_string(k), lmax, 1e-13));
  }

  for (int k : {3, 4, 5}) {
    const TowerConstants c = constants(k, 4);
    double worst = 0;
    for (int j = 1; j < c.J; ++j) worst = std::max(worst, diagonalization_residual(c, j));
    checks.push_back(run_check("eigen_diagonalization_k" + std::to_string(k), worst, 1e-12));
    double ode = 0;
    for (int i = 0; i < 25; ++i) {
      const double t = -std::pow(10.0, 2.0 + 2.0 * i / 24.0);
      ode = std::max(ode, exact_rhs_residual(c, t));
    }
    checks.push_back(run_check("exact_ode_residual_k" + std::to_string(k), ode, 1e-12));
  }

  bool all = true;
  for (const auto& c : checks) all = all && c.at("pass").get<bool>();
  json report{{"version", version_string},
              {"kappa", {{"k2", kappa_norm(2)}, {"k3", kappa_norm(3)}, {"k4", kappa_norm(4)}, {"k5", kappa_norm(5)}}},
              {"checks", checks},
              {"all_pass", all}};
  std::cout << report.dump(2) << "\n";
  return all ? 0 : 1;
}

// --------------------------------------------------------------- constants

int cmd_constants(int k, int J) {
  const TowerConstants c = constants(k, J);
  json sp = json::array(), sm = json::array();
  for (int j = 1; j < J; ++j) {
    sp.push_back(c.sigma_plus[j]);
    sm.push_back(c.sigma_minus[j]);
  }
  json out{{"version", version_string}, {"k", k},          {"J", J},
           {"kappa", c.kappa},          {"alpha", c.alpha}, {"gamma", c.gamma},
           {"sigma_plus", sp},          {"sigma_minus", sm}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --------------------------------------------------------------- ode-exact

int cmd_ode_exact(const GlobalOpts& g) {
  json cfg = load_config(g);
  check_keys(cfg, {"k", "J", "t0", "t1", "samples"}, "ode-exact");
  const int k = jget(cfg, "k", 3), J = jget(cfg, "J", 3);
  const double t0 = jget(cfg, "t0", -1e4), t1 = jget(cfg, "t1", -1e2);
  const int samples = jget(cfg, "samples", 100);
  require(t0 < t1 && t1 < 0, "need t0 < t1 < 0");
  require(samples >= 2, "need at least 2 samples");
  const TowerConstants c = constants(k, J);

  std::vector<std::string> cols{"t"};
  for (int j = 1; j <= J; ++j) cols.push_back("lambda_" + std::to_string(j));
  for (int j = 1; j <= J; ++j) cols.push_back("b_" + std::to_string(j));
  cols.push_back("rhs_residual");
  CsvWriter csv(out_file(g, "ode_exact.csv").string(), cols);
  double worst = 0;
  for (int i = 0; i < samples; ++i) {
    // geometric time ladder: power laws sample evenly in log|t|
    const double t = -std::exp(std::log(-t0) + (std::log(-t1) - std::log(-t0)) * i / (samples - 1.0));
    const TowerState s = exact_solution(c, t);
    const double r = exact_rhs_residual(c, t);
    worst = std::max(worst, r);
    std::vector<double> row{t};
    for (double x : s.lambda) row.push_back(x);
    for (double x : s.b) row.push_back(x);
    row.push_back(r);
    csv.row(row);
  }
  json summary{{"version", version_string}, {"k", k},      {"J", J},
               {"t0", t0},                  {"t1", t1},    {"samples", samples},
               {"max_rhs_residual", worst}, {"pass", worst < 1e-12}};
  write_json_file(out_file(g, "ode_exact_summary.json").string(), summary);
  write_metadata(g, "ode-exact", json{{"k", k}, {"J", J}, {"t0", t0}, {"t1", t1}, {"samples", samples}});
  std::cout << summary.dump(2) << "\n";
  return worst < 1e-12 ? 0 : 1;
}

// --------------------------------------------------------------- ode-shoot

RhsMode parse_rhs_mode(const std::string& s) {
  if (s == "leading") return RhsMode::Leading;
  if (s == "full") return RhsMode::FullInteraction;
  throw usage_error("rhs_mode must be 'leading' or 'full'");
}

int cmd_ode_shoot(const GlobalOpts& g) {
  json cfg = load_config(g);
  check_keys(cfg, {"k", "J", "t0", "T_boot", "rhs_mode", "rtol", "bisection_tol", "max_iter",
                   "eps", "iota"},
             "ode-shoot");
  const int k = jget(cfg, "k", 3), J = jget(cfg, "J", 2);
  const TowerConstants c = constants(k, J);
  ShootingConfig sc;
  sc.t0 = jget(cfg, "t0", -1e4);
  sc.T_boot = jget(cfg, "T_boot", -1e2);
  sc.rhs_mode = parse_rhs_mode(jget<std::string>(cfg, "rhs_mode", "leading"));
  sc.rtol = jget(cfg, "rtol", 1e-8);
  sc.bisection_tol = jget(cfg, "bisection_tol", 1e-12);
  sc.max_iter = jget(cfg, "max_iter", 60);
  sc.eps = jget<std::vector<double>>(cfg, "eps", {});
  std::vector<int> iota = jget<std::vector<int>>(cfg, "iota", {});

  const ShootResult res = shoot(c, sc, iota);

  std::vector<std::string> cols{"t"};
  for (int j = 1; j <= J; ++j) cols.push_back("lambda_" + std::to_string(j));
  for (int j = 1; j <= J; ++j) cols.push_back("b_" + std::to_string(j));
  for (int j = 1; j <= J; ++j) cols.push_back("nu_" + std::to_string(j));
  for (int j = 2; j <= J; ++j) cols.push_back("nudot_" + std::to_string(j));
  CsvWriter csv(out_file(g, "shoot_trajectory.csv").string(), cols);
  for (const TowerState& s : res.trajectory.states) {
    const NuState nu = to_nu(c, s);
    std::vector<double> row{s.t};
    for (double x : s.lambda) row.push_back(x);
    for (double x : s.b) row.push_back(x);
    for (double x : nu.nu) row.push_back(x);
    for (double x : nu.nudot) row.push_back(x);
    csv.row(row);
  }
  json summary{{"version", version_string},
               {"nu0_star", res.nu0_star},
               {"classify_calls", res.classify_calls},
               {"monotone_ok", res.monotone_ok},
               {"window",
                {{"lambda1_margin", res.window.lambda1_margin},
                 {"b1_margin", res.window.b1_margin},
                 {"nu_margin", res.window.nu_margin},
                 {"nudot_margin", res.window.nudot_margin},
                 {"all_ok", res.window.all_ok()}}},
               {"states", res.trajectory.states.size()}};
  write_json_file(out_file(g, "shoot_summary.json").string(), summary);
  const ShootingConfig rc = resolve_epsilons(c, sc);
  write_metadata(g, "ode-shoot",
                 json{{"k", k},
                      {"J", J},
                      {"t0", sc.t0},
                      {"T_boot", sc.T_boot},
                      {"rhs_mode", sc.rhs_mode == RhsMode::Leading ? "leading" : "full"},
                      {"rtol", sc.rtol},
                      {"bisection_tol", sc.bisection_tol},
                      {"max_iter", sc.max_iter},
                      {"eps", rc.eps}});
  std::cout << summary.dump(2) << "\n";
  return res.window.all_ok() ? 0 : 1;
}

// -------------------------------------------------------------- pde-evolve

int cmd_pde_evolve(const GlobalOpts& g) {
  json cfg = load_config(g);
  check_keys(cfg, {"k", "J", "t0", "t1", "r_max", "n", "cfl", "integrator", "boundary",
                   "snapshot_cadence", "u_inf", "nu0", "iota", "initial_snapshot", "track"},
             "pde-evolve");
  const int k = jget(cfg, "k", 3), J = jget(cfg, "J", 1);
  const double t0 = jget(cfg, "t0", 0.0);
  const double t1 = jget(cfg, "t1", t0 + 1.0);
  SolverConfig sol;
  sol.k = k;
  sol.grid = make_evolution_grid(jget(cfg, "r_max", 16.0), jget(cfg, "n", 4096));
  sol.cfl = jget(cfg, "cfl", 0.5);
  const std::string integ = jget<std::string>(cfg, "integrator", "rk4");
  if (integ == "rk4") sol.integrator = TimeIntegrator::Rk4;
  else if (integ == "leapfrog") sol.integrator = TimeIntegrator::Leapfrog;
  else throw usage_error("integrator must be 'rk4' or 'leapfrog'");
  const std::string bnd = jget<std::string>(cfg, "boundary", "dirichlet_asymptotic");
  if (bnd == "dirichlet_asymptotic") sol.boundary = BoundaryKind::DirichletAsymptotic;
  else if (bnd == "absorbing") sol.boundary = BoundaryKind::Absorbing;
  else throw usage_error("boundary must be 'dirichlet_asymptotic' or 'absorbing'");
  sol.snapshot_cadence = jget(cfg, "snapshot_cadence", 0.25);
  if (cfg.contains("u_inf")) sol.u_inf = cfg.at("u_inf").get<double>();

  std::vector<int> iota = jget<std::vector<int>>(cfg, "iota", {});
  FieldPair init{ScalarField(sol.grid), ScalarField(sol.grid)};
  if (cfg.contains("initial_snapshot")) {
    const Snapshot snap = wms1_read(cfg.at("initial_snapshot").get<std::string>());
    require(snap.k == k, "snapshot k does not match config");
    require(snap.fields.u.grid->kind == GridKind::Uniform &&
                snap.fields.u.grid->n == sol.grid->n &&
                snap.fields.u.grid->r_max == sol.grid->r_max,
            "snapshot grid does not match the configured evolution grid");
    init = FieldPair{ScalarField(sol.grid), ScalarField(sol.grid)};
    init.u.v = snap.fields.u.v;
    init.udot.v = snap.fields.udot.v;
  } else {
    require(t0 < 0, "tower initial data needs t0 < 0 (or provide initial_snapshot)");
    const TowerConstants c = constants(k, J);
    ShootingConfig sc;
    sc.t0 = t0;
    sc.T_boot = (t1 < 0) ? t1 : t0 / 2.0;
    std::vector<double> nu0 = jget<std::vector<double>>(cfg, "nu0", std::vector<double>(std::max(0, J - 1), 0.0));
    init = build_initial_data(c, sc, nu0, sol.grid, iota);
  }

  const EvolutionRecord rec = evolve(sol, init, t0, t1);

  CsvWriter series(out_file(g, "series.csv").string(), {"t", "energy", "max_amplitude"});
  for (std::size_t i = 0; i < rec.times.size(); ++i)
    series.row({rec.times[i], rec.energy[i], rec.max_amplitude[i]});
  for (std::size_t i = 0; i < rec.snapshots.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "snap_%05zu.wms1", i);
    wms1_write(out_file(g, name).string(), Snapshot{k, J, rec.times[i], rec.snapshots[i]});
  }

  json summary{{"version", version_string},
               {"steps", rec.total_steps},
               {"dt", rec.dt},
               {"snapshots", rec.snapshots.size()},
               {"reflection_time", rec.reflection_time},
               {"unstable", rec.unstable}};
  if (rec.unstable) summary["failure_time"] = rec.failure_time;

  if (jget(cfg, "track", false)) {
    const TrackResult tr = track(rec, k, J, iota);
    std::vector<std::string> cols{"t"};
    for (int j = 1; j <= J; ++j) cols.push_back("lambda_" + std::to_string(j));
    for (int j = 1; j <= J; ++j) cols.push_back("b_" + std::to_string(j));
    for (int j = 1; j <= J; ++j) cols.push_back("nu_" + std::to_string(j));
    for (int j = 2; j <= J; ++j) cols.push_back("nudot_" + std::to_string(j));
    cols.push_back("residual_max");
    cols.push_back("window_ok");
    CsvWriter tcsv(out_file(g, "track.csv").string(), cols);
    for (const TrackPoint& pt : tr.points) {
      std::vector<double> row{pt.t};
      for (double x : pt.dec.cfg.lambda) row.push_back(x);
      for (double x : pt.dec.cfg.b) row.push_back(x);
      if (pt.window.evaluated) {
        for (double x : pt.nu.nu) row.push_back(x);
        for (double x : pt.nu.nudot) row.push_back(x);
      } else {
        for (int j = 0; j < 2 * J - 1; ++j) row.push_back(0.0);
      }
      double rmax = 0;
      for (double x : pt.dec.residuals) rmax = std::max(rmax, std::abs(x));
      row.push_back(rmax);
      row.push_back(pt.window.evaluated ? (pt.window.all_ok() ? 1.0 : 0.0) : 1.0);
      tcsv.row(row);
    }
    summary["track"] = {{"frames", tr.points.size()},
                        {"truncated", tr.truncated}};
    if (tr.truncated) summary["track"]["failure_time"] = tr.failure_time;
  }

  write_json_file(out_file(g, "evolve_summary.json").string(), summary);
  write_metadata(g, "pde-evolve",
                 json{{"k", k},
                      {"J", J},
                      {"t0", t0},
                      {"t1", t1},
                      {"r_max", sol.grid->r_max},
                      {"n", sol.grid->n},
                      {"cfl", sol.cfl},
                      {"integrator", integ},
                      {"boundary", bnd},
                      {"snapshot_cadence", sol.snapshot_cadence}});
  std::cout << summary.dump(2) << "\n";
  return 0;
}

// --------------------------------------------------------------- decompose

int cmd_decompose(const GlobalOpts& g, const std::string& snapshot_path) {
  json cfg = load_config(g);
  check_keys(cfg, {"J", "iota", "lambda_guess", "tol"}, "decompose");
  const Snapshot snap = wms1_read(snapshot_path);
  const int J = jget(cfg, "J", snap.J);
  std::vector<int> iota = jget<std::vector<int>>(cfg, "iota", {});
  std::vector<double> guess = jget<std::vector<double>>(cfg, "lambda_guess", {});
  if (guess.empty()) {
    if (snap.t < 0 && snap.k >= 3) {
      const TowerConstants c = constants(snap.k, J);
      guess.resize(J);
      for (int j = 0; j < J; ++j) guess[j] = exact_lambda(c, j, snap.t);
    } else if (J == 1) {
      guess = {1.0};
    } else {
      throw usage_error("lambda_guess required for J >= 2 snapshots at t >= 0");
    }
  }
  const double tol = jget(cfg, "tol", 1e-12);
  const Decomposition dec = decompose(snap.fields, snap.k, J, iota, guess, tol);
  json out{{"version", version_string},
           {"k", snap.k},
           {"J", J},
           {"t", snap.t},
           {"lambda", dec.cfg.lambda},
           {"b", dec.cfg.b},
           {"bhat", dec.bhat},
           {"residuals", dec.residuals},
           {"newton_iters", dec.newton_iters}};
  write_json_file(out_file(g, "decompose.json").string(), out);
  write_metadata(g, "decompose",
                 json{{"snapshot", snapshot_path}, {"J", J}, {"lambda_guess", guess}, {"tol", tol}});
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --------------------------------------------------------- morawetz-sample

int cmd_morawetz_sample(const GlobalOpts& g) {
  json cfg = load_config(g);
  check_keys(cfg, {"k", "J", "lambda", "scale_ratio", "trials", "delta", "delta0", "delta_prime",
                   "seed", "grid_n"},
             "morawetz-sample");
  const int k = jget(cfg, "k", 3), J = jget(cfg, "J", 2);
  std::vector<double> lambda = jget<std::vector<double>>(cfg, "lambda", {});
  if (lambda.empty()) {
    const double ratio = jget(cfg, "scale_ratio", 1e-2);
    lambda.resize(J);
    double l = 1.0;
    for (int j = 0; j < J; ++j, l *= ratio) lambda[j] = l;
  }
  const int trials = jget(cfg, "trials", 100);
  MorawetzParams mp;
  mp.delta = jget(cfg, "delta", 0.1);
  mp.delta0 = jget(cfg, "delta0", 0.1);
  mp.psi.delta_prime = jget(cfg, "delta_prime", 0.1);
  const std::uint64_t seed = pick_seed(cfg, g, 2026);
  const int grid_n = jget(cfg, "grid_n", 8192);

  TowerConfig tower{k, J, default_signs(J), lambda, {}};
  auto grid = share(make_log_grid(1e-6 * lambda.back(), 1e3, grid_n));
  const ZProfile z = make_z_profile(k, ZKind::Cutoff);
  const RatioSample rs = defect_sample(tower, mp, trials, seed, grid, z);

  CsvWriter csv(out_file(g, "defect_ratios.csv").string(), {"trial", "ratio"});
  for (std::size_t i = 0; i < rs.ratios.size(); ++i)
    csv.row({static_cast<double>(i), rs.ratios[i]});
  const bool all_positive = rs.min_ratio > 0;
  json summary{{"version", version_string}, {"trials", trials},   {"seed", seed},
               {"min_ratio", rs.min_ratio}, {"argmin", rs.argmin}, {"all_positive", all_positive}};
  write_json_file(out_file(g, "morawetz_summary.json").string(), summary);
  write_metadata(g, "morawetz-sample",
                 json{{"k", k},
                      {"J", J},
                      {"lambda", lambda},
                      {"trials", trials},
                      {"delta", mp.delta},
                      {"delta0", mp.delta0},
                      {"delta_prime", mp.psi.delta_prime},
                      {"seed", seed},
                      {"grid_n", grid_n}});
  std::cout << summary.dump(2) << "\n";
  return all_positive ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"wmlab: numerical laboratory for equivariant wave-map bubble towers"};
  app.set_version_flag("--version", std::string(version_string));
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOpts g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out_dir, "output directory");
  std::uint64_t seed_val = 0;
  auto* seed_opt = app.add_option("--seed", seed_val, "RNG seed (overrides config)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  auto* c_verify = app.add_subcommand("verify", "run identity and constant checks");
  auto* c_constants = app.add_subcommand("constants", "print tower constants");
  int ck = 3, cJ = 3;
  c_constants->add_option("-k,--k", ck, "equivariance index (>= 3)");
  c_constants->add_option("-J,--J", cJ, "tower size");
  auto* c_ode_exact = app.add_subcommand("ode-exact", "sample the closed-form tower laws");
  auto* c_ode_shoot = app.add_subcommand("ode-shoot", "nested-bisection shooting");
  auto* c_pde = app.add_subcommand("pde-evolve", "evolve the radial wave map");
  auto* c_dec = app.add_subcommand("decompose", "extract tower parameters from a snapshot");
  std::string snapshot_path;
  c_dec->add_option("snapshot", snapshot_path, "WMS1 snapshot file")
      ->required()
      ->check(CLI::ExistingFile);
  auto* c_mor = app.add_subcommand("morawetz-sample", "sample the virial monotonicity defect");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (seed_opt->count() > 0) g.seed = seed_val;

  try {
    if (c_verify->parsed()) return cmd_verify(g);
    if (c_constants->parsed()) return cmd_constants(ck, cJ);
    if (c_ode_exact->parsed()) return cmd_ode_exact(g);
    if (c_ode_shoot->parsed()) return cmd_ode_shoot(g);
    if (c_pde->parsed()) return cmd_pde_evolve(g);
    if (c_dec->parsed()) return cmd_decompose(g, snapshot_path);
    if (c_mor->parsed()) return cmd_morawetz_sample(g);
    throw usage_error("no subcommand selected");
  } catch (const usage_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const numerical_error& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
