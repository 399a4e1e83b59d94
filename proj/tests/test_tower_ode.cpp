#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "wmlab/tower_ode.hpp"

using namespace wmlab;

TEST_CASE("tower constants hit their frozen values", "[tower]") {
  const TowerConstants c = constants(3, 4);
  CHECK(c.kappa == Catch::Approx(7.255197456936871).epsilon(1e-15));
  CHECK(c.alpha[0] == 0.0);
  CHECK(c.alpha[1] == Catch::Approx(2.0).epsilon(1e-14));
  CHECK(c.alpha[2] == Catch::Approx(8.0).epsilon(1e-13));
  CHECK(c.alpha[3] == Catch::Approx(26.0).epsilon(1e-13));
  CHECK(c.gamma[0] == 1.0);
  CHECK(c.gamma[1] == Catch::Approx(0.6045997880780726).epsilon(1e-12));
  CHECK(c.gamma[2] == Catch::Approx(1.6034418277202045).epsilon(1e-12));
  CHECK(c.gamma[3] == Catch::Approx(291.6174297565401).epsilon(1e-11));
  CHECK_THROWS_AS(constants(2, 2), usage_error);
  CHECK_THROWS_AS(constants(3, 0), usage_error);
}

TEST_CASE("linearized exponents around the collapse", "[tower]") {
  const TowerConstants c3 = constants(3, 3);
  CHECK(c3.sigma_plus[1] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(c3.sigma_minus[1] == Catch::Approx(-6.0).epsilon(1e-12));
  CHECK(c3.sigma_plus[2] == Catch::Approx(3.5104121494643135).epsilon(1e-12));
  CHECK(c3.sigma_minus[2] == Catch::Approx(-20.510412149464315).epsilon(1e-12));
  const TowerConstants c4 = constants(4, 2);
  CHECK(c4.sigma_plus[1] == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(c4.sigma_minus[1] == Catch::Approx(-4.0).epsilon(1e-12));
  for (int k : {3, 4, 5}) {
    const TowerConstants c = constants(k, 4);
    for (int j = 1; j < 4; ++j) CHECK(diagonalization_residual(c, j) < 1e-13);
  }
}

TEST_CASE("closed-form collapse laws satisfy the leading system", "[tower]") {
  for (int k : {3, 4, 5}) {
    for (int J : {1, 2, 3, 4}) {
      const TowerConstants c = constants(k, J);
      double worst = 0;
      for (int i = 0; i < 30; ++i) {
        const double t = -std::pow(10.0, 1.0 + 4.0 * i / 29.0);
        worst = std::max(worst, exact_rhs_residual(c, t));
      }
      INFO("k=" << k << " J=" << J);
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("exact laws compose: lambda powers and b derivative", "[tower]") {
  const TowerConstants c = constants(3, 3);
  const double t = -512.0;
  for (int j = 0; j < 3; ++j) {
    CHECK(exact_lambda(c, j, t) ==
          Catch::Approx(c.gamma[j] * std::pow(-t, -c.alpha[j])).epsilon(1e-14));
    CHECK(exact_b(c, j, t) ==
          Catch::Approx(-c.alpha[j] * c.gamma[j] * std::pow(-t, -c.alpha[j] - 1))
              .epsilon(1e-13)
              .margin(1e-300));
  }
  const TowerState s = exact_solution(c, t);
  CHECK(s.lambda[0] == 1.0);
  CHECK(s.b[0] == 0.0);
}

TEST_CASE("integration reproduces the exact collapse at tight tolerance", "[tower]") {
  const TowerConstants c = constants(3, 2);
  const OdeSystem sys = make_system(c, default_signs(2), RhsMode::Leading);
  IntegrateOptions opt;
  opt.rtol = 1e-11;
  const Trajectory tr = integrate(sys, exact_solution(c, -1e4), -1e2, opt);
  REQUIRE_FALSE(tr.halted);
  const TowerState& fin = tr.states.back();
  CHECK(fin.t == Catch::Approx(-1e2).margin(1e-9));
  for (int j = 0; j < 2; ++j) {
    CHECK(fin.lambda[j] == Catch::Approx(exact_lambda(c, j, fin.t)).epsilon(1e-8));
  }
  CHECK(fin.b[0] == 0.0);  // leading mode never moves the outer velocity
  CHECK(fin.b[1] == Catch::Approx(exact_b(c, 1, fin.t)).epsilon(1e-8));
}

TEST_CASE("full interaction right side refines the leading one", "[tower]") {
  const TowerConstants c = constants(3, 2);
  const TowerState s = exact_solution(c, -1e3);
  const TowerDeriv lead = ode_rhs(c, s, RhsMode::Leading);
  const TowerDeriv full = ode_rhs(c, s, RhsMode::FullInteraction);
  CHECK(lead.dlambda[1] == Catch::Approx(full.dlambda[1]).epsilon(1e-14));
  // quadrature floor of the pairing is ~1e-6 relative
  CHECK(full.db[1] == Catch::Approx(lead.db[1]).epsilon(1e-4));
  CHECK(full.db[0] == 0.0);
  CHECK(lead.db[0] == 0.0);
}

TEST_CASE("deviation coordinates round trip", "[tower]") {
  const TowerConstants c = constants(3, 3);
  NuState n;
  n.t = -777.0;
  n.nu = {0.01, -0.02, 0.005};
  n.nudot = {0.1, -0.04};
  n.b1 = 3e-5;
  const TowerState s = from_nu(c, n);
  const NuState back = to_nu(c, s);
  CHECK(back.t == n.t);
  CHECK(back.b1 == Catch::Approx(n.b1).epsilon(1e-14));
  for (int j = 0; j < 3; ++j) CHECK(back.nu[j] == Catch::Approx(n.nu[j]).margin(1e-13));
  for (int j = 0; j < 2; ++j) CHECK(back.nudot[j] == Catch::Approx(n.nudot[j]).margin(1e-13));
}

TEST_CASE("eigen coordinates diagonalize the perturbation", "[tower]") {
  const TowerConstants c = constants(3, 3);
  for (int j : {1, 2}) {
    for (bool unstable : {true, false}) {
      const TowerState s = eigen_perturbed_init(c, -1e4, j, 1e-5, unstable);
      const NuState n = to_nu(c, s);
      const EigenCoords e = eigen_coordinates(c, j, n.nu[j], n.nudot[j - 1]);
      if (unstable) {
        CHECK(e.unstable == Catch::Approx(1e-5).epsilon(1e-10));
        CHECK(std::abs(e.stable) < 1e-12);
      } else {
        CHECK(e.stable == Catch::Approx(1e-5).epsilon(1e-10));
        CHECK(std::abs(e.unstable) < 1e-12);
      }
    }
  }
}

TEST_CASE("perturbed runs grow and decay at the linearized exponents", "[tower]") {
  // light version of the dynamical fit: one level, both directions
  const TowerConstants c = constants(3, 2);
  const OdeSystem sys = make_system(c, default_signs(2), RhsMode::Leading);
  IntegrateOptions opt;
  opt.rtol = 1e-11;
  opt.store = true;

  const Trajectory up = integrate(sys, eigen_perturbed_init(c, -1e4, 1, 1e-6, true), -1e3, opt);
  std::vector<double> ts, qs;
  for (const TowerState& s : up.states) {
    const NuState n = to_nu(c, s);
    const EigenCoords e = eigen_coordinates(c, 1, n.nu[1], n.nudot[0]);
    ts.push_back(s.t);
    qs.push_back(std::abs(e.unstable));
  }
  const PowerFit fit_up = exponent_fit(ts, qs);
  CHECK(-fit_up.slope == Catch::Approx(c.sigma_plus[1]).epsilon(0.02));

  const Trajectory down =
      integrate(sys, eigen_perturbed_init(c, -1e4, 1, 1e-4, false), -std::pow(10.0, 3.75), opt);
  ts.clear();
  qs.clear();
  for (const TowerState& s : down.states) {
    const NuState n = to_nu(c, s);
    const EigenCoords e = eigen_coordinates(c, 1, n.nu[1], n.nudot[0]);
    ts.push_back(s.t);
    qs.push_back(std::abs(e.stable));
  }
  const PowerFit fit_down = exponent_fit(ts, qs);
  CHECK(-fit_down.slope == Catch::Approx(c.sigma_minus[1]).epsilon(0.02));
}

TEST_CASE("power fit recovers synthetic exponents exactly", "[tower]") {
  std::vector<double> t, q;
  for (int i = 0; i < 40; ++i) {
    const double tt = -std::pow(10.0, 4.0 - 0.05 * i);
    t.push_back(tt);
    q.push_back(2.5 * std::pow(-tt, -3.25));
  }
  const PowerFit fit = exponent_fit(t, q);
  CHECK(fit.slope == Catch::Approx(-3.25).margin(1e-10));
}

TEST_CASE("epsilon ladder obeys its constraints", "[tower]") {
  for (int J : {1, 2, 3, 4}) {
    const TowerConstants c = constants(3, J);
    const std::vector<double> eps = default_epsilons(c);
    REQUIRE(static_cast<int>(eps.size()) == J + 1);
    CHECK(eps[0] < 0.5);
    for (std::size_t i = 0; i + 1 < eps.size(); ++i) CHECK(eps[i] > eps[i + 1]);
    if (J >= 2)
      for (int j = 2; j <= J; ++j) CHECK(eps[j] < c.sigma_plus[j - 1]);
    CHECK(eps[1] < 2.0 / (c.k - 2));
    for (double e : eps) CHECK(e > 0);
  }
}

TEST_CASE("manifold initializer pins the outer bubble", "[tower]") {
  const TowerConstants c = constants(3, 3);
  ShootingConfig cfg = resolve_epsilons(c, ShootingConfig{});
  const TowerState s0 = stable_manifold_init(c, cfg, {2e-5, -1e-5});
  CHECK(s0.t == cfg.t0);
  CHECK(s0.lambda[0] == 1.0);
  CHECK(s0.b[0] == 0.0);
  const NuState n = to_nu(c, s0);
  CHECK(n.nu[1] == Catch::Approx(2e-5).epsilon(1e-10));
  CHECK(n.nu[2] == Catch::Approx(-1e-5).epsilon(1e-10));
  // initializer loads the pure unstable direction at each level
  for (int j : {1, 2}) {
    const EigenCoords e = eigen_coordinates(c, j, n.nu[j], n.nudot[j - 1]);
    CHECK(std::abs(e.stable) < 1e-12);
  }
  CHECK_THROWS_AS(stable_manifold_init(c, ShootingConfig{}, {0.0, 0.0}), usage_error);
}

TEST_CASE("classification applies the exit rule", "[tower]") {
  const TowerConstants c = constants(3, 2);
  ShootingConfig cfg = resolve_epsilons(c, ShootingConfig{});
  const OdeSystem sys = make_system(c, default_signs(2), RhsMode::Leading);
  // strongly excited unstable mode leaves the window before T_boot
  const double big = 0.5 * std::pow(1e4, -cfg.eps[2]);
  for (double sgn : {1.0, -1.0}) {
    const ClassifyResult res = classify(sys, cfg, {sgn * big});
    CHECK_FALSE(res.reached);
    CHECK(res.exit.j == 2);
    CHECK(res.exit.sign == (sgn > 0 ? 1 : -1));
    CHECK(res.exit.t > cfg.t0);
    CHECK(res.exit.t < cfg.T_boot);
  }
  // the manifold itself survives
  const ClassifyResult ok = classify(sys, cfg, {0.0});
  CHECK(ok.reached);
  CHECK(ok.window.all_ok());
}

TEST_CASE("shooting lands on the stable manifold", "[tower]") {
  const TowerConstants c = constants(3, 2);
  ShootingConfig cfg;
  cfg.rhs_mode = RhsMode::Leading;
  const ShootResult res = shoot(c, cfg);
  REQUIRE(res.nu0_star.size() == 1);
  CHECK(std::abs(res.nu0_star[0]) < 1e-8);
  CHECK(res.window.all_ok());
  CHECK(res.monotone_ok);
  CHECK(res.classify_calls >= 3);
  REQUIRE_FALSE(res.trajectory.states.empty());
  CHECK(res.trajectory.states.back().t == Catch::Approx(-1e2).margin(1e-6));
}

TEST_CASE("trajectory sampling interpolates stored states", "[tower]") {
  const TowerConstants c = constants(3, 2);
  const OdeSystem sys = make_system(c, default_signs(2), RhsMode::Leading);
  IntegrateOptions opt;
  opt.store = true;
  const Trajectory tr = integrate(sys, exact_solution(c, -1e3), -1e2, opt);
  const TowerState mid = sample_state(tr, -550.0);
  CHECK(mid.t == Catch::Approx(-550.0));
  CHECK(mid.lambda[1] == Catch::Approx(exact_lambda(c, 1, -550.0)).epsilon(1e-6));
}

TEST_CASE("shooting configuration validation", "[tower]") {
  const TowerConstants c = constants(3, 2);
  ShootingConfig bad;
  bad.t0 = -10.0;
  bad.T_boot = -100.0;  // must satisfy t0 < T_boot < 0
  CHECK_THROWS_AS(resolve_epsilons(c, bad), usage_error);
  ShootingConfig order;
  order.eps = {0.1, 0.2, 0.3};  // must decrease
  CHECK_THROWS_AS(resolve_epsilons(c, order), usage_error);
}
