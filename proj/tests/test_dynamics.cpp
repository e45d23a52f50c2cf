#include <cmath>
#include <numbers>

#include "doctest.h"
#include "sweep/errors.hpp"
#include "sweep/oracle.hpp"
#include "sweep/registry.hpp"

using namespace sweep;

namespace {

constexpr double kPi = std::numbers::pi;

Vec v2(double a, double b) { return (Vec(2) << a, b).finished(); }
Vec v3(double a, double b, double c) { return (Vec(3) << a, b, c).finished(); }

// Unit disk with constant drift f = (a, b).
SweepingProblem disk(double a, double b) {
  SweepingProblem p = registry_problem("unit-disk-push");
  p.f = {poly(3, {{a, {0, 0, 0}}}), poly(3, {{b, {0, 0, 0}}})};
  return p;
}

double max_state_error(const Trajectory& tr, const std::function<Vec(double)>& exact) {
  double e = 0.0;
  for (int j = 0; j < tr.nodes(); ++j) {
    Vec z(tr.x[j].size() + tr.y[j].size());
    z << tr.x[j], tr.y[j];
    e = std::max(e, (z - exact(tr.t[j])).lpNorm<Eigen::Infinity>());
  }
  return e;
}

}  // namespace

TEST_CASE("schedule closed form and admissibility threshold") {
  const auto s = make_schedule({100.0}, 1.0, 2.0, 1.0, 2);
  CHECK(s.alphas[0] == doctest::Approx(std::log(25.0) / 100).epsilon(1e-14));
  CHECK(100 * std::exp(-100 * s.alphas[0]) == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(s.threshold() == doctest::Approx(4 * std::numbers::e));
  CHECK_THROWS_AS(make_schedule({4 * std::numbers::e}, 1.0, 2.0, 1.0, 2), InputError);
  CHECK_THROWS_AS(make_schedule({100.0, 50.0}, 1.0, 2.0, 1.0, 2), InputError);
  CHECK_THROWS_AS(make_schedule({100.0}, 0.0, 2.0, 1.0, 2), InputError);
  try {
    make_schedule({10.0}, 1.0, 2.0, 1.0, 2);
    FAIL("expected the threshold error");
  } catch (const InputError& e) {
    CHECK(std::string(e.what()).find("10.873") != std::string::npos);
  }
}

TEST_CASE("schedule of the worked example: rhos increase toward the y radius") {
  const auto p = registry_problem("paper-example-6.1");
  const auto s = make_schedule(p, {1e2, 1e3, 1e4});
  REQUIRE(s.rhos.size() == 3);
  CHECK(s.rhos[0] < s.rhos[1]);
  CHECK(s.rhos[1] < s.rhos[2]);
  CHECK(s.rhos[2] < p.truncation.radius_y);
  CHECK(s.sigmas[0] > s.sigmas[1]);
  CHECK(s.alphas[0] > s.alphas[2]);
}

TEST_CASE("geometric ladder") {
  const auto l = geometric_ladder(1e2, 1e5, 10);
  REQUIRE(l.size() == 4);
  CHECK(l.back() == doctest::Approx(1e5));
  CHECK_THROWS_AS(geometric_ladder(1, 10, 1), InputError);
}

TEST_CASE("interior start") {
  const auto p = registry_problem("paper-example-6.1");
  const auto s = make_schedule(p, {1e2, 1e3, 1e4});
  for (int k = 0; k < 3; ++k) {
    const Vec x = interior_start(p, s, k, v3(4, 0, kPi));
    CHECK((x - v3(4 - s.sigmas[k], 0, kPi)).norm() < 1e-12);
  }
  const Vec deep = v3(0.5, 0.5, kPi);
  CHECK((interior_start(p, s, 2, deep) - deep).norm() == 0.0);
  CHECK_THROWS_AS(interior_start(p, s, 0, v3(9, 0, kPi)), InfeasiblePoint);

  const auto d = registry_problem("unit-disk-push");
  const auto sd = make_schedule(d, {1e2, 1e3});
  CHECK((interior_start(d, sd, 1, v2(1, 0)) - v2(1 - sd.sigmas[1], 0)).norm() < 1e-12);
}

TEST_CASE("disk pushed by a constant drift: free motion, then rest on the boundary") {
  const auto p = registry_problem("unit-disk-push");
  const auto s = make_schedule(p, {1e4});
  const Vec x0 = interior_start(p, s, 0, Vec::Zero(2));
  const auto tr = integrate_penalized(p, 1e4, s.alphas[0], ControlSignal::constant(2, Vec()), x0,
                                      Vec(), GridSpec{400});
  CHECK(max_state_error(tr, *registry_exact_state("unit-disk-push")) <= 5e-3);
  CHECK_FALSE(tr.diag.invariance_flag);
  // xi on the boundary balances the drift: xi * |grad psi| = 1
  CHECK(tr.xi.back()[0] == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("zero drift from an interior start stays put") {
  const auto p = disk(0, 0);
  const Vec x0 = v2(0.2, -0.3);
  const auto tr = integrate_penalized(p, 1e3, 0.0, ControlSignal::constant(2, Vec()), x0, Vec(), GridSpec{50});
  for (const auto& x : tr.x) CHECK((x - x0).norm() < 1e-8);
}

TEST_CASE("worked example at gamma = 1e4 follows the optimal arc") {
  const auto p = registry_problem("paper-example-6.1");
  const auto s = make_schedule(p, {1e4});
  const Vec x0 = interior_start(p, s, 0, *p.x0);
  const auto tr = integrate_penalized(p, 1e4, s.alphas[0], ControlSignal::constant(p.T, Vec::Zero(1)), x0,
                                      Vec::Zero(1), GridSpec{200});
  CHECK(max_state_error(tr, *registry_exact_state("paper-example-6.1")) <= 1e-2);
  const auto rep = invariance_report(p, tr, s, 0);
  CHECK(rep.sigma_ok);
  CHECK(rep.multiplier_ok);
  CHECK(rep.max_xi_sum == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("a start outside the inner set is flagged") {
  const auto p = registry_problem("unit-disk-push");
  const auto s = make_schedule(p, {1e3});
  const auto tr = integrate_penalized(p, 1e3, s.alphas[0], ControlSignal::constant(2, Vec()), v2(1, 0),
                                      Vec(), GridSpec{100});
  const auto rep = invariance_report(p, tr, s, 0);
  CHECK(rep.initial_sigma_ratio > 1.0);
  CHECK_FALSE(rep.sigma_ok);
  CHECK(rep.first_violation == 0);
  CHECK(tr.diag.invariance_flag);
}

TEST_CASE("ladder on the disk converges to the closed form") {
  const auto p = registry_problem("unit-disk-push");
  const auto s = make_schedule(p, geometric_ladder(1e2, 1e5, 10));
  const auto r = solve_sweeping(p, ControlSignal::constant(2, Vec()), Vec::Zero(2), Vec(), s, 1e-3, GridSpec{400});
  CHECK(r.converged);
  CHECK(max_state_error(r.traj, *registry_exact_state("unit-disk-push")) <= 2e-3);
  for (const auto& inv : r.invariance) CHECK(inv.sigma_ok);

  SUBCASE("complementarity: no multiplier away from the boundary") {
    for (int j = 0; j < r.traj.nodes(); ++j)
      if (p.bundle.value(0, r.traj.t[j], r.traj.x[j]) < -0.01) CHECK(r.traj.xi[j][0] < 1e-3);
  }
  SUBCASE("difference quotients respect the uniform Lipschitz bound") {
    const auto& c = *p.constants;
    const double bound = c.M_h + 2 * c.mu_bar / (c.eta_bar * c.eta_bar) * c.L_bar;
    for (int j = 0; j + 1 < r.traj.nodes(); ++j) {
      const double q = (r.traj.x[j + 1] - r.traj.x[j]).norm() / (r.traj.t[j + 1] - r.traj.t[j]);
      CHECK(q <= 1.05 * bound);
    }
  }
}

TEST_CASE("an exhausted ladder reports its residuals") {
  const auto p = registry_problem("unit-disk-push");
  const auto s = make_schedule(p, {1e2, 1e3});
  try {
    solve_sweeping(p, ControlSignal::constant(2, Vec()), Vec::Zero(2), Vec(), s, 1e-9, GridSpec{50});
    FAIL("expected a numerical error");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("residuals") != std::string::npos);
  }
}

TEST_CASE("zero drift interior start converges at the first comparison") {
  const auto p = disk(0, 0);
  const auto s = make_schedule(p, {1e2, 1e3, 1e4});
  const auto r = solve_sweeping(p, ControlSignal::constant(2, Vec()), v2(0.1, 0.1), Vec(), s, 1e-6, GridSpec{20});
  CHECK(r.converged_rung == 1);
}

TEST_CASE("two-start contraction on the disk") {
  const auto p = registry_problem("unit-disk-push");
  const auto& c = *p.constants;
  const auto s = make_schedule(p, {1e4});
  const Vec a = v2(0.0, 0.0), b = v2(-0.1, 0.2);
  const double d = (a - b).norm();
  const auto u = ControlSignal::constant(2, Vec());
  const auto ta = integrate_penalized(p, 1e4, s.alphas[0], u, a, Vec(), GridSpec{200});
  const auto tb = integrate_penalized(p, 1e4, s.alphas[0], u, b, Vec(), GridSpec{200});
  // kappa: drift Lipschitz (0 here) plus the penalty's monotonicity defect.
  const double kappa = 2 * c.mu_bar / (c.eta_bar * c.eta_bar) * c.L_psi;
  for (int j = 0; j < ta.nodes(); ++j)
    CHECK((ta.x[j] - tb.x[j]).norm() <= d * std::exp(2 * kappa * ta.t[j]) + 1e-6);
}

TEST_CASE("multipliers from the active set") {
  const auto p = registry_problem("paper-example-6.1");
  for (double t : {0.3, 0.8, 1.3}) {
    const auto m = multipliers_from_activeset(p, t, v3(4 * std::cos(t), 4 * std::sin(t), kPi - t),
                                              Vec::Zero(1), Vec::Zero(1));
    REQUIRE(m.lambda.size() == 2);
    CHECK(m.lambda[0] == doctest::Approx(0.25).epsilon(1e-9));
    CHECK(m.lambda[1] == doctest::Approx(0.25).epsilon(1e-9));
  }
  CHECK(multipliers_from_activeset(p, 0.0, v3(0, 0, kPi), Vec::Zero(1), Vec::Zero(1)).lambda.size() == 0);

  const auto d = registry_problem("unit-disk-push");
  const auto m = multipliers_from_activeset(d, 0.5, v2(1, 0), Vec(), Vec());
  REQUIRE(m.lambda.size() == 1);
  CHECK(m.lambda[0] == doctest::Approx(1.0));
}

TEST_CASE("multiplier consistency along the worked-example ladder") {
  const auto p = registry_problem("paper-example-6.1");
  const auto s = make_schedule(p, {1e3, 1e4});
  const auto u = ControlSignal::constant(p.T, Vec::Zero(1));
  const auto r = solve_sweeping(p, u, *p.x0, Vec::Zero(1), s, 5e-2, GridSpec{200});
  REQUIRE(r.converged);
  for (double t : {0.3, 0.8, 1.3}) {
    const int j = static_cast<int>(std::lround(t / p.T * 200));
    const double tj = r.traj.t[j];
    const auto m = multipliers_from_activeset(p, tj, v3(4 * std::cos(tj), 4 * std::sin(tj), kPi - tj),
                                              Vec::Zero(1), Vec::Zero(1));
    CHECK(std::abs(r.traj.xi[j][0] - m.lambda[0]) <= 0.02);
    CHECK(std::abs(r.traj.xi[j][1] - m.lambda[1]) <= 0.02);
  }
}

TEST_CASE("property: invariance on random two-generator problems") {
  // Unit disk moving with velocity w, cut by a half-plane moving with it; constant
  // drift of speed 2 in a random direction, so the point reaches the boundary
  // (relative speed >= 2 - |w| > 1.2, distance <= 1.5, T = 1.5).
  auto rng = make_rng(21, "dynamics-invariance");
  std::uniform_real_distribution<double> U(-1, 1);
  int checked = 0;
  for (int trial = 0; trial < 10; ++trial) {
    SweepingProblem p;
    p.name = "random";
    p.n = 2;
    p.T = 1.5;
    const double w1 = 0.5 * U(rng), w2 = 0.5 * U(rng), cut = 0.3 * U(rng);
    // 1/2 (|x - w t|^2 - 1) over (t, x1, x2)
    PolyExpr ball = poly(3, {{0.5, {0, 2, 0}}, {0.5, {0, 0, 2}}, {-w1, {1, 1, 0}}, {-w2, {1, 0, 1}},
                             {0.5 * (w1 * w1 + w2 * w2), {2, 0, 0}}, {-0.5, {0, 0, 0}}});
    PolyExpr half = poly(3, {{1.0, {0, 1, 0}}, {-cut, {0, 0, 0}}, {-w1, {1, 0, 0}}});
    p.bundle = GeneratorBundle(2, {ball, half});
    const double th = std::numbers::pi * U(rng);
    p.f = {poly(3, {{2 * std::cos(th), {0, 0, 0}}}), poly(3, {{2 * std::sin(th), {0, 0, 0}}})};
    p.U = ControlBox::constant(Vec(), Vec());
    p.J.poly = PolyExpr(4);
    p.x0 = v2(std::min(cut, 0.0) - 0.2, 0.0);
    p.y0 = Vec();
    const auto oracle = catch_up(p, ControlSignal::constant(p.T, Vec()), *p.x0, Vec(), 1e-3);
    auto arng = make_rng(22, "audit");
    p.constants = audit_constants(p, trajectory_samples(oracle, 128), 128, arng).constants;
    const auto s = make_schedule(p, {1e3, 1e4});
    for (int k = 0; k < 2; ++k) {
      const Vec x0 = interior_start(p, s, k, *p.x0);
      const auto tr = integrate_penalized(p, s.gammas[k], s.alphas[k], ControlSignal::constant(p.T, Vec()),
                                          x0, Vec(), GridSpec{100});
      const auto rep = invariance_report(p, tr, s, k);
      CHECK(rep.sigma_ok);
      ++checked;
    }
  }
  CHECK(checked == 20);
}
