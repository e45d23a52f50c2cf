// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "sweep/errors.hpp"
#include "sweep/optimizer.hpp"
#include "sweep/oracle.hpp"
#include "sweep/registry.hpp"

using namespace sweep;

namespace {

constexpr double kPi = std::numbers::pi;
const double A = 1.0 / (2 * kPi + std::sqrt(1.0 + 256.0 * kPi * kPi));
// Consecutive-rung tolerance of the ladders. The worked example's residuals
// shrink about 8x per decade of gamma (0.215, 0.028, 0.0036 from 1e2 to 1e5),
// so 5e-3 is the tightest round value met by the top pair (1e4, 1e5).
constexpr double kLadderTol = 5e-3;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double exact_error(const Trajectory& tr, const std::function<Vec(double)>& exact) {
  double e = 0.0;
  for (int j = 0; j < tr.nodes(); ++j) {
    Vec z(tr.x[j].size() + tr.y[j].size());
    z << tr.x[j], tr.y[j];
    e = std::max(e, (z - exact(tr.t[j])).lpNorm<Eigen::Infinity>());
  }
  return e;
}

double two_sided(const Trajectory& a, const Trajectory& b) {
  return std::max(sup_distance(a, b), sup_distance(b, a));
}

// Linear interpolation of xi^i at time s.
double xi_at(const Trajectory& tr, int i, double s) {
  int j = 0;
  while (j + 2 < tr.nodes() && tr.t[j + 1] < s) ++j;
  const double w = (s - tr.t[j]) / (tr.t[j + 1] - tr.t[j]);
  return (1 - w) * tr.xi[j][i] + w * tr.xi[j + 1][i];
}

// ------------------------------------------------------------------ 1, 2

struct ExampleSolve {
  SweepResult result;
  double seconds = 0.0;
};

const ExampleSolve& example_solve() {
  static const ExampleSolve e = [] {
    ExampleSolve out;
    const auto t0 = std::chrono::steady_clock::now();
    const auto p = registry_problem("paper-example-6.1");
    const auto s = make_schedule(p, geometric_ladder(1e2, 1e5, 10));
    out.result = solve_sweeping(p, ControlSignal::constant(p.T, Vec::Zero(1)), *p.x0, *p.y0, s, kLadderTol,
                                GridSpec{1000});
    out.seconds = seconds_since(t0);
    return out;
  }();
  return e;
}

Outcome criterion1() {
  const auto& e = example_solve();
  const double err = exact_error(e.result.traj, *registry_exact_state("paper-example-6.1"));
  const bool to_top = e.result.traj.gamma >= 1e5 * (1 - 1e-9);
  return {err <= 1e-2 && e.seconds <= 60 && to_top,
          fmt("ladder reached gamma=%.0e, sup-distance %.3e (<= 1e-2), %.1f s (<= 60 s)", e.result.traj.gamma, err,
              e.seconds)};
}

Outcome criterion2() {
  const auto& tr = example_solve().result.traj;
  double worst = 0.0;
  for (double t : {0.3, 0.8, 1.3})
    for (int i = 0; i < 2; ++i) worst = std::max(worst, std::abs(xi_at(tr, i, t) - 0.25));
  return {worst <= 0.02, fmt("max |xi - 1/4| at t in {0.3,0.8,1.3}: %.3e (<= 0.02)", worst)};
}

// ------------------------------------------------------------------ 3, 10

struct Example {
  SweepingProblem p = registry_problem("paper-example-6.1");
  Trajectory tr = worked_example_trajectory(1000);
  PmpCertificate c = worked_example_certificate(1000);
};

Outcome criterion3() {
  const auto t0 = std::chrono::steady_clock::now();
  const Example e;
  const auto r = check_pmp(e.c, e.p, e.tr);
  const double secs = seconds_since(t0);
  double worst = 0.0;
  for (const auto& c : r.conditions) worst = std::max(worst, c.residual);
  const double nt = r["nontriviality"].residual;
  return {r.all_pass() && worst <= 1e-6 && nt <= 1e-12 && secs <= 5,
          fmt("all seven pass: %s, max residual %.3e (<= 1e-6), nontriviality %.3e (<= 1e-12), %.2f s (<= 5 s)",
              r.all_pass() ? "yes" : "no", worst, nt, secs)};
}

Outcome criterion10() {
  const Example e;
  auto rng = make_rng(2024, "certificate-sensitivity");
  std::uniform_real_distribution<double> U(0, 1);
  std::normal_distribution<double> N(0, 1);
  const char* names[] = {"lambda", "q", "v", "xi", "nu density", "atom weight", "q jump"};
  int failed_ok = 0;
  double worst_ratio = INFINITY;
  std::string worst_field;
  for (int k = 0; k < 20; ++k) {
    const double eps = std::pow(10.0, -3 + 2 * U(rng));
    const int field = k % 7;
    const int i = U(rng) < 0.5 ? 0 : 1;
    Vec d = Vec::NullaryExpr(3, [&] { return N(rng); });
    d.normalize();
    const double sign = U(rng) < 0.5 ? -1.0 : 1.0;
    PmpCertificate c = e.c;
    switch (field) {
      case 0: c.lambda += sign * eps; break;
      case 1: for (auto& q : c.q) q += eps * d; break;
      case 2: for (auto& v : c.v) v[0] += sign * eps; break;
      case 3: for (auto& x : c.xi) x[i] += eps; break;
      case 4: for (auto& w : c.nu_density[i]) w += eps; break;
      case 5: c.nu_atoms[i][0].weight += eps; break;
      case 6: c.q_jumps[0].jump += eps * d; break;
    }
    const auto r = check_pmp(c, e.p, e.tr);
    double best = 0.0;
    for (const auto& cond : r.conditions)
      if (!cond.pass) best = std::max(best, cond.residual);
    if (best >= eps / 10) ++failed_ok;
    if (best / eps < worst_ratio) {
      worst_ratio = best / eps;
      worst_field = names[field];
    }
  }
  return {failed_ok == 20, fmt("%d/20 perturbations fail a check with residual >= eps/10; "
                               "smallest residual/eps %.3f (%s)",
                               failed_ok, worst_ratio, worst_field.c_str())};
}

// ------------------------------------------------------------------ 4

Outcome criterion4() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto p = registry_problem("paper-example-6.1");
  TranscriptionConfig cfg;  // N = 16, 8 starts, seed 7
  const auto r = optimize(p, cfg);
  const double secs = seconds_since(t0);
  const double viol = std::max(r.best.violation, r.best.start_distance);
  return {r.best.cost <= 1e-2 && viol <= 1e-4 && secs <= 600,
          fmt("cost %.3e (<= 1e-2), S-violation %.3e (<= 1e-4), %.0f s (<= 600 s), x(T)=(%.3f, %.3f, %.3f)",
              r.best.cost, viol, secs, r.traj.x.back()[0], r.traj.x.back()[1], r.traj.x.back()[2])};
}

// ------------------------------------------------------------------ 5

Outcome criterion5() {
  auto rng = make_rng(5, "schedule-identity");
  std::uniform_real_distribution<double> U(0, 1);
  double worst = 0.0;
  int rejected = 0;
  for (int k = 0; k < 100; ++k) {
    const double eta = std::pow(10.0, -1 + 2 * U(rng));
    const double mu = std::pow(10.0, -1 + 3 * U(rng));
    const double thr = 2 * mu * std::numbers::e / (eta * eta);
    const double gamma = thr * std::pow(10.0, 1e-3 + 4 * U(rng));
    const auto s = make_schedule({gamma}, eta, mu, 1.0, 2);
    const double target = 2 * mu / (eta * eta);
    worst = std::max(worst, std::abs(gamma * std::exp(-gamma * s.alphas[0]) - target) / target);
    try {
      make_schedule({s.threshold()}, eta, mu, 1.0, 2);
    } catch (const InputError&) {
      ++rejected;
    }
  }
  return {worst <= 1e-12 && rejected == 100,
          fmt("max relative identity error %.2e (<= 1e-12); threshold rejected %d/100", worst, rejected)};
}

// ------------------------------------------------------------------ 6

// Ball of radius R moving with velocity w, cut by a moving half-space with
// unit normal a; affine drift.
SweepingProblem random_problem(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> U(-1, 1);
  std::normal_distribution<double> N(0, 1);
  const int V = 1 + n;
  auto mono = [&](double c, int t_exp, int var, int e) {
    std::vector<int> ex(V, 0);
    ex[0] = t_exp;
    if (var >= 0) ex[1 + var] += e;
    return Term{c, ex};
  };
  const double R = 1.0 + 0.5 * U(rng);
  Vec w = 0.5 * Vec::NullaryExpr(n, [&] { return U(rng); });
  Vec a = Vec::NullaryExpr(n, [&] { return N(rng); });
  a.normalize();
  const double b = 0.3 * R * U(rng);
  std::vector<Term> ball{mono(0.5 * (w.squaredNorm()), 2, -1, 0), mono(-0.5 * R * R, 0, -1, 0)};
  std::vector<Term> half{mono(-b, 0, -1, 0), mono(-a.dot(w), 1, -1, 0)};
  for (int j = 0; j < n; ++j) {
    ball.push_back(mono(0.5, 0, j, 2));
    ball.push_back(mono(-w[j], 1, j, 1));
    half.push_back(mono(a[j], 0, j, 1));
  }
  SweepingProblem p;
  p.name = "random";
  p.n = n;
  p.T = 1.0;
  p.bundle = GeneratorBundle(n, {PolyExpr(V, ball), PolyExpr(V, half)});
  // constant drift toward the half-space plus a random part, so that every
  // path reaches the boundary before T
  const Vec d = 3.0 * a + 0.5 * Vec::NullaryExpr(n, [&] { return N(rng); });
  for (int j = 0; j < n; ++j) {
    std::vector<Term> fj{mono(d[j], 0, -1, 0)};
    for (int k = 0; k < n; ++k) fj.push_back(mono(0.3 * U(rng), 0, k, 1));
    p.f.push_back(PolyExpr(V, fj));
  }
  p.U = ControlBox::constant(Vec(), Vec());
  p.J.poly = PolyExpr(2 * n);
  p.x0 = (std::min(b, 0.0) - 0.3 * R) * a;
  p.y0 = Vec();
  p.validate();
  return p;
}

Outcome criterion6() {
  auto rng = make_rng(6, "invariance-suite");
  int problems = 0, runs = 0, sigma_bad = 0, xi_bad = 0, speed_bad = 0;
  double worst_sigma = 0, worst_xi = 0, worst_speed = 0;
  while (problems < 50) {
    const int n = 2 + problems % 2;
    SweepingProblem p = random_problem(n, rng);
    const ControlSignal u = ControlSignal::constant(p.T, Vec());
    const Trajectory path = catch_up(p, u, *p.x0, Vec(), 1e-3);
    auto arng = make_rng(7, "invariance-audit:" + std::to_string(problems));
    p.constants = audit_constants(p, trajectory_samples(path, 256), 256, arng).constants;
    ++problems;
    // three decades starting at the first power of ten above the problem's threshold
    const auto& c = *p.constants;
    const double thr = 2 * c.mu_bar * std::exp(1.0) / (c.eta_bar * c.eta_bar);
    const double g0 = std::pow(10.0, std::floor(std::log10(thr)) + 1);
    const auto s = make_schedule(p, {g0, 10 * g0, 100 * g0});
    for (int k = 0; k < s.size(); ++k) {
      const Vec x0 = interior_start(p, s, k, *p.x0);
      const Trajectory tr = integrate_penalized(p, s.gammas[k], s.alphas[k], u, x0, Vec(), GridSpec{200});
      const auto rep = invariance_report(p, tr, s, k);
      ++runs;
      worst_sigma = std::max(worst_sigma, rep.max_sigma_ratio);
      worst_xi = std::max(worst_xi, rep.max_xi_sum / rep.multiplier_bound);
      worst_speed = std::max(worst_speed, rep.max_speed / rep.speed_bound);
      sigma_bad += !rep.sigma_ok;
      xi_bad += rep.max_xi_sum > 1.05 * rep.multiplier_bound;
      speed_bad += rep.max_speed > 1.05 * rep.speed_bound;
    }
  }
  return {sigma_bad == 0 && xi_bad == 0 && speed_bad == 0,
          fmt("%d problems, %d runs; max Sigma/e^{-gamma alpha} %.6f, max xi-sum/bound %.3f, "
              "max speed/bound %.3f; breaches sigma %d, xi %d, speed %d",
              problems, runs, worst_sigma, worst_xi, worst_speed, sigma_bad, xi_bad, speed_bad)};
}

// ------------------------------------------------------------------ 7

Outcome criterion7() {
  const double tol = kLadderTol;
  const double bound = std::max(5e-3, 3 * tol);
  double worst = 0.0, disk_err = 0.0;
  std::string detail;
  for (const auto& name : registry_names()) {
    const auto p = registry_problem(name);
    const ControlSignal u = ControlSignal::constant(p.T, p.U.clamp(0.0, Vec::Zero(p.m)));
    const Vec y0 = p.y0 ? *p.y0 : Vec::Zero(p.l);
    const Trajectory oracle = catch_up_extrapolated(p, u, *p.x0, y0, 1e-3);
    Trajectory limit;
    if (name == "paper-example-6.1") {
      limit = example_solve().result.traj;
    } else {
      const auto s = make_schedule(p, geometric_ladder(1e2, 1e5, 10));
      limit = solve_sweeping(p, u, *p.x0, y0, s, tol, GridSpec{1000}).traj;
    }
    const double d = two_sided(oracle, limit);
    worst = std::max(worst, d);
    detail += fmt("%s %.2e; ", name.c_str(), d);
    if (name == "unit-disk-push")
      disk_err = std::max(exact_error(oracle, *registry_exact_state(name)),
                          exact_error(limit, *registry_exact_state(name)));
  }
  return {worst <= bound && disk_err <= 5e-3,
          fmt("catch-up vs ladder: %smax %.2e (<= %.1e); disk closed-form error %.2e (<= 5e-3)", detail.c_str(),
              worst, bound, disk_err)};
}

// ------------------------------------------------------------------ 8

Outcome criterion8() {
  const auto p = registry_problem("paper-example-6.1");
  const double s = 0.5 * prox_constant(p.constants->eta_bar, p.constants->L_psi);
  auto rng = make_rng(8, "prox-regularity");
  std::uniform_real_distribution<double> T(0, p.T), U(0, 1);
  const Box box{(Vec(3) << -7, -7, -3).finished(), (Vec(3) << 7, 7, 9).finished()};
  int tested = 0, corners = 0;
  double worst = 0.0;
  while (tested < 200) {
    const double t = T(rng);
    const Vec z = box.sample(rng);
    const auto pr = project(p.bundle, p.trunc(), t, z);
    if (pr.distance < 1e-3) continue;  // need a boundary point
    const Vec x = pr.point;
    const auto basis = normal_cone_basis(p.bundle, p.trunc(), t, x, 1e-7);
    if (basis.empty()) continue;
    Vec n = Vec::Zero(3);
    for (const auto& g : basis) n += U(rng) * g / g.norm();
    if (n.norm() < 1e-6) continue;
    n.normalize();
    corners += basis.size() > 1;
    const auto back = project(p.bundle, p.trunc(), t, x + s * n);
    worst = std::max(worst, (back.point - x).norm());
    ++tested;
  }
  return {worst <= 1e-6,
          fmt("s = %.4f, 200 boundary points (%d on the corner curve), max |project(x+s n) - x| %.2e (<= 1e-6)", s,
              corners, worst)};
}

// ------------------------------------------------------------------ 9

Outcome criterion9() {
  const auto p = registry_problem("paper-example-6.1");
  const std::vector<double> gammas{1e1, 1e2, 1e3, 1e4};
  const Box box{(Vec(3) << -6, -6, -2).finished(), (Vec(3) << 6, 6, 7).finished()};
  bool ok = true;
  std::string detail;
  for (double t : {0.0, 0.4, 0.8, 1.2, p.T}) {
    SetSlice base(p.bundle, p.trunc(), t);
    SampledSet C{[&](const Vec& z) {
                   for (int i = 0; i < base.count(); ++i)
                     if (base.value(i, z) > 0) return false;
                   return true;
                 },
                 [&](const Vec& z) { return project(base, z).point; }};
    double prev = INFINITY;
    detail += fmt("t=%.2f:", t);
    for (double g : gammas) {
      PenaltySlice pen(base, g);
      SampledSet Cg{[&](const Vec& z) { return pen.value(0, z) <= 0; },
                    [&](const Vec& z) { return project(pen, z).point; }};
      auto rng = make_rng(9, "hausdorff:" + std::to_string(t));
      const double h = hausdorff_sample(C, Cg, box, 400, rng);
      ok = ok && h < prev;
      prev = h;
      detail += fmt(" %.2e", h);
    }
    detail += "; ";
  }
  return {ok, "excess along gamma 1e1..1e4 " + detail};
}

}  // namespace

// Optional arguments select criteria by number; default is all of them.
int main(int argc, char** argv) {
  const std::pair<int, std::function<Outcome()>> criteria[] = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
