#include "sweep/registry.hpp"

#include <cmath>
#include <numbers>

#include "sweep/errors.hpp"
#include "sweep/oracle.hpp"

namespace sweep {

PolyExpr poly(int nvars, std::vector<std::pair<double, std::vector<int>>> terms) {
  std::vector<Term> t;
  for (auto& [c, e] : terms) t.push_back(Term{c, std::move(e)});
  return PolyExpr(nvars, std::move(t));
}

namespace {

constexpr double kPi = std::numbers::pi;

void audit_into(SweepingProblem& p, const std::vector<PathSample>& path) {
  auto rng = make_rng(20240601, "registry-audit:" + p.name);
  p.constants = audit_constants(p, path, 256, rng).constants;
}

// Worked example: x in R^3, y in R, u in [0, 1], T = pi/2.
SweepingProblem worked_example() {
  const double c = 32.0 / kPi;
  SweepingProblem p;
  p.name = "paper-example-6.1";
  p.n = 3;
  p.l = 1;
  p.m = 1;
  p.T = kPi / 2;
  // variables (t, x1, x2, x3, y, u)
  const int V = 6;
  p.f = {poly(V, {{1, {0, 1, 0, 0, 0, 0}}, {-1, {0, 0, 1, 0, 0, 0}}, {-1, {0, 0, 0, 0, 0, 1}},
                  {1, {0, 0, 0, 0, 2, 0}}}),
         poly(V, {{1, {0, 1, 0, 0, 0, 0}}, {1, {0, 0, 1, 0, 0, 0}}, {1, {0, 0, 0, 0, 0, 1}},
                  {1, {0, 0, 0, 0, 3, 0}}}),
         poly(V, {{1, {0, 0, 0, 1, 0, 0}}, {1, {1, 0, 0, 0, 0, 0}}, {-kPi - 1, {0, 0, 0, 0, 0, 0}}})};
  p.g = {poly(V, {{1, {0, 2, 0, 0, 0, 0}}, {1, {0, 0, 2, 0, 0, 0}}, {-16, {0, 0, 0, 0, 0, 0}},
                  {1, {0, 0, 0, 0, 0, 1}}, {1, {0, 0, 0, 0, 1, 0}}})};
  // generators over (t, x1, x2, x3)
  p.bundle = GeneratorBundle(
      3, {poly(4, {{1, {0, 2, 0, 0}}, {1, {0, 0, 2, 0}}, {c, {0, 0, 0, 1}}, {c, {1, 0, 0, 0}},
                   {-48, {0, 0, 0, 0}}}),
          poly(4, {{1, {0, 2, 0, 0}}, {1, {0, 0, 2, 0}}, {-c, {0, 0, 0, 1}}, {-c, {1, 0, 0, 0}},
                   {16, {0, 0, 0, 0}}})});
  p.U = ControlBox::constant(Vec::Constant(1, 0.0), Vec::Constant(1, 1.0));
  // endpoint variables (x1, x2, x3, y1, x4, x5, x6, y2)
  const int E = 8;
  p.S = {{poly(E, {{1, {2, 0, 0, 0, 0, 0, 0, 0}}, {1, {0, 2, 0, 0, 0, 0, 0, 0}}, {-16, {0, 0, 0, 0, 0, 0, 0, 0}}})},
         {poly(E, {{1, {0, 0, 1, 0, 0, 0, 0, 0}}, {-kPi, {0, 0, 0, 0, 0, 0, 0, 0}}})},
         {poly(E, {{1, {0, 1, 0, 0, 0, 0, 0, 0}}, {1, {0, 0, 0, 0, 0, 0, 2, 0}},
                   {-kPi * kPi / 4, {0, 0, 0, 0, 0, 0, 0, 0}}})},
         {poly(E, {{0.125, {2, 0, 0, 0, 0, 0, 0, 0}}, {1, {0, 0, 0, 0, 1, 0, 0, 0}}, {-2, {0, 0, 0, 0, 0, 0, 0, 0}}})},
         {poly(E, {{1, {0, 0, 0, 1, 0, 0, 0, 0}}, {1, {0, 2, 0, 0, 0, 0, 0, 0}}})}};
  p.J.poly = poly(E, {{-1, {0, 0, 0, 0, 2, 0, 0, 0}}, {-1, {0, 0, 0, 0, 0, 2, 0, 0}},
                      {16, {0, 0, 0, 0, 0, 0, 0, 0}}});
  p.J.abs_terms = {{1.0, poly(E, {{kPi / 2, {0, 0, 0, 0, 0, 0, 0, 0}}, {-1, {0, 0, 0, 0, 0, 0, 1, 0}}})}};
  // Truncation around the known optimal arc; the ball of radius 8.1 contains
  // C(t) entirely (its farthest point from xbar(t) is at distance 8).
  p.truncation.enabled = true;
  p.truncation.center_x = ReferencePath::function(
      3, [](double t) { return Vec((Vec(3) << 4 * std::cos(t), 4 * std::sin(t), kPi - t).finished()); },
      [](double t) { return Vec((Vec(3) << -4 * std::sin(t), 4 * std::cos(t), -1.0).finished()); });
  p.truncation.radius_x = 8.1;
  p.truncation.center_y = ReferencePath::constant(Vec::Zero(1));
  p.truncation.radius_y = 8.2;
  p.x0 = (Vec(3) << 4, 0, kPi).finished();
  p.y0 = Vec::Zero(1);
  p.validate();
  audit_into(p, reference_samples(p, 256));
  return p;
}

SweepingProblem unit_disk_push() {
  SweepingProblem p;
  p.name = "unit-disk-push";
  p.n = 2;
  p.l = 0;
  p.m = 0;
  p.T = 2.0;
  p.f = {poly(3, {{1, {0, 0, 0}}}), PolyExpr(3)};
  p.bundle = GeneratorBundle(2, {poly(3, {{0.5, {0, 2, 0}}, {0.5, {0, 0, 2}}, {-0.5, {0, 0, 0}}})});
  p.U = ControlBox::constant(Vec(), Vec());
  p.J.poly = PolyExpr(4);
  p.x0 = Vec::Zero(2);
  p.y0 = Vec();
  p.validate();
  std::vector<PathSample> path;
  for (int j = 0; j <= 256; ++j) {
    const double t = 2.0 * j / 256;
    path.push_back({t, (Vec(2) << std::min(t, 1.0), 0.0).finished(), Vec()});
  }
  audit_into(p, path);
  return p;
}

SweepingProblem moving_halfplane() {
  SweepingProblem p;
  p.name = "moving-halfplane";
  p.n = 2;
  p.l = 1;
  p.m = 0;
  p.T = 2.0;
  // variables (t, x1, x2, y)
  p.f = {PolyExpr(4), poly(4, {{1, {0, 0, 0, 0}}})};
  p.g = {poly(4, {{1, {0, 1, 0, 0}}})};
  // wall x1 >= t - 1/2
  p.bundle = GeneratorBundle(2, {poly(3, {{1, {1, 0, 0}}, {-1, {0, 1, 0}}, {-0.5, {0, 0, 0}}})});
  p.U = ControlBox::constant(Vec(), Vec());
  p.J.poly = PolyExpr(6);
  p.x0 = Vec::Zero(2);
  p.y0 = Vec::Zero(1);
  p.validate();
  std::vector<PathSample> path;
  for (int j = 0; j <= 256; ++j) {
    const double t = 2.0 * j / 256, s = std::max(0.0, t - 0.5);
    path.push_back({t, (Vec(2) << s, t).finished(), Vec::Constant(1, 0.5 * s * s)});
  }
  audit_into(p, path);
  return p;
}

}  // namespace

std::vector<std::string> registry_names() {
  return {"paper-example-6.1", "unit-disk-push", "moving-halfplane"};
}

SweepingProblem registry_problem(const std::string& name) {
  if (name == "paper-example-6.1") return worked_example();
  if (name == "unit-disk-push") return unit_disk_push();
  if (name == "moving-halfplane") return moving_halfplane();
  throw InputError("unknown built-in problem '" + name + "'");
}

std::optional<std::function<Vec(double)>> registry_exact_state(const std::string& name) {
  if (name == "paper-example-6.1")
    return [](double t) { return Vec((Vec(4) << 4 * std::cos(t), 4 * std::sin(t), kPi - t, 0.0).finished()); };
  if (name == "unit-disk-push")
    return [](double t) { return Vec((Vec(2) << std::min(t, 1.0), 0.0).finished()); };
  if (name == "moving-halfplane")
    return [](double t) {
      const double s = std::max(0.0, t - 0.5);
      return Vec((Vec(3) << s, t, 0.5 * s * s).finished());
    };
  return std::nullopt;
}

Trajectory worked_example_trajectory(int intervals) {
  if (intervals < 1) throw InputError("grid needs at least one interval");
  Trajectory tr;
  tr.limit = true;
  tr.diag.integrator = "closed-form";
  const double T = kPi / 2;
  for (int j = 0; j <= intervals; ++j) {
    const double t = T * j / intervals;
    tr.t.push_back(t);
    tr.x.push_back((Vec(3) << 4 * std::cos(t), 4 * std::sin(t), kPi - t).finished());
    tr.y.push_back(Vec::Zero(1));
    tr.xi.push_back((Vec(3) << 0.25, 0.25, 0.0).finished());
    tr.zeta.push_back(0.0);
    if (j < intervals) tr.u.push_back(Vec::Zero(1));
  }
  tr.t.back() = T;
  return tr;
}

PmpCertificate worked_example_certificate(int intervals) {
  const double A = 1.0 / (2 * kPi + std::sqrt(1.0 + 256.0 * kPi * kPi));
  const double T = kPi / 2;
  PmpCertificate c;
  c.lambda = 2 * kPi * A;
  for (int j = 0; j <= intervals; ++j) {
    const double t = T * j / intervals;
    c.t.push_back(t);
    c.q.push_back((Vec(3) << A * std::sin(t), -A * std::cos(t), 0.0).finished());
    c.v.push_back(Vec::Zero(1));
    c.xi.push_back((Vec(2) << 0.25, 0.25).finished());
  }
  c.t.back() = T;
  // both generators carry an atom of mass A pi at T; their gradients there
  // are (0, 8, +-32/pi), so q jumps by (0, 16 A pi, 0)
  c.q_jumps.push_back({T, (Vec(3) << 0.0, 16 * A * kPi, 0.0).finished()});
  c.nu_density.assign(2, std::vector<double>(intervals + 1, 0.0));
  c.nu_atoms = {{{T, A * kPi}}, {{T, A * kPi}}};
  return c;
}

}  // namespace sweep
