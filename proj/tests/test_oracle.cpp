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

double max_state_error(const Trajectory& tr, const std::function<Vec(double)>& exact) {
  double e = 0.0;
  for (int j = 0; j < tr.nodes(); ++j) {
    Vec z(tr.x[j].size() + tr.y[j].size());
    z << tr.x[j], tr.y[j];
    e = std::max(e, (z - exact(tr.t[j])).lpNorm<Eigen::Infinity>());
  }
  return e;
}

// Axis-aligned box [lo, hi] as a sampled set.
SampledSet box_set(const Vec& lo, const Vec& hi) {
  return {[=](const Vec& z) { return (z.array() >= lo.array()).all() && (z.array() <= hi.array()).all(); },
          [=](const Vec& z) { return Vec(z.cwiseMax(lo).cwiseMin(hi)); }};
}

}  // namespace

TEST_CASE("projection examples") {
  const auto d = registry_problem("unit-disk-push");
  const auto r = project(d.bundle, nullptr, 0.0, v2(2, 0));
  CHECK((r.point - v2(1, 0)).norm() < 1e-10);
  CHECK(r.distance == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(r.multipliers[0] > 0);

  const auto p = registry_problem("paper-example-6.1");
  const auto e = project(p.bundle, p.trunc(), 0.0, v3(5, 0, kPi));
  CHECK((e.point - v3(4, 0, kPi)).norm() < 1e-8);
  CHECK(e.distance == doctest::Approx(1.0).epsilon(1e-8));

  const Vec in = v3(1, 1, kPi);
  const auto f = project(p.bundle, p.trunc(), 0.0, in);
  CHECK((f.point - in).norm() == 0.0);
  CHECK(f.distance == 0.0);
}

TEST_CASE("property: projection is idempotent and lands in the set") {
  const auto p = registry_problem("paper-example-6.1");
  auto rng = make_rng(4, "idempotence");
  const Box box{v3(-7, -7, -2), v3(7, 7, 8)};
  std::uniform_real_distribution<double> T(0, kPi / 2);
  for (int k = 0; k < 200; ++k) {
    const double t = T(rng);
    const Vec z = box.sample(rng);
    const auto a = project(p.bundle, p.trunc(), t, z);
    const auto b = project(p.bundle, p.trunc(), t, a.point);
    CHECK((a.point - b.point).norm() <= 1e-8);
    SetSlice s(p.bundle, p.trunc(), t);
    for (int i = 0; i < s.count(); ++i) CHECK(s.value(i, a.point) <= 1e-8);
  }
}

TEST_CASE("catch-up on the disk matches the closed form") {
  const auto d = registry_problem("unit-disk-push");
  const auto tr = catch_up(d, ControlSignal::constant(2, Vec()), Vec::Zero(2), Vec(), 1e-3);
  CHECK(max_state_error(tr, *registry_exact_state("unit-disk-push")) <= 5e-3);
  CHECK(tr.xi.back()[0] == doctest::Approx(1.0).epsilon(1e-2));
}

TEST_CASE("catch-up with zero drift from an interior start is constant") {
  auto d = registry_problem("unit-disk-push");
  d.f = {PolyExpr(3), PolyExpr(3)};
  const Vec x0 = v2(0.3, 0.1);
  const auto tr = catch_up(d, ControlSignal::constant(2, Vec()), x0, Vec(), 1e-2);
  for (const auto& x : tr.x) CHECK((x - x0).norm() == 0.0);
}

TEST_CASE("catch-up on the worked example follows the optimal arc") {
  const auto p = registry_problem("paper-example-6.1");
  const auto tr = catch_up(p, ControlSignal::constant(p.T, Vec::Zero(1)), *p.x0, Vec::Zero(1), 1e-3);
  CHECK(max_state_error(tr, *registry_exact_state("paper-example-6.1")) <= 1e-2);
  const auto ex = catch_up_extrapolated(p, ControlSignal::constant(p.T, Vec::Zero(1)), *p.x0, Vec::Zero(1), 1e-3);
  CHECK(max_state_error(ex, *registry_exact_state("paper-example-6.1")) <= 1e-2);
}

TEST_CASE("catch-up of the moving half-plane") {
  const auto p = registry_problem("moving-halfplane");
  const auto tr = catch_up_extrapolated(p, ControlSignal::constant(p.T, Vec()), *p.x0, *p.y0, 1e-3);
  CHECK(max_state_error(tr, *registry_exact_state("moving-halfplane")) <= 5e-3);
}

TEST_CASE("sampled Hausdorff excess") {
  auto rng = make_rng(2, "hausdorff");
  const Box box{v2(-1, -1), v2(3, 2)};
  const auto A = box_set(v2(0, 0), v2(1, 1));
  CHECK(hausdorff_sample(A, A, box, 500, rng) == 0.0);
  const auto B = box_set(v2(2, 0), v2(3, 1));
  const double h = hausdorff_sample(A, B, box, 2000, rng);
  CHECK(h >= 1.0);
  CHECK(h <= 2.0 + 1e-12);
  // the sup is attained on the far edge x1 = 0, at distance 2
  CHECK(h == doctest::Approx(2.0).epsilon(1e-12));
  CHECK_THROWS_AS(hausdorff_sample(A, B, box, 10, rng), InputError);
}

TEST_CASE("penalty sets approach the truncated set along the ladder") {
  const auto p = registry_problem("paper-example-6.1");
  const double t = 0.7;
  SetSlice base(p.bundle, p.trunc(), t);
  SampledSet C{[&](const Vec& z) {
                 for (int i = 0; i < base.count(); ++i)
                   if (base.value(i, z) > 0) return false;
                 return true;
               },
               [&](const Vec& z) { return project(base, z).point; }};
  const Box box{v3(-5, -5, -1), v3(5, 5, 6)};
  double prev = INFINITY;
  for (double g : {10.0, 100.0, 1000.0}) {
    PenaltySlice pen(base, g);
    SampledSet Cg{[&](const Vec& z) { return pen.value(0, z) <= 0; },
                  [&](const Vec& z) { return project(pen, z).point; }};
    auto rng = make_rng(8, "hausdorff-ladder");
    const double h = hausdorff_sample(C, Cg, box, 300, rng);
    CHECK(h < prev);
    prev = h;
  }
}

TEST_CASE("constants audit along the reference path") {
  const auto p = registry_problem("paper-example-6.1");
  auto rng = make_rng(1, "audit-test");
  const auto a = audit_constants(p, reference_samples(p, 64), 64, rng);
  CHECK(a.constants.sampled);
  CHECK(a.min_cq_norm == doctest::Approx(8.0).epsilon(1e-6));
  CHECK(a.constants.eta_bar <= 4.0 + 1e-9);
  CHECK(a.constants.L_psi > 0);
  CHECK(a.constants.mu_bar >= a.constants.L_bar);
  CHECK_THROWS_AS(reference_samples(registry_problem("unit-disk-push"), 8), InputError);
}
