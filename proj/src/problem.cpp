#include "sweep/problem.hpp"

#include <algorithm>

#include "sweep/errors.hpp"

namespace sweep {

ControlBox ControlBox::constant(const Vec& lo, const Vec& hi) {
  ControlBox b;
  b.breaks = {0.0};
  b.lo = {lo};
  b.hi = {hi};
  return b;
}

int ControlBox::index(double t) const {
  auto it = std::upper_bound(breaks.begin(), breaks.end(), t);
  return std::max(0, static_cast<int>(it - breaks.begin()) - 1);
}

void ControlBox::validate(int m_expected) const {
  if (m_expected == 0) return;
  if (breaks.empty() || breaks.size() != lo.size() || lo.size() != hi.size())
    throw InputError("control box table is malformed");
  if (breaks.front() != 0.0) throw InputError("control box table must start at t = 0");
  for (std::size_t j = 0; j < breaks.size(); ++j) {
    if (j > 0 && !(breaks[j] > breaks[j - 1])) throw InputError("control box breakpoints must increase");
    if (lo[j].size() != m_expected || hi[j].size() != m_expected)
      throw InputError("control box dimension does not match m");
    for (int k = 0; k < m_expected; ++k)
      if (!(lo[j][k] <= hi[j][k])) throw InputError("control box is empty at a breakpoint");
  }
}

bool ControlBox::contains(double t, const Vec& u, double tol) const {
  if (u.size() == 0) return true;
  const int j = index(t);
  return ((u - lo[j]).array() >= -tol).all() && ((hi[j] - u).array() >= -tol).all();
}

Vec ControlBox::clamp(double t, const Vec& u) const {
  if (u.size() == 0) return u;
  const int j = index(t);
  return u.cwiseMax(lo[j]).cwiseMin(hi[j]);
}

void SweepingProblem::validate() const {
  if (n <= 0 || l < 0 || m < 0) throw InputError("dimensions must satisfy n > 0, l >= 0, m >= 0");
  if (!(T > 0.0)) throw InputError("horizon T must be positive");
  if (bundle.n != n) throw InputError("generator dimension does not match n");
  if (static_cast<int>(f.size()) != n) throw InputError("f must have n components");
  if (static_cast<int>(g.size()) != l) throw InputError("g must have l components");
  const int nv = layout().size();
  for (const auto& p : f)
    if (p.nvars() != nv) throw InputError("f components must be polynomials in (t, x, y, u)");
  for (const auto& p : g)
    if (p.nvars() != nv) throw InputError("g components must be polynomials in (t, x, y, u)");
  U.validate(m);
  for (const auto& c : S)
    if (c.expr.nvars() != endpoint_size())
      throw InputError("endpoint constraints must be polynomials in (x(0), y(0), x(T), y(T))");
  if (J.poly.nvars() != 0 && J.poly.nvars() != endpoint_size())
    throw InputError("cost polynomial must be over the endpoint variables");
  for (const auto& a : J.abs_terms) {
    if (a.weight < 0.0) throw InputError("abs-term weights must be nonnegative");
    if (a.affine.nvars() != endpoint_size() || a.affine.degree() > 1)
      throw InputError("abs terms must be affine in the endpoint variables");
  }
  truncation.validate();
  if (truncation.enabled) {
    if (truncation.center_x.dim() != n) throw InputError("x reference path has wrong dimension");
    if (truncation.center_y.dim() != l) throw InputError("y reference path has wrong dimension");
  }
  if (constants) {
    const auto& c = *constants;
    if (!(c.eta_bar > 0) || !(c.mu_bar > 0) || !(c.L_bar > 0) || c.M_h < 0)
      throw InputError("audited constants must be positive");
  }
  if (x0 && x0->size() != n) throw InputError("x0 has wrong dimension");
  if (y0 && y0->size() != l) throw InputError("y0 has wrong dimension");
}

std::vector<double> pack_vars(const VarLayout& L, double t, const Vec& x, const Vec& y,
                              const Vec& u) {
  std::vector<double> v(L.size());
  v[0] = t;
  for (int j = 0; j < L.n; ++j) v[L.x(j)] = x[j];
  for (int j = 0; j < L.l; ++j) v[L.y(j)] = y[j];
  for (int j = 0; j < L.m; ++j) v[L.u(j)] = u[j];
  return v;
}

Vec pack_endpoints(const Vec& x0, const Vec& y0, const Vec& xT, const Vec& yT) {
  Vec e(x0.size() + y0.size() + xT.size() + yT.size());
  e << x0, y0, xT, yT;
  return e;
}

}  // namespace sweep
