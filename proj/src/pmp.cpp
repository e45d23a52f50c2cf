#include "sweep/pmp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sweep/errors.hpp"

namespace sweep {

namespace {

// Partial derivatives of the dynamics, built once per check.
struct DynamicsJacobians {
  std::vector<std::vector<PolyExpr>> fx, fy, gx, gy;  // [component][variable]

  explicit DynamicsJacobians(const SweepingProblem& p) {
    const VarLayout L = p.layout();
    auto build = [](const std::vector<PolyExpr>& h, int count, auto index) {
      std::vector<std::vector<PolyExpr>> out(h.size());
      for (std::size_t a = 0; a < h.size(); ++a)
        for (int b = 0; b < count; ++b) out[a].push_back(h[a].diff(index(b)));
      return out;
    };
    fx = build(p.f, p.n, [&](int b) { return L.x(b); });
    fy = build(p.f, p.l, [&](int b) { return L.y(b); });
    gx = build(p.g, p.n, [&](int b) { return L.x(b); });
    gy = build(p.g, p.l, [&](int b) { return L.y(b); });
  }

  static Mat eval(const std::vector<std::vector<PolyExpr>>& d, int rows, int cols,
                  const std::vector<double>& vars) {
    Mat M(rows, cols);
    for (int a = 0; a < rows; ++a)
      for (int b = 0; b < cols; ++b) M(a, b) = d[a][b].eval(vars);
    return M;
  }
};

Vec eval_all(const std::vector<PolyExpr>& h, const std::vector<double>& vars) {
  Vec out(h.size());
  for (std::size_t a = 0; a < h.size(); ++a) out[a] = h[a].eval(vars);
  return out;
}

void require_same_grid(const PmpCertificate& c, const Trajectory& traj) {
  if (c.t.size() != traj.t.size())
    throw InputError("certificate grid has " + std::to_string(c.t.size()) +
                     " nodes, trajectory has " + std::to_string(traj.t.size()));
  const double scale = 1.0 + std::abs(traj.t.back());
  for (std::size_t j = 0; j < c.t.size(); ++j)
    if (std::abs(c.t[j] - traj.t[j]) > 1e-12 * scale)
      throw InputError("certificate and trajectory grids differ at node " + std::to_string(j));
}

int node_of(const std::vector<double>& t, double s) {
  auto it = std::lower_bound(t.begin(), t.end(), s);
  int j = static_cast<int>(it - t.begin());
  if (j == static_cast<int>(t.size())) --j;
  if (j > 0 && std::abs(t[j - 1] - s) < std::abs(t[j] - s)) --j;
  return j;
}

// Finite-difference weights for the first derivative at s over the given
// nodes (Fornberg's recursion).
std::vector<double> fd_weights(double s, const std::vector<double>& x) {
  const int N = static_cast<int>(x.size());
  std::vector<std::vector<double>> c(N, std::vector<double>(2, 0.0));
  double c1 = 1.0, c4 = x[0] - s;
  c[0][0] = 1.0;
  for (int i = 1; i < N; ++i) {
    const int mn = std::min(i, 1);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = x[i] - s;
    for (int j = 0; j < i; ++j) {
      const double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k) c[i][k] = c1 * (k * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
        c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
      }
      for (int k = mn; k >= 1; --k) c[j][k] = (c4 * c[j][k] - k * c[j][k - 1]) / c3;
      c[j][0] = c4 * c[j][0] / c3;
    }
    c1 = c2;
  }
  std::vector<double> w(N);
  for (int i = 0; i < N; ++i) w[i] = c[i][1];
  return w;
}

// Node segments [a, b] on which the data are smooth: split where the
// trajectory control changes and at the given extra break nodes.
std::vector<std::pair<int, int>> smooth_segments(const Trajectory& traj,
                                                 const std::vector<int>& extra_breaks) {
  const int N = traj.nodes();
  std::vector<char> brk(N, 0);
  for (int j = 1; j + 1 < N; ++j)
    if (j - 1 < static_cast<int>(traj.u.size()) && j < static_cast<int>(traj.u.size()) &&
        (traj.u[j - 1] - traj.u[j]).norm() > 0)
      brk[j] = 1;
  for (int j : extra_breaks)
    if (j > 0 && j + 1 < N) brk[j] = 1;
  std::vector<std::pair<int, int>> seg;
  int a = 0;
  for (int j = 1; j < N; ++j)
    if (brk[j] || j == N - 1) {
      seg.emplace_back(a, j);
      a = j;
    }
  if (seg.empty()) seg.emplace_back(0, N - 1);
  return seg;
}

// Derivative of node data over a segment with a 5-point stencil kept inside it.
template <class Get>
Vec segment_derivative(const std::vector<double>& t, int a, int b, int j, Get get) {
  const int len = b - a + 1;
  const int w = std::min(5, len);
  int lo = std::clamp(j - w / 2, a, b - w + 1);
  std::vector<double> xs(t.begin() + lo, t.begin() + lo + w);
  const auto wts = fd_weights(t[j], xs);
  Vec d = Vec::Zero(get(lo).size());
  for (int i = 0; i < w; ++i) d += wts[i] * get(lo + i);
  return d;
}

std::vector<int> jump_nodes(const PmpCertificate& c) {
  std::vector<int> out;
  for (const auto& J : c.q_jumps) out.push_back(node_of(c.t, J.t));
  return out;
}

}  // namespace

// ---------------------------------------------------------------- certificate

Vec PmpCertificate::jump_at(double s, int n, double tol) const {
  Vec J = Vec::Zero(n);
  const double scale = 1.0 + (t.empty() ? 0.0 : std::abs(t.back()));
  for (const auto& a : q_jumps)
    if (std::abs(a.t - s) <= tol * scale) J += a.jump;
  return J;
}

Vec PmpCertificate::q_terminal() const {
  return q.back() + jump_at(t.back(), static_cast<int>(q.back().size()));
}

void PmpCertificate::validate(int n, int l, int r) const {
  const std::size_t N = t.size();
  if (N < 2) throw InputError("certificate needs at least two grid nodes");
  for (std::size_t j = 1; j < N; ++j)
    if (!(t[j] > t[j - 1])) throw InputError("certificate grid must be strictly increasing");
  if (q.size() != N || v.size() != N || xi.size() != N)
    throw InputError("certificate arrays q, v, xi must have one entry per node");
  for (std::size_t j = 0; j < N; ++j) {
    if (q[j].size() != n) throw InputError("certificate q has wrong dimension");
    if (v[j].size() != l) throw InputError("certificate v has wrong dimension");
    if (xi[j].size() != r) throw InputError("certificate xi needs one entry per generator");
    if ((xi[j].array() < 0).any()) throw InputError("certificate xi must be nonnegative");
  }
  if (!(lambda >= 0)) throw InputError("certificate lambda must be nonnegative");
  if (static_cast<int>(nu_atoms.size()) != r || static_cast<int>(nu_density.size()) != r)
    throw InputError("certificate needs one measure per generator");
  for (const auto& d : nu_density)
    if (d.size() != N) throw InputError("measure density must have one entry per node");
  const double scale = 1e-12 * (1.0 + std::abs(t.back()));
  auto on_grid = [&](double s) { return std::abs(t[node_of(t, s)] - s) <= scale; };
  for (const auto& J : q_jumps) {
    if (J.jump.size() != n) throw InputError("q jump has wrong dimension");
    if (!on_grid(J.t)) throw InputError("q jump times must be grid nodes");
  }
  for (const auto& list : nu_atoms)
    for (const auto& a : list) {
      if (!on_grid(a.t)) throw InputError("measure atom times must be grid nodes");
      bool matched = false;
      for (const auto& J : q_jumps) matched |= std::abs(J.t - a.t) <= scale;
      if (!matched && a.weight != 0.0)
        throw InputError("measure atom at t = " + std::to_string(a.t) + " has no matching q jump");
    }
}

bool CheckReport::all_pass() const {
  return std::all_of(conditions.begin(), conditions.end(), [](const auto& c) { return c.pass; });
}

const ConditionResult& CheckReport::operator[](const std::string& name) const {
  for (const auto& c : conditions)
    if (c.name == name) return c;
  throw InputError("no condition named '" + name + "'");
}

// ---------------------------------------------------------------- admissibility

Residual check_admissibility(const PmpCertificate& c, const SweepingProblem& p,
                             const Trajectory& traj) {
  require_same_grid(c, traj);
  const VarLayout L = p.layout();
  const int N = traj.nodes();
  Residual res;
  auto bump = [&](double v, int j) {
    if (v > res.value) {
      res.value = v;
      res.witness_t = traj.t[j];
    }
  };
  for (auto [a, b] : smooth_segments(traj, {})) {
    const Vec& u = traj.u_at_node(a);
    for (int j = a; j <= b; ++j) {
      const auto vars = pack_vars(L, traj.t[j], traj.x[j], traj.y[j], u);
      Vec dx = segment_derivative(traj.t, a, b, j, [&](int i) { return traj.x[i]; });
      Vec rx = dx - eval_all(p.f, vars);
      for (int i = 0; i < p.r(); ++i) rx += c.xi[j][i] * p.bundle.grad(i, traj.t[j], traj.x[j]);
      bump(rx.norm(), j);
      if (p.l > 0) {
        Vec dy = segment_derivative(traj.t, a, b, j, [&](int i) { return traj.y[i]; });
        bump((dy - eval_all(p.g, vars)).norm(), j);
      }
    }
  }
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < p.r(); ++i) bump(std::max(0.0, p.bundle.value(i, traj.t[j], traj.x[j])), j);
  return res;
}

// ---------------------------------------------------------------- nontriviality

Residual check_nontriviality(const PmpCertificate& c) {
  Residual res;
  res.witness_t = c.t.empty() ? -1.0 : c.t.back();
  if (c.lambda_one) {
    res.value = std::abs(c.lambda - 1.0);
    return res;
  }
  const Vec qT = c.q_terminal();
  const double pT = std::sqrt(qT.squaredNorm() + c.v.back().squaredNorm());
  res.value = std::abs(c.lambda + pT - 1.0);
  return res;
}

// ---------------------------------------------------------------- adjoint

Residual check_adjoint_weak(const PmpCertificate& c, const SweepingProblem& p,
                            const Trajectory& traj, int test_basis_size) {
  require_same_grid(c, traj);
  if (test_basis_size < 2) throw InputError("adjoint check needs at least two test functions");
  const int n = p.n, l = p.l, N = traj.nodes(), r = p.r();
  const VarLayout L = p.layout();
  const DynamicsJacobians D(p);
  const double T0 = traj.t.front(), T1 = traj.t.back();

  // Right-hand side density F = -A'q - Acal'v + sum xi theta q + sum rho grad psi at
  // node j with a given q value (left or right limit).
  auto F = [&](int j, int cell, const Vec& qv) {
    const auto vars = pack_vars(L, traj.t[j], traj.x[j], traj.y[j], traj.u_at_node(cell));
    Vec out = -DynamicsJacobians::eval(D.fx, n, n, vars).transpose() * qv;
    if (l > 0) out -= DynamicsJacobians::eval(D.gx, l, n, vars).transpose() * c.v[j];
    for (int i = 0; i < r; ++i) {
      out += c.xi[j][i] * (p.bundle.hessian(i, traj.t[j], traj.x[j]) * qv);
      out += c.nu_density[i][j] * p.bundle.grad(i, traj.t[j], traj.x[j]);
    }
    return out;
  };
  std::vector<Vec> q_right(N);
  for (int j = 0; j < N; ++j) q_right[j] = c.q[j] + c.jump_at(traj.t[j], n);
  std::vector<Vec> FL(N - 1), FR(N - 1);  // at the left and right end of each cell
  for (int j = 0; j + 1 < N; ++j) {
    FL[j] = F(j, j, q_right[j]);
    FR[j] = F(j + 1, j, c.q[j + 1]);
  }

  // Hat functions with knots s_m = T0 + m H.
  const int M = test_basis_size;
  const double H = (T1 - T0) / (M - 1);
  auto hat = [&](int m, double s) { return std::max(0.0, 1.0 - std::abs(s - (T0 + m * H)) / H); };
  auto hat_slope = [&](int m, double s) {  // s strictly inside a piece
    const double d = s - (T0 + m * H);
    if (std::abs(d) >= H) return 0.0;
    return d < 0 ? 1.0 / H : -1.0 / H;
  };

  Residual res;
  const Vec qT = c.q_terminal();
  for (int m = 0; m < M; ++m) {
    const double lo = std::max(T0, T0 + (m - 1) * H), hi = std::min(T1, T0 + (m + 1) * H);
    // LHS = z(T) q(T+) - z(0) q(0) - int q z' dt ; RHS = int z F dt + atoms.
    Vec lhs = hat(m, T1) * qT - hat(m, T0) * c.q.front();
    Vec rhs = Vec::Zero(n);
    for (int j = 0; j + 1 < N; ++j) {
      const double a = traj.t[j], b = traj.t[j + 1];
      if (b <= lo || a >= hi) continue;
      // split the cell at knots
      std::vector<double> pts{a};
      const double knots[3] = {T0 + (m - 1) * H, T0 + m * H, T0 + (m + 1) * H};
      for (double k : knots)
        if (k > a && k < b) pts.push_back(k);
      pts.push_back(b);
      for (std::size_t s = 0; s + 1 < pts.size(); ++s) {
        const double u0 = pts[s], u1 = pts[s + 1], len = u1 - u0;
        auto lerp = [&](const Vec& A, const Vec& B, double x) {
          return Vec(A + (B - A) * ((x - a) / (b - a)));
        };
        const Vec q0 = lerp(q_right[j], c.q[j + 1], u0), q1 = lerp(q_right[j], c.q[j + 1], u1);
        lhs -= hat_slope(m, 0.5 * (u0 + u1)) * 0.5 * len * (q0 + q1);
        const double um = 0.5 * (u0 + u1);
        const Vec F0 = lerp(FL[j], FR[j], u0), F1 = lerp(FL[j], FR[j], u1),
                  Fm = lerp(FL[j], FR[j], um);
        rhs += len / 6.0 * (hat(m, u0) * F0 + 4.0 * hat(m, um) * Fm + hat(m, u1) * F1);
      }
    }
    for (int i = 0; i < r; ++i)
      for (const auto& at : c.nu_atoms[i]) {
        const double z = hat(m, at.t);
        if (z == 0.0) continue;
        const int j = node_of(traj.t, at.t);
        rhs += z * at.weight * p.bundle.grad(i, traj.t[j], traj.x[j]);
      }
    const double d = (lhs - rhs).lpNorm<Eigen::Infinity>();
    if (d > res.value) {
      res.value = d;
      res.witness_t = T0 + m * H;
    }
  }

  // v equation pointwise, away from q jumps.
  if (l > 0) {
    const auto jumps = jump_nodes(c);
    for (auto [a, b] : smooth_segments(traj, jumps)) {
      for (int j = a; j <= b; ++j) {
        const int cell = std::min(j, N - 2);
        const Vec qv = (j == a) ? q_right[j] : c.q[j];
        const auto vars = pack_vars(L, traj.t[j], traj.x[j], traj.y[j], traj.u_at_node(a));
        Vec dv = segment_derivative(traj.t, a, b, j, [&](int i) { return c.v[i]; });
        Vec rv = dv + DynamicsJacobians::eval(D.fy, n, l, vars).transpose() * qv +
                 DynamicsJacobians::eval(D.gy, l, l, vars).transpose() * c.v[j];
        (void)cell;
        if (rv.norm() > res.value) {
          res.value = rv.norm();
          res.witness_t = traj.t[j];
        }
      }
    }
  }
  return res;
}

// ---------------------------------------------------------------- maximization

Residual check_maximization(const PmpCertificate& c, const SweepingProblem& p,
                            const Trajectory& traj, int control_grid_density) {
  require_same_grid(c, traj);
  Residual res;
  if (p.m == 0) return res;
  const int m = p.m, N = traj.nodes();
  const int dens = std::max(2, control_grid_density);
  long total = 1;
  for (int k = 0; k < m; ++k) total *= dens;
  if (total > 1000000) throw InputError("control grid too large; lower the density");
  const VarLayout L = p.layout();
  auto hamiltonian = [&](int j, const Vec& qv, const Vec& u) {
    const auto vars = pack_vars(L, traj.t[j], traj.x[j], traj.y[j], u);
    double H = qv.dot(eval_all(p.f, vars));
    if (p.l > 0) H += c.v[j].dot(eval_all(p.g, vars));
    return H;
  };
  auto gap = [&](int j, int cell, const Vec& qv) {
    const Vec& ubar = traj.u[cell];
    const double tm = 0.5 * (traj.t[cell] + traj.t[cell + 1]);
    const int b = p.U.index(tm);
    const Vec& lo = p.U.lo[b];
    const Vec& hi = p.U.hi[b];
    double best = -std::numeric_limits<double>::infinity();
    Vec u(m);
    for (long idx = 0; idx < total; ++idx) {
      long rem = idx;
      for (int k = 0; k < m; ++k) {
        const int g = static_cast<int>(rem % dens);
        rem /= dens;
        u[k] = lo[k] + (hi[k] - lo[k]) * g / (dens - 1);
      }
      best = std::max(best, hamiltonian(j, qv, u));
    }
    return std::max(0.0, best - hamiltonian(j, qv, ubar));
  };
  for (int j = 0; j < N; ++j) {
    double g = std::numeric_limits<double>::infinity();
    if (j > 0) g = std::min(g, gap(j, j - 1, c.q[j]));
    if (j + 1 < N) g = std::min(g, gap(j, j, c.q[j] + c.jump_at(traj.t[j], p.n)));
    if (g > res.value) {
      res.value = g;
      res.witness_t = traj.t[j];
    }
  }
  return res;
}

// ---------------------------------------------------------------- slackness, measures

SlacknessResiduals check_slackness_and_measures(const PmpCertificate& c, const SweepingProblem& p,
                                                const Trajectory& traj, double active_tol) {
  require_same_grid(c, traj);
  const int N = traj.nodes(), r = p.r(), n = p.n;
  SlacknessResiduals out;
  auto bump = [](Residual& R, double v, double t) {
    if (v > R.value) {
      R.value = v;
      R.witness_t = t;
    }
  };
  std::vector<double> w(N, 0.0);  // trapezoid weights
  for (int j = 0; j + 1 < N; ++j) {
    const double h = traj.t[j + 1] - traj.t[j];
    w[j] += 0.5 * h;
    w[j + 1] += 0.5 * h;
  }
  double min_sign = 0.0;
  double sign_t = -1.0;
  for (int i = 0; i < r; ++i) {
    double outside = 0.0, outside_t = -1.0;
    for (int j = 0; j < N; ++j) {
      const double t = traj.t[j];
      const double psi = p.bundle.value(i, t, traj.x[j]);
      const Vec g = p.bundle.grad(i, t, traj.x[j]);
      const double xi = c.xi[j][i];
      if (psi < -active_tol) {
        bump(out.inactive_xi, xi, t);
        const double mass = std::abs(c.nu_density[i][j]) * w[j];
        if (mass > 0 && outside_t < 0) outside_t = t;
        outside += mass;
      }
      bump(out.xi_orthogonality, std::abs(xi * g.dot(c.q[j])), t);
      const double s = g.dot(c.q[j]) * c.nu_density[i][j];
      if (s < min_sign) {
        min_sign = s;
        sign_t = t;
      }
    }
    for (const auto& at : c.nu_atoms[i]) {
      const int j = node_of(traj.t, at.t);
      const double psi = p.bundle.value(i, traj.t[j], traj.x[j]);
      if (psi < -active_tol) {
        if (outside_t < 0) outside_t = at.t;
        outside += std::abs(at.weight);
      }
      // <q, grad psi> at an atom: mean of the one-sided limits
      const Vec qm = c.q[j] + 0.5 * c.jump_at(traj.t[j], n);
      const double s = p.bundle.grad(i, traj.t[j], traj.x[j]).dot(qm) * at.weight;
      if (s < min_sign) {
        min_sign = s;
        sign_t = at.t;
      }
    }
    bump(out.mass_outside, outside, outside_t);
  }
  out.sign.value = std::max(0.0, -min_sign);
  out.sign.witness_t = min_sign < 0 ? sign_t : -1.0;
  return out;
}

// ---------------------------------------------------------------- transversality

namespace {

// min |M theta - c| with theta_k in [lo_k, hi_k] (infinite bounds allowed) by
// enumerating which bounded coordinates sit on a bound. Fine for the handful
// of bounded parameters that occur (abs terms, active inequalities).
Vec bounded_least_squares(const Mat& M, const Vec& c, const Vec& lo, const Vec& hi) {
  const int k = static_cast<int>(M.cols());
  std::vector<int> bounded;
  for (int i = 0; i < k; ++i)
    if (std::isfinite(lo[i]) || std::isfinite(hi[i])) bounded.push_back(i);
  if (bounded.size() > 12) throw InputError("too many bounded parameters in transversality");
  long combos = 1;
  for (std::size_t i = 0; i < bounded.size(); ++i) combos *= 3;
  Vec best;
  double best_r = std::numeric_limits<double>::infinity();
  for (long code = 0; code < combos; ++code) {
    Vec theta = Vec::Zero(k);
    std::vector<char> fixed(k, 0);
    long rem = code;
    bool valid = true;
    for (int b : bounded) {
      const int state = static_cast<int>(rem % 3);
      rem /= 3;
      if (state == 1) {
        if (!std::isfinite(lo[b])) valid = false;
        theta[b] = lo[b];
        fixed[b] = 1;
      } else if (state == 2) {
        if (!std::isfinite(hi[b])) valid = false;
        theta[b] = hi[b];
        fixed[b] = 1;
      }
    }
    if (!valid) continue;
    std::vector<int> freev;
    for (int i = 0; i < k; ++i)
      if (!fixed[i]) freev.push_back(i);
    Vec rhs = c - M * theta;
    if (!freev.empty()) {
      Mat Mf(M.rows(), freev.size());
      for (std::size_t i = 0; i < freev.size(); ++i) Mf.col(i) = M.col(freev[i]);
      Vec sol = Mf.completeOrthogonalDecomposition().solve(rhs);
      for (std::size_t i = 0; i < freev.size(); ++i) theta[freev[i]] = sol[i];
    }
    bool feasible = true;
    for (int b : bounded)
      feasible &= theta[b] >= lo[b] - 1e-12 && theta[b] <= hi[b] + 1e-12;
    if (!feasible) continue;
    const double rr = (M * theta - c).norm();
    if (rr < best_r) {
      best_r = rr;
      best = theta;
    }
  }
  return best;
}

Vec poly_gradient(const PolyExpr& e, const Vec& at) {
  Vec g(e.nvars());
  std::vector<double> v(at.data(), at.data() + at.size());
  for (int k = 0; k < e.nvars(); ++k) g[k] = e.diff(k).eval(v);
  return g;
}

}  // namespace

TransversalityResult check_transversality(const PmpCertificate& c, const SweepingProblem& p,
                                          const Trajectory& traj, double active_tol) {
  require_same_grid(c, traj);
  const int d = p.n + p.l, E = 2 * d;
  const Vec e = pack_endpoints(traj.x.front(), traj.y.front(), traj.x.back(), traj.y.back());
  std::vector<double> ev(e.data(), e.data() + e.size());

  Vec P(E);
  P << c.q.front(), c.v.front(), -c.q_terminal(), -c.v.back();

  std::vector<Vec> rows;
  std::vector<bool> ineq;
  for (const auto& s : p.S) {
    const double val = s.expr.eval(ev);
    if (s.kind == EndpointConstraint::Kind::Ineq && val < -active_tol) continue;
    rows.push_back(poly_gradient(s.expr, e));
    ineq.push_back(s.kind == EndpointConstraint::Kind::Ineq);
  }
  if (!rows.empty()) {
    Mat DS(rows.size(), E);
    for (std::size_t i = 0; i < rows.size(); ++i) DS.row(i) = rows[i].transpose();
    Eigen::FullPivLU<Mat> lu(DS);
    lu.setThreshold(1e-10);
    if (lu.rank() < static_cast<int>(rows.size()))
      throw InputError("limiting normal cone not computable as rowspace: endpoint constraint "
                       "Jacobian is rank deficient at the trajectory endpoints");
  }

  Vec target = P - c.lambda * poly_gradient(p.J.poly, e);
  std::vector<Vec> cols = rows;
  std::vector<double> lo(rows.size()), hi(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    lo[i] = ineq[i] ? 0.0 : -std::numeric_limits<double>::infinity();
    hi[i] = std::numeric_limits<double>::infinity();
  }
  std::vector<int> abs_cols;
  for (const auto& a : p.J.abs_terms) {
    const double val = a.affine.eval(ev);
    const Vec ga = c.lambda * a.weight * poly_gradient(a.affine, e);
    if (std::abs(val) <= active_tol) {
      abs_cols.push_back(static_cast<int>(cols.size()));
      cols.push_back(ga);
      lo.push_back(-1.0);
      hi.push_back(1.0);
    } else {
      target -= (val > 0 ? 1.0 : -1.0) * ga;
    }
  }
  TransversalityResult out;
  out.residual.witness_t = 0.0;
  if (cols.empty()) {
    out.residual.value = target.norm();
    return out;
  }
  Mat M(E, cols.size());
  for (std::size_t i = 0; i < cols.size(); ++i) M.col(i) = cols[i];
  Vec theta = bounded_least_squares(M, target, Eigen::Map<Vec>(lo.data(), lo.size()),
                                    Eigen::Map<Vec>(hi.data(), hi.size()));
  out.residual.value = (M * theta - target).norm();
  out.alpha = theta.head(rows.size());
  out.s = theta.tail(abs_cols.size());
  return out;
}

CheckReport check_pmp(const PmpCertificate& c, const SweepingProblem& p, const Trajectory& traj,
                      const CheckOptions& opt) {
  c.validate(p.n, p.l, p.r());
  require_same_grid(c, traj);
  CheckReport rep;
  auto add = [&](const std::string& name, const Residual& r, double tol, std::string note = {}) {
    ConditionResult cr;
    cr.name = name;
    cr.residual = r.value;
    cr.tol = tol;
    cr.pass = r.value <= tol;
    cr.witness_t = r.witness_t;
    cr.note = std::move(note);
    rep.conditions.push_back(cr);
  };
  add("admissibility", check_admissibility(c, p, traj), opt.tol);
  add("nontriviality", check_nontriviality(c), opt.nontriviality_tol,
      c.lambda_one ? "lambda = 1 mode" : "");
  add("adjoint", check_adjoint_weak(c, p, traj, opt.test_basis_size), opt.tol,
      std::to_string(opt.test_basis_size) + " hat functions");
  add("maximization", check_maximization(c, p, traj, opt.control_grid_density), opt.tol);
  const auto sm = check_slackness_and_measures(c, p, traj, opt.active_tol);
  add("slackness", sm.inactive_xi.value >= sm.xi_orthogonality.value ? sm.inactive_xi : sm.xi_orthogonality,
      opt.tol);
  add("measures", sm.mass_outside.value >= sm.sign.value ? sm.mass_outside : sm.sign, opt.tol);
  const auto tr = check_transversality(c, p, traj);
  add("transversality", tr.residual, opt.tol);
  return rep;
}

// ---------------------------------------------------------------- penalized adjoint

AdjointPath integrate_adjoint_penalized(const SweepingProblem& p, double gamma,
                                        const Trajectory& traj, const Vec& qT, const Vec& vT,
                                        double lambda) {
  const int n = p.n, l = p.l, d = n + l, N = traj.nodes();
  if (qT.size() != n || vT.size() != l) throw InputError("adjoint terminal value has wrong size");
  if (N < 2) throw InputError("adjoint needs a trajectory with at least two nodes");
  if (traj.gamma != 0.0 && std::abs(traj.gamma - gamma) > 1e-12 * gamma)
    throw InputError("adjoint gamma differs from the trajectory's");
  PenalizedSystem sys(p, gamma);
  const int k = p.penalized_count();
  AdjointPath out;
  out.gamma = gamma;
  out.lambda = lambda;
  out.t = traj.t;
  out.q.assign(N, Vec());
  out.v.assign(N, Vec());
  out.nu_mass.assign(k, std::vector<double>(N - 1, 0.0));
  Vec pz(d);
  pz << qT, vT;
  out.q[N - 1] = qT;
  out.v[N - 1] = vT;
  Mat Jz(d, d), K(d, d);
  Vec z(d), xi;
  double zeta = 0.0;
  const Truncation* tr = p.trunc();
  for (int j = N - 2; j >= 0; --j) {
    const double h = traj.t[j + 1] - traj.t[j];
    z << traj.x[j], traj.y[j];
    sys.jacobian(traj.t[j], z, traj.u[j], Jz, nullptr);
    K = Mat::Identity(d, d) - h * Jz.transpose();
    pz = K.partialPivLu().solve(pz);
    if (!pz.allFinite())
      throw NumericalError("adjoint integration overflowed at t = " + std::to_string(traj.t[j]));
    out.q[j] = pz.head(n);
    out.v[j] = pz.tail(l);
    sys.multipliers(traj.t[j], z, xi, zeta);
    for (int i = 0; i < k; ++i) {
      Vec g = i < p.r() ? p.bundle.grad(i, traj.t[j], traj.x[j])
                        : Vec(traj.x[j] - tr->center_x.value(traj.t[j]));
      out.nu_mass[i][j] = h * gamma * xi[i] * g.dot(out.q[j]);
    }
  }
  return out;
}

namespace {

struct DetectedAtoms {
  std::vector<std::pair<int, double>> atoms;  // (node, weight)
  std::vector<double> remaining;              // cell masses not in atoms
};

DetectedAtoms detect_atoms(const std::vector<double>& t, const std::vector<double>& mass,
                           double window) {
  DetectedAtoms out;
  out.remaining = mass;
  const int cells = static_cast<int>(mass.size());
  double total = 0.0;
  for (double m : mass) total += std::abs(m);
  if (total == 0.0) return out;
  std::vector<std::pair<int, int>> spans;  // cell range of each atom
  for (int guard = 0; guard < cells; ++guard) {
    int jm = 0;
    for (int j = 1; j < cells; ++j)
      if (std::abs(out.remaining[j]) > std::abs(out.remaining[jm])) jm = j;
    if (std::abs(out.remaining[jm]) <= 1e-9 * total) break;
    const double c = 0.5 * (t[jm] + t[jm + 1]);
    int a = jm, b = jm;
    while (a > 0 && t[a] > c - 0.5 * window) --a;
    while (b + 1 < cells && t[b + 1] < c + 0.5 * window) ++b;
    const double width = std::max(window, t[b + 1] - t[a]);
    double M = 0.0, S = 0.0;
    for (int j = a; j <= b; ++j) M += out.remaining[j];
    for (int j = 0; j < cells; ++j) {
      if (j >= a && j <= b) continue;
      if (t[j + 1] > t[a] - width && t[j] < t[b + 1] + width) S += std::abs(out.remaining[j]);
    }
    // Tails of an atom already found are folded into it.
    bool merged = false;
    for (std::size_t k = 0; k < out.atoms.size() && !merged; ++k) {
      const auto& w = spans[k];
      if (t[a] <= t[w.second + 1] + width && t[b + 1] >= t[w.first] - width) {
        out.atoms[k].second += M;
        spans[k] = {std::min(a, w.first), std::max(b, w.second)};
        merged = true;
      }
    }
    if (!merged) {
      if (!(std::abs(M) > 10.0 * S)) break;
      out.atoms.emplace_back(b + 1, M);
      spans.emplace_back(a, b);
    }
    for (int j = a; j <= b; ++j) out.remaining[j] = 0.0;
  }
  return out;
}

}  // namespace

PmpCertificate assemble_certificate(const SweepingProblem& p, const std::vector<LadderRun>& runs,
                                    AssemblyReport* report) {
  if (runs.empty()) throw InputError("certificate assembly needs at least one ladder run");
  const int r = p.r(), n = p.n;
  AssemblyReport rep;
  for (const auto& run : runs) {
    const auto& adj = run.adjoint;
    if (adj.t.size() != run.traj.t.size()) throw InputError("adjoint and trajectory grids differ");
    const double norm = adj.lambda + std::sqrt(adj.q.back().squaredNorm() + adj.v.back().squaredNorm());
    std::vector<double> masses(r, 0.0);
    for (int i = 0; i < r; ++i) {
      const auto det = detect_atoms(adj.t, adj.nu_mass[i], 3.0 / adj.gamma);
      for (auto [node, w] : det.atoms) masses[i] += w / (norm > 0 ? norm : 1.0);
    }
    rep.gammas.push_back(adj.gamma);
    rep.atom_mass.push_back(masses);
  }
  if (rep.atom_mass.size() >= 2) {
    const auto& a = rep.atom_mass[rep.atom_mass.size() - 2];
    const auto& b = rep.atom_mass.back();
    for (int i = 0; i < r; ++i)
      if (std::abs(a[i] - b[i]) > 0.25 * std::max(std::abs(b[i]), 1e-6)) {
        rep.masses_converged = false;
        rep.warnings.push_back("atomic mass of generator " + std::to_string(i + 1) +
                               " not converged across the last two rungs");
      }
  }

  const auto& fin = runs.back();
  const auto& adj = fin.adjoint;
  const auto& traj = fin.traj;
  const int N = traj.nodes();
  rep.window = 3.0 / adj.gamma;

  PmpCertificate c;
  c.t = traj.t;
  c.lambda = adj.lambda;
  c.q = adj.q;
  c.v = adj.v;
  c.xi.resize(N);
  for (int j = 0; j < N; ++j) c.xi[j] = traj.xi[j].head(r);
  c.nu_density.assign(r, std::vector<double>(N, 0.0));
  c.nu_atoms.assign(r, {});
  std::vector<Vec> jumps(N, Vec::Zero(n));
  std::vector<char> has_jump(N, 0);
  for (int i = 0; i < r; ++i) {
    const auto det = detect_atoms(adj.t, adj.nu_mass[i], rep.window);
    for (auto [node, w] : det.atoms) {
      c.nu_atoms[i].push_back({traj.t[node], w});
      jumps[node] += w * p.bundle.grad(i, traj.t[node], traj.x[node]);
      has_jump[node] = 1;
    }
    std::sort(c.nu_atoms[i].begin(), c.nu_atoms[i].end(),
              [](const auto& a, const auto& b) { return a.t < b.t; });
    // density at nodes from the remaining cell masses
    for (int j = 0; j < N; ++j) {
      double acc = 0.0;
      int cnt = 0;
      if (j > 0) {
        acc += det.remaining[j - 1] / (traj.t[j] - traj.t[j - 1]);
        ++cnt;
      }
      if (j + 1 < N) {
        acc += det.remaining[j] / (traj.t[j + 1] - traj.t[j]);
        ++cnt;
      }
      c.nu_density[i][j] = acc / cnt;
    }
  }
  for (int j = 0; j < N; ++j)
    if (has_jump[j]) {
      c.q[j] -= jumps[j];  // stored values are left limits
      c.q_jumps.push_back({traj.t[j], jumps[j]});
    }
  // lambda + |p(T+)| = 1
  const double norm = c.lambda + std::sqrt(c.q_terminal().squaredNorm() + c.v.back().squaredNorm());
  if (norm > 0) {
    c.lambda /= norm;
    for (auto& x : c.q) x /= norm;
    for (auto& x : c.v) x /= norm;
    for (auto& J : c.q_jumps) J.jump /= norm;
    for (auto& d : c.nu_density)
      for (auto& x : d) x /= norm;
    for (auto& list : c.nu_atoms)
      for (auto& a : list) a.weight /= norm;
  }
  if (report) *report = rep;
  return c;
}

}  // namespace sweep
