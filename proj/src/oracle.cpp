#include "sweep/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sweep/errors.hpp"

namespace sweep {

namespace {

struct FaceSolution {
  Vec w, mu;
  int iterations = 0;
  bool converged = false;
};

// Newton on  w - z + sum mu_i grad c_i(w) = 0,  c_i(w) = 0  (i in F).
FaceSolution solve_face(const ConstraintSet& C, const Vec& z, const std::vector<int>& F,
                        double tol, int max_iter) {
  const int n = static_cast<int>(z.size());
  const int k = static_cast<int>(F.size());
  FaceSolution s;
  s.w = z;
  s.mu = Vec::Zero(k);
  auto residual = [&](const Vec& w, const Vec& mu, Vec& R) {
    R.resize(n + k);
    R.head(n) = w - z;
    for (int a = 0; a < k; ++a) {
      R.head(n) += mu[a] * C.grad(F[a], w);
      R[n + a] = C.value(F[a], w);
    }
  };
  // first-order start: w = z - G' mu with G G' mu = c(z)
  {
    Mat G(k, n);
    Vec c(k);
    for (int a = 0; a < k; ++a) {
      G.row(a) = C.grad(F[a], z).transpose();
      c[a] = C.value(F[a], z);
    }
    Vec mu = (G * G.transpose()).completeOrthogonalDecomposition().solve(c);
    if (mu.allFinite()) {
      s.mu = mu;
      s.w = z - G.transpose() * mu;
    }
  }
  Vec R;
  residual(s.w, s.mu, R);
  const double scale = 1.0 + z.norm();
  for (int it = 0; it < max_iter; ++it) {
    s.iterations = it + 1;
    if (R.norm() <= 1e-2 * tol * scale) {
      s.converged = true;
      break;
    }
    Mat K = Mat::Zero(n + k, n + k);
    K.topLeftCorner(n, n).setIdentity();
    for (int a = 0; a < k; ++a) {
      Vec g = C.grad(F[a], s.w);
      K.topLeftCorner(n, n) += s.mu[a] * C.hess(F[a], s.w);
      K.block(0, n + a, n, 1) = g;
      K.block(n + a, 0, 1, n) = g.transpose();
    }
    Vec step = K.partialPivLu().solve(-R);
    if (!step.allFinite()) step = K.completeOrthogonalDecomposition().solve(-R);
    if (!step.allFinite()) break;
    double alpha = 1.0;
    const double r0 = R.norm();
    Vec Rn;
    for (int ls = 0; ls < 40; ++ls) {
      residual(s.w + alpha * step.head(n), s.mu + alpha * step.tail(k), Rn);
      if (Rn.allFinite() && Rn.norm() <= (1.0 - 1e-4 * alpha) * r0) break;
      alpha *= 0.5;
    }
    s.w += alpha * step.head(n);
    s.mu += alpha * step.tail(k);
    R = Rn;
  }
  if (!s.converged && R.norm() <= 1e-2 * tol * scale) s.converged = true;
  return s;
}

bool feasible(const ConstraintSet& C, const Vec& w, double tol) {
  for (int i = 0; i < C.count(); ++i)
    if (C.value(i, w) > tol) return false;
  return true;
}

}  // namespace

ProjectionResult project(const ConstraintSet& C, const Vec& z, double tol, int max_iter) {
  if (z.size() != C.dim()) throw InputError("projection point has wrong dimension");
  const int c = C.count();
  ProjectionResult best;
  best.multipliers = Vec::Zero(c);
  if (feasible(C, z, tol)) {
    best.point = z;
    return best;
  }
  best.distance = std::numeric_limits<double>::infinity();
  Vec best_any = z;
  double best_any_viol = std::numeric_limits<double>::infinity();
  auto consider = [&](const std::vector<int>& F) -> bool {
    FaceSolution s = solve_face(C, z, F, tol, max_iter);
    best.iterations += s.iterations;
    double viol = 0.0;
    for (int i = 0; i < c; ++i) viol = std::max(viol, C.value(i, s.w));
    if (viol < best_any_viol) {
      best_any_viol = viol;
      best_any = s.w;
    }
    if (!s.converged || (s.mu.array() < -tol).any() || viol > tol) return false;
    const double d = (s.w - z).norm();
    if (d < best.distance) {
      best.distance = d;
      best.point = s.w;
      best.multipliers.setZero();
      for (std::size_t a = 0; a < F.size(); ++a) best.multipliers[F[a]] = std::max(0.0, s.mu[a]);
    }
    return true;
  };
  if (c <= 4) {
    for (int mask = 1; mask < (1 << c); ++mask) {
      std::vector<int> F;
      for (int i = 0; i < c; ++i)
        if (mask & (1 << i)) F.push_back(i);
      consider(F);
    }
  } else {
    // primal-dual active set: add the most violated, drop negative multipliers
    std::vector<int> F;
    for (int i = 0; i < c; ++i)
      if (C.value(i, z) > tol) F.push_back(i);
    for (int outer = 0; outer < 4 * c; ++outer) {
      FaceSolution s = solve_face(C, z, F, tol, max_iter);
      best.iterations += s.iterations;
      if (!s.converged) break;
      int worst_mu = -1;
      for (int a = 0; a < static_cast<int>(F.size()); ++a)
        if (s.mu[a] < -tol && (worst_mu < 0 || s.mu[a] < s.mu[worst_mu])) worst_mu = a;
      if (worst_mu >= 0) {
        F.erase(F.begin() + worst_mu);
        continue;
      }
      int worst_c = -1;
      double wv = tol;
      for (int i = 0; i < c; ++i) {
        const double v = C.value(i, s.w);
        if (v > wv) {
          wv = v;
          worst_c = i;
        }
      }
      if (worst_c < 0) {
        consider(F);
        break;
      }
      F.push_back(worst_c);
      std::sort(F.begin(), F.end());
    }
  }
  if (!std::isfinite(best.distance)) {
    std::ostringstream os;
    os.precision(17);
    os << "projection did not converge; best iterate (";
    for (int j = 0; j < best_any.size(); ++j) os << (j ? ", " : "") << best_any[j];
    os << ") with constraint violation " << best_any_viol;
    throw NumericalError(os.str());
  }
  return best;
}

ProjectionResult project(const GeneratorBundle& b, const Truncation* trunc, double t, const Vec& z,
                         double tol) {
  SetSlice s(b, trunc, t);
  return project(s, z, tol);
}

// ---------------------------------------------------------------- catching-up

Trajectory catch_up(const SweepingProblem& p, const ControlSignal& u, const Vec& x0,
                    const Vec& y0, double h) {
  if (!(h > 0)) throw InputError("catch-up step must be positive");
  if (x0.size() != p.n || y0.size() != p.l) throw InputError("start has wrong dimension");
  const double tol = std::max(default_active_tol(p.bundle), 1e-9);
  active_set(p.bundle, p.trunc(), 0.0, x0, tol);  // feasibility of the start
  const int N = std::max(1, static_cast<int>(std::ceil(p.T / h - 1e-9)));
  const double hh = p.T / N;
  const VarLayout L = p.layout();
  Trajectory tr;
  tr.gamma = 0.0;
  tr.diag.integrator = "catch-up";
  Vec x = x0, y = y0;
  const int nxi = p.penalized_count();
  auto push = [&](double t, const Vec& xi, double zeta) {
    tr.t.push_back(t);
    tr.x.push_back(x);
    tr.y.push_back(y);
    tr.xi.push_back(xi);
    tr.zeta.push_back(zeta);
  };
  push(0.0, Vec::Zero(nxi), 0.0);
  for (int j = 0; j < N; ++j) {
    const double t = j * hh, tn = (j + 1 == N) ? p.T : (j + 1) * hh;
    const Vec uj = u.at(t + 0.5 * hh);
    auto vars = pack_vars(L, t, x, y, uj);
    Vec fx(p.n), gy(p.l);
    for (int i = 0; i < p.n; ++i) fx[i] = p.f[i].eval(vars);
    for (int i = 0; i < p.l; ++i) gy[i] = p.g[i].eval(vars);
    ProjectionResult pr = project(p.bundle, p.trunc(), tn, x + hh * fx);
    x = pr.point;
    y = y + hh * gy;
    double zeta = 0.0;
    if (p.truncation.enabled && p.l > 0) {
      const Vec c = p.truncation.center_y.value(tn);
      const double d = (y - c).norm(), R = p.truncation.radius_y;
      if (d > R) {
        zeta = (d / R - 1.0) / hh;
        y = c + (y - c) * (R / d);
      }
    }
    tr.u.push_back(uj);
    push(tn, pr.multipliers / hh, zeta);
  }
  return tr;
}

Trajectory catch_up_extrapolated(const SweepingProblem& p, const ControlSignal& u, const Vec& x0,
                                 const Vec& y0, double h) {
  Trajectory coarse = catch_up(p, u, x0, y0, h);
  Trajectory fine = catch_up(p, u, x0, y0, h / 2);
  Trajectory out = coarse;
  out.diag.integrator = "catch-up-richardson";
  for (int j = 0; j < coarse.nodes(); ++j) {
    const int jf = 2 * j;
    out.x[j] = 2.0 * fine.x[jf] - coarse.x[j];
    out.y[j] = 2.0 * fine.y[jf] - coarse.y[j];
    out.xi[j] = fine.xi[jf];
    out.zeta[j] = fine.zeta[jf];
  }
  return out;
}

// ---------------------------------------------------------------- Hausdorff

double hausdorff_sample(const SampledSet& A, const SampledSet& B, const Box& box, int samples,
                        std::mt19937_64& rng) {
  if (samples < 100) throw InputError("Hausdorff sampling needs at least 100 samples");
  double best = 0.0;
  int used = 0;
  for (int s = 0; s < samples; ++s) {
    const Vec z = box.sample(rng);
    try {
      const Vec a = A.contains(z) ? z : A.project(z);
      const double d = B.contains(a) ? 0.0 : (a - B.project(a)).norm();
      best = std::max(best, d);
      ++used;
    } catch (const NumericalError&) {
      // sample outside the projection's basin; skipped
    }
  }
  if (used == 0) throw NumericalError("Hausdorff sampling: no usable samples");
  return best;
}

// ---------------------------------------------------------------- audit

std::vector<PathSample> reference_samples(const SweepingProblem& p, int count) {
  if (!p.truncation.enabled) throw InputError("problem has no reference path (global mode)");
  std::vector<PathSample> out;
  for (int j = 0; j < count; ++j) {
    const double t = p.T * j / std::max(1, count - 1);
    out.push_back({t, p.truncation.center_x.value(t), p.truncation.center_y.value(t)});
  }
  return out;
}

std::vector<PathSample> trajectory_samples(const Trajectory& tr, int count) {
  std::vector<PathSample> out;
  const int N = tr.nodes();
  for (int j = 0; j < count; ++j) {
    const int idx = static_cast<int>(std::lround(static_cast<double>(j) * (N - 1) / std::max(1, count - 1)));
    out.push_back({tr.t[idx], tr.x[idx], tr.y[idx]});
  }
  return out;
}

ConstantsAudit audit_constants(const SweepingProblem& p, const std::vector<PathSample>& path,
                               int samples, std::mt19937_64& rng) {
  if (path.empty()) throw InputError("constants audit needs path samples");
  ConstantsAudit out;
  const double tol = std::max(default_active_tol(p.bundle), 1e-9);
  // CQ along the path and at boundary points obtained by projecting nearby points.
  auto cq_at = [&](double t, const Vec& x) {
    try {
      CqResult c = cq_eta(p.bundle, p.trunc(), t, x, tol);
      if (!c.vacuous) {
        out.min_cq_norm = std::min(out.min_cq_norm, c.min_norm);
        out.active_samples++;
      }
    } catch (const InfeasiblePoint&) {
    }
  };
  Vec lo = path[0].x, hi = path[0].x;
  for (const auto& s : path) {
    cq_at(s.t, s.x);
    lo = lo.cwiseMin(s.x);
    hi = hi.cwiseMax(s.x);
  }
  const double extent = std::max(1.0, (hi - lo).norm());
  std::normal_distribution<double> N(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(path.size()) - 1);
  for (int s = 0; s < samples; ++s) {
    const PathSample& ps = path[pick(rng)];
    Vec z = ps.x;
    for (int j = 0; j < z.size(); ++j) z[j] += 0.05 * extent * N(rng);
    try {
      SetSlice sl(p.bundle, p.trunc(), ps.t);
      bool inside = true;
      for (int i = 0; i < sl.count(); ++i) inside = inside && sl.value(i, z) <= 0;
      if (!inside) cq_at(ps.t, project(sl, z, 1e-12).point);
    } catch (const NumericalError&) {
    }
  }
  if (out.active_samples == 0)
    throw InputError("constants audit: no active constraint found near the path; supply eta_bar");
  auto& c = out.constants;
  c.sampled = true;
  c.eta_bar = 0.99 * out.min_cq_norm / 2.0;
  if (p.truncation.enabled) c.eta_bar = std::min(c.eta_bar, 0.99 * p.truncation.radius_x / 2.0);
  // L_psi over a box around the path
  Box region;
  region.lo = Vec(p.n + 1);
  region.hi = Vec(p.n + 1);
  region.lo[0] = 0.0;
  region.hi[0] = p.T;
  region.lo.tail(p.n) = lo.array() - 0.1 * extent;
  region.hi.tail(p.n) = hi.array() + 0.1 * extent;
  c.L_psi = p.r() > 0 ? lipschitz_estimate(p.bundle, region, std::max(samples, 2), rng) : 0.0;
  // M_h on the path, over a grid of controls (corners and midpoints)
  const VarLayout L = p.layout();
  for (const auto& s : path) {
    const int j = p.m > 0 ? p.U.index(s.t) : 0;
    int combos = 1;
    for (int k = 0; k < p.m; ++k) combos *= 3;
    for (int cidx = 0; cidx < combos; ++cidx) {
      Vec u(p.m);
      int rem = cidx;
      for (int k = 0; k < p.m; ++k) {
        const int w = rem % 3;
        rem /= 3;
        u[k] = p.U.lo[j][k] + 0.5 * w * (p.U.hi[j][k] - p.U.lo[j][k]);
      }
      auto vars = pack_vars(L, s.t, s.x, s.y, u);
      double h2 = 0.0;
      for (const auto& f : p.f) h2 += std::pow(f.eval(vars), 2);
      for (const auto& g : p.g) h2 += std::pow(g.eval(vars), 2);
      c.M_h = std::max(c.M_h, std::sqrt(h2));
    }
  }
  if (p.truncation.enabled) {
    const int K = 257;
    for (int j = 0; j + 1 < K; ++j) {
      const double t0 = p.T * j / (K - 1), t1 = p.T * (j + 1) / (K - 1);
      Vec a(p.n + p.l), b(p.n + p.l);
      a << p.truncation.center_x.value(t0), p.truncation.center_y.value(t0);
      b << p.truncation.center_x.value(t1), p.truncation.center_y.value(t1);
      out.L_ref = std::max(out.L_ref, (b - a).norm() / (t1 - t0));
    }
    c.L_bar = std::max(c.L_psi, p.truncation.radius_y * out.L_ref);
  } else {
    c.L_bar = c.L_psi;
  }
  if (!(c.L_bar > 0)) c.L_bar = 1e-12;
  c.mu_bar = c.L_bar * (1.0 + c.M_h);
  return out;
}

}  // namespace sweep
