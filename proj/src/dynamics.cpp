#include "sweep/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sweep/errors.hpp"

namespace sweep {

// ---------------------------------------------------------------- schedule

double PenaltySchedule::threshold() const { return 2.0 * mu_bar * std::exp(1.0) / (eta_bar * eta_bar); }

PenaltySchedule make_schedule(const std::vector<double>& gammas, double eta_bar, double mu_bar,
                              double L_bar, int generators, double delta_bar) {
  if (gammas.empty()) throw InputError("penalty ladder is empty");
  if (!(eta_bar > 0) || !(mu_bar > 0) || !(L_bar > 0))
    throw InputError("schedule constants eta_bar, mu_bar, L_bar must be positive");
  if (generators < 1) throw InputError("schedule needs at least one generator");
  PenaltySchedule s;
  s.eta_bar = eta_bar;
  s.mu_bar = mu_bar;
  s.L_bar = L_bar;
  s.generators = generators;
  s.delta_bar = delta_bar;
  const double thr = s.threshold();
  for (std::size_t k = 0; k < gammas.size(); ++k) {
    if (k > 0 && !(gammas[k] > gammas[k - 1])) throw InputError("penalty ladder must increase");
    if (!(gammas[k] > thr)) {
      std::ostringstream os;
      os.precision(17);
      os << "gamma = " << gammas[k] << " is not admissible: need gamma > 2 mu e / eta^2 = " << thr;
      throw InputError(os.str());
    }
  }
  const double target = 2.0 * mu_bar / (eta_bar * eta_bar);
  const double G = generators;
  for (double g : gammas) {
    const double a = std::log(eta_bar * eta_bar * g / (2.0 * mu_bar)) / g;
    const double id = g * std::exp(-g * a);
    if (std::abs(id - target) > 1e-12 * target)
      throw NumericalError("penalty schedule identity failed to round-off accuracy");
    s.gammas.push_back(g);
    s.alphas.push_back(a);
    s.sigmas.push_back(G * L_bar / (2.0 * eta_bar * eta_bar) * (std::log(G) / g + a));
    if (std::isfinite(delta_bar)) {
      const double r2 = delta_bar * delta_bar - 2.0 * a;
      if (!(r2 > 0)) throw InputError("y-ball radius too small for this penalty level");
      s.rhos.push_back(std::sqrt(r2));
    }
  }
  return s;
}

PenaltySchedule make_schedule(const SweepingProblem& p, const std::vector<double>& gammas) {
  if (!p.constants) throw InputError("problem has no audited constants; run the audit or supply them");
  const auto& c = *p.constants;
  return make_schedule(gammas, c.eta_bar, c.mu_bar, c.L_bar, p.penalized_count(),
                       p.truncation.enabled ? p.truncation.radius_y
                                            : std::numeric_limits<double>::quiet_NaN());
}

std::vector<double> geometric_ladder(double lo, double hi, double factor) {
  if (!(lo > 0) || !(hi >= lo) || !(factor > 1)) throw InputError("ladder needs 0 < lo <= hi, factor > 1");
  std::vector<double> out;
  for (double g = lo; g <= hi * (1 + 1e-9); g *= factor) out.push_back(g);
  return out;
}

// ---------------------------------------------------------------- controls

ControlSignal ControlSignal::constant(double T, const Vec& u) {
  return ControlSignal{{0.0, T}, {u}};
}

ControlSignal ControlSignal::uniform(double T, std::vector<Vec> values) {
  if (values.empty()) throw InputError("control signal needs at least one interval");
  ControlSignal c;
  const int N = static_cast<int>(values.size());
  for (int j = 0; j <= N; ++j) c.breaks.push_back(T * j / N);
  c.breaks.back() = T;
  c.values = std::move(values);
  return c;
}

Vec ControlSignal::at(double t) const {
  if (values.empty()) return Vec();
  auto it = std::upper_bound(breaks.begin(), breaks.end(), t);
  int j = static_cast<int>(it - breaks.begin()) - 1;
  j = std::clamp(j, 0, intervals() - 1);
  return values[j];
}

// ---------------------------------------------------------------- trajectory

const Vec& Trajectory::u_at_node(int j) const {
  return u.at(std::min<int>(j, static_cast<int>(u.size()) - 1));
}

Vec Trajectory::state_at(double s) const {
  const int N = nodes();
  const int n = static_cast<int>(x[0].size()), l = static_cast<int>(y[0].size());
  auto pack = [&](int j) {
    Vec z(n + l);
    z << x[j], y[j];
    return z;
  };
  if (s <= t.front()) return pack(0);
  if (s >= t.back()) return pack(N - 1);
  int j = static_cast<int>(std::upper_bound(t.begin(), t.end(), s) - t.begin()) - 1;
  const double w = (s - t[j]) / (t[j + 1] - t[j]);
  return (1 - w) * pack(j) + w * pack(j + 1);
}

double sup_distance(const Trajectory& a, const Trajectory& b) {
  double d = 0.0;
  for (int j = 0; j < a.nodes(); ++j) {
    Vec za(a.x[j].size() + a.y[j].size());
    za << a.x[j], a.y[j];
    d = std::max(d, (za - b.state_at(a.t[j])).norm());
  }
  return d;
}

std::vector<double> output_grid(double T, const GridSpec& g, const ControlSignal& u) {
  if (g.intervals < 1) throw InputError("grid needs at least one interval");
  std::vector<double> t;
  for (int j = 0; j <= g.intervals; ++j) t.push_back(T * j / g.intervals);
  for (double b : u.breaks)
    if (b > 0 && b < T) t.push_back(b);
  std::sort(t.begin(), t.end());
  std::vector<double> out;
  for (double s : t)
    if (out.empty() || s - out.back() > 1e-12 * std::max(1.0, T)) out.push_back(s);
  out.back() = T;
  return out;
}

// ---------------------------------------------------------------- penalized system

PenalizedSystem::PenalizedSystem(const SweepingProblem& p, double gamma)
    : p_(p), gamma_(gamma), n_(p.n), l_(p.l), m_(p.m), r_(p.r()), trunc_(p.truncation.enabled) {
  if (!(gamma > 0)) throw InputError("penalty level gamma must be positive");
  const VarLayout L = p.layout();
  vars_.assign(L.size(), 0.0);
  auto add = [&](const PolyExpr& h) {
    std::vector<PolyExpr> row;
    for (int j = 0; j < n_; ++j) row.push_back(h.diff(L.x(j)));
    for (int j = 0; j < l_; ++j) row.push_back(h.diff(L.y(j)));
    dh_dz_.push_back(std::move(row));
    dh_dt_.push_back(h.diff(0));
  };
  for (const auto& h : p.f) add(h);
  for (const auto& h : p.g) add(h);
}

double PenalizedSystem::exp_term(double a) const {
  // Capped so that wildly infeasible trial stages produce huge but finite
  // values; the step controller rejects them.
  return std::exp(std::min(a, 600.0));
}

void PenalizedSystem::drift(double t, const Vec& z, const Vec& u, Vec& h) const {
  vars_[0] = t;
  for (int j = 0; j < n_ + l_; ++j) vars_[1 + j] = z[j];
  for (int j = 0; j < m_; ++j) vars_[1 + n_ + l_ + j] = u[j];
  h.resize(n_ + l_);
  for (int i = 0; i < n_; ++i) h[i] = p_.f[i].eval(vars_);
  for (int i = 0; i < l_; ++i) h[n_ + i] = p_.g[i].eval(vars_);
}

double PenalizedSystem::rhs(double t, const Vec& z, const Vec& u, Vec& dz) const {
  drift(t, z, u, dz);
  const auto& B = p_.bundle;
  double sigma = 0.0;
  for (int i = 0; i < r_; ++i) {
    const double e = exp_term(gamma_ * B.psi[i].eval(vars_));
    sigma += e;
    const double c = gamma_ * e;
    if (c < 1e-300) continue;
    for (int j = 0; j < n_; ++j) dz[j] -= c * B.grad_x[i][j].eval(vars_);
  }
  if (trunc_) {
    const auto& T = p_.truncation;
    Vec d = z.head(n_) - T.center_x.value(t);
    const double e = exp_term(gamma_ * 0.5 * (d.squaredNorm() - T.radius_x * T.radius_x));
    sigma += e;
    dz.head(n_) -= gamma_ * e * d;
    if (l_ > 0) {
      Vec dy = z.tail(l_) - T.center_y.value(t);
      const double ey = exp_term(gamma_ * 0.5 * (dy.squaredNorm() - T.radius_y * T.radius_y));
      dz.tail(l_) -= gamma_ * ey * dy;
    }
  }
  return sigma;
}

double PenalizedSystem::potential(double t, const Vec& z, Vec* grad, Mat* hess) const {
  vars_[0] = t;
  for (int j = 0; j < n_; ++j) vars_[1 + j] = z[j];
  const int d = n_ + l_;
  if (grad) grad->setZero(d);
  if (hess) hess->setZero(d, d);
  const auto& B = p_.bundle;
  double phi = 0.0;
  Vec gi(n_);
  for (int i = 0; i < r_; ++i) {
    const double e = exp_term(gamma_ * B.psi[i].eval(vars_));
    phi += e;
    if (e < 1e-300 || (!grad && !hess)) continue;
    for (int j = 0; j < n_; ++j) gi[j] = B.grad_x[i][j].eval(vars_);
    if (grad) grad->head(n_) += gamma_ * e * gi;
    if (hess) {
      auto blk = hess->topLeftCorner(n_, n_);
      for (int j = 0; j < n_; ++j)
        for (int k = 0; k < n_; ++k)
          blk(j, k) += gamma_ * e * (B.hess[i][j * n_ + k].eval(vars_) + gamma_ * gi[j] * gi[k]);
    }
  }
  if (trunc_) {
    const auto& T = p_.truncation;
    Vec dx = z.head(n_) - T.center_x.value(t);
    const double e = exp_term(gamma_ * 0.5 * (dx.squaredNorm() - T.radius_x * T.radius_x));
    phi += e;
    if (grad) grad->head(n_) += gamma_ * e * dx;
    if (hess)
      hess->topLeftCorner(n_, n_) +=
          gamma_ * e * (Mat::Identity(n_, n_) + gamma_ * dx * dx.transpose());
    if (l_ > 0) {
      Vec dy = z.tail(l_) - T.center_y.value(t);
      const double ey = exp_term(gamma_ * 0.5 * (dy.squaredNorm() - T.radius_y * T.radius_y));
      phi += ey;
      if (grad) grad->tail(l_) += gamma_ * ey * dy;
      if (hess)
        hess->bottomRightCorner(l_, l_) +=
            gamma_ * ey * (Mat::Identity(l_, l_) + gamma_ * dy * dy.transpose());
    }
  }
  return phi;
}

void PenalizedSystem::penalty_terms(double t, const Vec& z, std::vector<double>& vals,
                                    std::vector<Vec>& grads, std::vector<Mat>* hess) const {
  vars_[0] = t;
  for (int j = 0; j < n_; ++j) vars_[1 + j] = z[j];
  const int d = n_ + l_;
  const int count = r_ + (trunc_ ? 1 + (l_ > 0 ? 1 : 0) : 0);
  vals.resize(count);
  grads.assign(count, Vec::Zero(d));
  if (hess) hess->assign(count, Mat::Zero(d, d));
  const auto& B = p_.bundle;
  for (int i = 0; i < r_; ++i) {
    vals[i] = B.psi[i].eval(vars_);
    for (int j = 0; j < n_; ++j) grads[i][j] = B.grad_x[i][j].eval(vars_);
    if (hess)
      for (int j = 0; j < n_; ++j)
        for (int q = 0; q < n_; ++q) (*hess)[i](j, q) = B.hess[i][j * n_ + q].eval(vars_);
  }
  if (trunc_) {
    const auto& T = p_.truncation;
    Vec dx = z.head(n_) - T.center_x.value(t);
    vals[r_] = 0.5 * (dx.squaredNorm() - T.radius_x * T.radius_x);
    grads[r_].head(n_) = dx;
    if (hess) (*hess)[r_].topLeftCorner(n_, n_).setIdentity();
    if (l_ > 0) {
      Vec dy = z.tail(l_) - T.center_y.value(t);
      vals[r_ + 1] = 0.5 * (dy.squaredNorm() - T.radius_y * T.radius_y);
      grads[r_ + 1].tail(l_) = dy;
      if (hess) (*hess)[r_ + 1].bottomRightCorner(l_, l_).setIdentity();
    }
  }
}

void PenalizedSystem::multipliers(double t, const Vec& z, Vec& xi, double& zeta) const {
  vars_[0] = t;
  for (int j = 0; j < n_; ++j) vars_[1 + j] = z[j];
  xi.resize(r_ + (trunc_ ? 1 : 0));
  for (int i = 0; i < r_; ++i) xi[i] = gamma_ * std::exp(gamma_ * p_.bundle.psi[i].eval(vars_));
  zeta = 0.0;
  if (trunc_) {
    xi[r_] = gamma_ * std::exp(gamma_ * p_.truncation.psi_ball(t, z.head(n_)));
    if (l_ > 0) zeta = gamma_ * std::exp(gamma_ * p_.truncation.phi(t, z.tail(l_)));
  }
}

void PenalizedSystem::drift_jacobian(double t, const Vec& z, const Vec& u, Mat& Jz) const {
  vars_[0] = t;
  for (int j = 0; j < n_ + l_; ++j) vars_[1 + j] = z[j];
  for (int j = 0; j < m_; ++j) vars_[1 + n_ + l_ + j] = u[j];
  const int d = n_ + l_;
  Jz.resize(d, d);
  for (int c = 0; c < d; ++c)
    for (int k = 0; k < d; ++k) Jz(c, k) = dh_dz_[c][k].eval(vars_);
}

void PenalizedSystem::jacobian(double t, const Vec& z, const Vec& u, Mat& Jz, Vec* Jt) const {
  drift_jacobian(t, z, u, Jz);
  const int d = n_ + l_;
  if (Jt) {
    Jt->resize(d);
    for (int c = 0; c < d; ++c) (*Jt)[c] = dh_dt_[c].eval(vars_);
  }
  const auto& B = p_.bundle;
  Vec gi(n_), tg(n_);
  for (int i = 0; i < r_; ++i) {
    const double xi = gamma_ * exp_term(gamma_ * B.psi[i].eval(vars_));
    if (xi < 1e-300) continue;
    for (int j = 0; j < n_; ++j) gi[j] = B.grad_x[i][j].eval(vars_);
    auto blk = Jz.topLeftCorner(n_, n_);
    for (int j = 0; j < n_; ++j)
      for (int k = 0; k < n_; ++k)
        blk(j, k) -= xi * (B.hess[i][j * n_ + k].eval(vars_) + gamma_ * gi[j] * gi[k]);
    if (Jt) {
      const double pt = B.dt[i].eval(vars_);
      for (int j = 0; j < n_; ++j) tg[j] = B.dt_grad[i][j].eval(vars_);
      Jt->head(n_) -= xi * (tg + gamma_ * pt * gi);
    }
  }
  if (trunc_) {
    const auto& T = p_.truncation;
    Vec dx = z.head(n_) - T.center_x.value(t);
    const double xi = gamma_ * exp_term(gamma_ * 0.5 * (dx.squaredNorm() - T.radius_x * T.radius_x));
    Jz.topLeftCorner(n_, n_) -= xi * (Mat::Identity(n_, n_) + gamma_ * dx * dx.transpose());
    if (Jt) {
      Vec cd = T.center_x.derivative(t);
      Jt->head(n_) -= xi * (-cd - gamma_ * dx.dot(cd) * dx);
    }
    if (l_ > 0) {
      Vec dy = z.tail(l_) - T.center_y.value(t);
      const double ze = gamma_ * exp_term(gamma_ * 0.5 * (dy.squaredNorm() - T.radius_y * T.radius_y));
      Jz.bottomRightCorner(l_, l_) -= ze * (Mat::Identity(l_, l_) + gamma_ * dy * dy.transpose());
      if (Jt) {
        Vec cd = T.center_y.derivative(t);
        Jt->tail(l_) -= ze * (-cd - gamma_ * dy.dot(cd) * dy);
      }
    }
  }
}

// ---------------------------------------------------------------- integration

namespace {

// Dormand–Prince 5(4) tableau.
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;

struct Recorder {
  const PenalizedSystem& sys;
  const SweepingProblem& p;
  double gamma, level;
  Trajectory& tr;

  void record(double t, const Vec& z, double sigma) {
    tr.t.push_back(t);
    tr.x.push_back(z.head(p.n));
    tr.y.push_back(z.tail(p.l));
    Vec xi;
    double zeta;
    sys.multipliers(t, z, xi, zeta);
    tr.xi.push_back(xi);
    tr.zeta.push_back(zeta);
    for (int i = 0; i < xi.size(); ++i)
      tr.diag.max_constraint = std::max(tr.diag.max_constraint, std::log(xi[i] / gamma) / gamma);
    const double ratio = sigma / level;
    tr.diag.max_sigma_ratio = std::max(tr.diag.max_sigma_ratio, ratio);
    if (ratio > 1.0 + 1e-6) tr.diag.invariance_flag = true;
  }
};

void dopri_cell(const PenalizedSystem& sys, double gamma, const IntegratorOptions& opt,
                const Vec& u, double t0, double t1, Vec& z, double& h, Trajectory& tr) {
  const int d = sys.dim();
  Vec k1(d), k2(d), k3(d), k4(d), k5(d), k6(d), k7(d), zs(d), zn(d), err(d);
  double sigma = sys.rhs(t0, z, u, k1);
  tr.diag.rhs_evals++;
  double t = t0;
  const double span = std::max(1.0, std::abs(t1));
  while (t < t1) {
    double hmax = opt.h_max;
    if (sigma > opt.boundary_trigger) hmax = std::min(hmax, opt.c_step / gamma);
    h = std::min(h, hmax);
    bool last = false;
    if (t + h >= t1 - 1e-14 * span) {
      h = t1 - t;
      last = true;
    }
    zs = z + h * a21 * k1;
    sys.rhs(t + c2 * h, zs, u, k2);
    zs = z + h * (a31 * k1 + a32 * k2);
    sys.rhs(t + c3 * h, zs, u, k3);
    zs = z + h * (a41 * k1 + a42 * k2 + a43 * k3);
    sys.rhs(t + c4 * h, zs, u, k4);
    zs = z + h * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4);
    sys.rhs(t + c5 * h, zs, u, k5);
    zs = z + h * (a61 * k1 + a62 * k2 + a63 * k3 + a64 * k4 + a65 * k5);
    sys.rhs(t + h, zs, u, k6);
    zn = z + h * (a71 * k1 + a73 * k3 + a74 * k4 + a75 * k5 + a76 * k6);
    const double sig_new = sys.rhs(t + h, zn, u, k7);
    tr.diag.rhs_evals += 6;
    err = h * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 + e6 * k6 + e7 * k7);
    double en = 0.0;
    for (int i = 0; i < d; ++i) {
      const double sc = opt.atol + opt.rtol * std::max(std::abs(z[i]), std::abs(zn[i]));
      en += (err[i] / sc) * (err[i] / sc);
    }
    en = std::sqrt(en / d);
    if (std::isfinite(en) && en <= 1.0) {
      t = last ? t1 : t + h;
      z = zn;
      k1 = k7;
      sigma = sig_new;
      tr.diag.steps_accepted++;
      tr.diag.h_min = std::min(tr.diag.h_min, h);
      const double fac = en > 0 ? 0.9 * std::pow(en, -0.2) : 5.0;
      if (!last) h *= std::clamp(fac, 0.2, 5.0);
      else h = std::max(h, std::min(hmax, h * std::clamp(fac, 0.2, 5.0)));
    } else {
      tr.diag.steps_rejected++;
      const double fac = std::isfinite(en) ? 0.9 * std::pow(en, -0.2) : 0.1;
      h *= std::clamp(fac, 0.1, 0.9);
    }
    if (h < 1e-14 * span) {
      std::ostringstream os;
      os.precision(17);
      os << "step-size underflow (stiffness) at t = " << t;
      throw NumericalError(os.str());
    }
    if (tr.diag.steps_accepted + tr.diag.steps_rejected > opt.max_steps)
      throw NumericalError("integrator exceeded the maximum number of steps at t = " +
                           std::to_string(t));
  }
}

// Solves Z = a - c grad Phi(t, Z) for the penalty potential Phi. Written in
// log-multiplier form, mu_i = log(c gamma e^{gamma psi_i}), Newton sees a
// linear relation between mu and psi instead of an exponential wall, which
// would otherwise limit progress to ~1/gamma per iteration. mu carries the
// warm start between stages.
void implicit_stage(const PenalizedSystem& sys, double t, const Vec& a, double c, Vec& Z, Vec& mu) {
  const int d = sys.dim();
  const double gam = sys.gamma();
  const double lc = std::log(c * gam);
  std::vector<double> vals;
  std::vector<Vec> grads;
  std::vector<Mat> hess;
  sys.penalty_terms(t, Z, vals, grads, &hess);
  const int k = static_cast<int>(vals.size());
  if (mu.size() != k) {
    mu.resize(k);
    // Cold start: never guess xi above 1. Newton raises mu quickly but can
    // lower it by only ~1 per iteration while the multiplier dominates.
    for (int i = 0; i < k; ++i) mu[i] = lc + std::min(gam * vals[i], -std::log(gam));
  }
  const double scale = 1.0 + a.norm();
  Vec R1(d), R2(k), rhs(d), dZ(d), dmu(k);
  Mat K(d, d);
  bool polished = false;
  for (int it = 0; it < 100; ++it) {
    R1 = Z - a;
    K.setIdentity();
    for (int i = 0; i < k; ++i) {
      mu[i] = std::min(mu[i], 600.0);
      const double lam = std::exp(mu[i]);
      R2[i] = mu[i] - lc - gam * vals[i];
      R1 += lam * grads[i];
      K += lam * (hess[i] + gam * grads[i] * grads[i].transpose());
    }
    // gamma psi carries round-off of order gamma |Z|^2 eps
    const double tol2 = 1e-9 + 1e-14 * gam * (1.0 + Z.squaredNorm());
    // One extra step past the tolerance takes the error to round-off, which
    // keeps the map from data to solution smooth for finite differences.
    const bool done = R1.norm() <= 1e-11 * scale && R2.lpNorm<Eigen::Infinity>() <= tol2;
    if (polished) return;
    polished = done;
    rhs = -R1;
    for (int i = 0; i < k; ++i) rhs += std::exp(mu[i]) * grads[i] * R2[i];
    Eigen::LLT<Mat> llt(K);
    double shift = 1e-10 * (1.0 + K.norm());
    while (llt.info() != Eigen::Success) {  // nonconvex generators
      llt.compute(K + shift * Mat::Identity(d, d));
      shift *= 10;
    }
    dZ = llt.solve(rhs);
    for (int i = 0; i < k; ++i) dmu[i] = -R2[i] + gam * grads[i].dot(dZ);
    // Multipliers grow by at most a factor e^4 per iteration; Z takes the
    // full step. Afterwards mu is lifted to the cold-start value at the new
    // Z, a bound the solution satisfies; this lets a term that the step has
    // newly violated enter the Newton matrix at once.
    Z += dZ;
    sys.penalty_terms(t, Z, vals, grads, &hess);
    for (int i = 0; i < k; ++i)
      mu[i] = std::max(mu[i] + std::min(dmu[i], 4.0), lc + std::min(gam * vals[i], -std::log(gam)));
  }
  throw NumericalError("implicit penalty stage did not converge at t = " + std::to_string(t));
}

// IMEX Runge-Kutta ARS(2,2,2): drift explicit, penalty implicit (L-stable,
// stiffly accurate, second order).
void imex_cell(const PenalizedSystem& sys, const Vec& u, double t0, double t1, int steps, Vec& z,
               Vec& mu, TrajectoryDiagnostics* diag) {
  const int d = sys.dim();
  const double G = 1.0 - 1.0 / std::sqrt(2.0);
  const double D = 1.0 - 1.0 / (2.0 * G);
  const double h = (t1 - t0) / steps;
  Vec e1(d), e2(d), a2(d), a3(d), Z2(d), Z3(d), p2(d);
  for (int s = 0; s < steps; ++s) {
    const double t = t0 + s * h;
    sys.drift(t, z, u, e1);
    a2 = z + h * G * e1;
    Z2 = z;
    implicit_stage(sys, t + G * h, a2, h * G, Z2, mu);
    p2 = (Z2 - a2) / (h * G);  // implicit force at stage 2
    sys.drift(t + G * h, Z2, u, e2);
    a3 = z + h * (D * e1 + (1.0 - D) * e2) + h * (1.0 - G) * p2;
    Z3 = Z2 + (Z2 - z) * ((1.0 - G) / G);
    implicit_stage(sys, t + h, a3, h * G, Z3, mu);
    z = Z3;
    if (diag) {
      diag->steps_accepted++;
      diag->rhs_evals += 2;
    }
    if (!z.allFinite()) throw NumericalError("IMEX integration diverged at t = " + std::to_string(t));
  }
  if (diag) diag->h_min = std::min(diag->h_min, h);
}

}  // namespace

void imex_propagate(const PenalizedSystem& sys, const Vec& u, double t0, double t1, int steps, Vec& z,
                    Vec& mu) {
  if (steps < 1) throw InputError("IMEX propagation needs at least one step");
  imex_cell(sys, u, t0, t1, steps, z, mu, nullptr);
}

Trajectory integrate_penalized(const SweepingProblem& p, double gamma, double alpha_k,
                               const ControlSignal& u, const Vec& x0, const Vec& y0,
                               const GridSpec& grid, const IntegratorOptions& opt) {
  if (x0.size() != p.n || y0.size() != p.l) throw InputError("start has wrong dimension");
  if (u.m() != p.m) throw InputError("control dimension does not match m");
  if (!u.breaks.empty() && std::abs(u.breaks.back() - p.T) > 1e-12 * std::max(1.0, p.T))
    throw InputError("control signal must cover [0, T]");
  for (int j = 0; j < u.intervals(); ++j)
    if (!p.U.contains(0.5 * (u.breaks[j] + u.breaks[j + 1]), u.values[j], 1e-12))
      throw InputError("control value outside the admissible box on interval " + std::to_string(j));
  PenalizedSystem sys(p, gamma);
  Vec z(p.n + p.l);
  z << x0, y0;
  {
    // Starting outside the penalty domain makes the exponentials overflow.
    Vec dz;
    const double s0 = sys.rhs(0.0, z, u.at(0.0), dz);
    if (!std::isfinite(s0) || s0 > 1e200)
      throw InfeasiblePoint("infeasible point: start lies outside the constraint set", -1);
  }
  Trajectory tr;
  tr.gamma = gamma;
  tr.diag.integrator = opt.fixed_steps_per_interval > 0 ? "imex-ars222-fixed" : "dopri5-adaptive";
  const double level = std::exp(-gamma * alpha_k);
  Recorder rec{sys, p, gamma, level, tr};
  std::vector<double> grid_t = output_grid(p.T, grid, u);
  Vec dz;
  rec.record(0.0, z, sys.rhs(0.0, z, u.at(0.0), dz));
  double h = std::min(opt.h_max, 1e-4);
  Vec mu;  // IMEX multiplier warm start
  for (std::size_t j = 0; j + 1 < grid_t.size(); ++j) {
    const double ta = grid_t[j], tb = grid_t[j + 1];
    const Vec uj = u.at(0.5 * (ta + tb));
    if (opt.fixed_steps_per_interval > 0)
      imex_cell(sys, uj, ta, tb, opt.fixed_steps_per_interval, z, mu, &tr.diag);
    else
      dopri_cell(sys, gamma, opt, uj, ta, tb, z, h, tr);
    tr.u.push_back(uj);
    rec.record(tb, z, sys.rhs(tb, z, uj, dz));
  }
  return tr;
}

// ---------------------------------------------------------------- starts

Vec interior_start(const SweepingProblem& p, const PenaltySchedule& s, int k, const Vec& c,
                   const Vec* d) {
  if (k < 0 || k >= s.size()) throw InputError("rung index out of range");
  const double tol = std::max(default_active_tol(p.bundle), 1e-9);
  ActiveSet a = active_set(p.bundle, p.trunc(), 0.0, c, tol);  // throws when infeasible
  const double g = s.gammas[k];
  const double level = std::exp(-g * s.alphas[k]);
  if (penalty_sum(p.bundle, p.trunc(), 0.0, c, g) <= level) return c;
  Vec dir;
  if (d) {
    dir = *d;
  } else {
    SetSlice sl(p.bundle, p.trunc(), 0.0);
    dir = Vec::Zero(p.n);
    if (!a.indices.empty()) {
      for (int i : a.indices) dir -= sl.grad(i, c);
    } else {
      // near-boundary interior point: weight gradients by their penalty terms
      for (int i = 0; i < sl.count(); ++i) dir -= std::exp(g * sl.value(i, c)) * sl.grad(i, c);
    }
  }
  if (!(dir.norm() > 0)) throw InputError("interior_start: inward direction vanishes");
  Vec out = c + s.sigmas[k] * dir / dir.norm();
  if (penalty_sum(p.bundle, p.trunc(), 0.0, out, g) > level)
    throw InputError("interior_start: shifted point is still outside the inner penalty set; "
                     "use a larger rung (k)");
  return out;
}

Vec interior_start_y(const SweepingProblem& p, const PenaltySchedule& s, int k, const Vec& d) {
  if (!p.truncation.enabled || p.l == 0) return d;
  const Vec c = p.truncation.center_y.value(0.0);
  const double rho = s.rhos.at(k);
  const double dist = (d - c).norm();
  const double target = rho * (1.0 - 1e-9);
  if (dist <= target) return d;
  return c + (d - c) * (target / dist);
}

// ---------------------------------------------------------------- reports

InvarianceReport invariance_report(const SweepingProblem& p, const Trajectory& traj,
                                   const PenaltySchedule& s, int k, double rel_tol) {
  InvarianceReport r;
  const double g = s.gammas.at(k);
  const double level = std::exp(-g * s.alphas[k]);
  r.multiplier_bound = 2.0 * s.mu_bar / (s.eta_bar * s.eta_bar);
  const double M_h = p.constants ? p.constants->M_h : 0.0;
  r.speed_bound = M_h + r.multiplier_bound * s.L_bar;
  if (!s.rhos.empty()) r.rho = s.rhos[k];
  PenalizedSystem sys(p, g);
  Vec z(p.n + p.l), dz;
  for (int j = 0; j < traj.nodes(); ++j) {
    z << traj.x[j], traj.y[j];
    double sum = 0.0;
    for (int i = 0; i < traj.xi[j].size(); ++i) sum += traj.xi[j][i];
    const double ratio = sum / g / level;
    if (j == 0) r.initial_sigma_ratio = ratio;
    r.max_sigma_ratio = std::max(r.max_sigma_ratio, ratio);
    r.max_xi_sum = std::max(r.max_xi_sum, sum);
    r.max_zeta = std::max(r.max_zeta, traj.zeta[j]);
    if (p.truncation.enabled && p.l > 0)
      r.max_y_distance = std::max(r.max_y_distance,
                                  (traj.y[j] - p.truncation.center_y.value(traj.t[j])).norm());
    sys.rhs(traj.t[j], z, traj.u_at_node(j), dz);
    r.max_speed = std::max({r.max_speed, dz.head(p.n).norm(), p.l ? dz.tail(p.l).norm() : 0.0});
    const bool bad = ratio > 1.0 + rel_tol;
    if (bad && r.first_violation < 0) r.first_violation = j;
  }
  r.sigma_ok = r.max_sigma_ratio <= 1.0 + rel_tol;
  r.y_ok = r.max_y_distance <= r.rho * (1.0 + rel_tol);
  r.multiplier_ok = std::max(r.max_xi_sum, r.max_zeta) <= r.multiplier_bound * (1.0 + rel_tol);
  r.speed_ok = r.max_speed <= r.speed_bound * (1.0 + rel_tol);
  return r;
}

SweepResult solve_sweeping(const SweepingProblem& p, const ControlSignal& u, const Vec& x0,
                           const Vec& y0, const PenaltySchedule& s, double tol,
                           const GridSpec& grid, const IntegratorOptions& opt) {
  if (!(tol > 0)) throw InputError("ladder tolerance must be positive");
  SweepResult res;
  Trajectory prev;
  for (int k = 0; k < s.size(); ++k) {
    const Vec xs = interior_start(p, s, k, x0);
    const Vec ys = interior_start_y(p, s, k, y0);
    Trajectory tr = integrate_penalized(p, s.gammas[k], s.alphas[k], u, xs, ys, grid, opt);
    res.gammas.push_back(s.gammas[k]);
    res.invariance.push_back(invariance_report(p, tr, s, k));
    if (k > 0) {
      const double d = std::max(sup_distance(tr, prev), sup_distance(prev, tr));
      res.residuals.push_back(d);
      if (d < tol) {
        res.converged = true;
        res.converged_rung = k;
        res.traj = std::move(tr);
        res.traj.limit = true;
        return res;
      }
    }
    prev = std::move(tr);
  }
  std::ostringstream os;
  os << "gamma ladder exhausted without meeting the Cauchy criterion (tol " << tol
     << "); residuals:";
  for (double r : res.residuals) os << " " << r;
  throw NumericalError(os.str());
}

// ---------------------------------------------------------------- multipliers

MultiplierResult multipliers_from_activeset(const SweepingProblem& p, double t, const Vec& x,
                                            const Vec& y, const Vec& u, double tol) {
  if (tol <= 0) tol = std::max(default_active_tol(p.bundle), 1e-9);
  ActiveSet a = active_set(p.bundle, p.trunc(), t, x, tol);
  MultiplierResult res;
  res.active = a.indices;
  if (p.constants) {
    // multiplier-form bound, with mu taken as the schedule's mu_bar
    res.bound = p.constants->mu_bar / (4.0 * p.constants->eta_bar * p.constants->eta_bar);
  }
  const int k = static_cast<int>(a.indices.size());
  res.lambda = Vec::Zero(k);
  if (k == 0) return res;
  SetSlice sl(p.bundle, p.trunc(), t);
  const VarLayout L = p.layout();
  auto vars = pack_vars(L, t, x, y, u);
  Vec f(p.n);
  for (int j = 0; j < p.n; ++j) f[j] = p.f[j].eval(vars);
  std::vector<Vec> grads;
  Vec b(k);
  for (int a_ = 0; a_ < k; ++a_) {
    const int i = a.indices[a_];
    grads.push_back(sl.grad(i, x));
    double dti;
    if (i < p.r())
      dti = p.bundle.time_partial(i, t, x);
    else
      dti = -(x - p.truncation.center_x.value(t)).dot(p.truncation.center_x.derivative(t));
    b[a_] = dti + grads.back().dot(f);
  }
  Mat G(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) G(i, j) = grads[i].dot(grads[j]);
  // LCP by support enumeration (active sets are small).
  const double scale = 1.0 + G.norm() + b.norm();
  bool found = false;
  double best_res = std::numeric_limits<double>::infinity();
  for (int mask = 0; mask < (1 << k) && k <= 12; ++mask) {
    std::vector<int> F;
    for (int i = 0; i < k; ++i)
      if (mask & (1 << i)) F.push_back(i);
    Vec lam = Vec::Zero(k);
    if (!F.empty()) {
      Mat GF(F.size(), F.size());
      Vec bF(F.size());
      for (std::size_t i = 0; i < F.size(); ++i) {
        bF[i] = b[F[i]];
        for (std::size_t j = 0; j < F.size(); ++j) GF(i, j) = G(F[i], F[j]);
      }
      Vec sol = GF.completeOrthogonalDecomposition().solve(bF);
      if ((GF * sol - bF).norm() > 1e-9 * scale) continue;
      for (std::size_t i = 0; i < F.size(); ++i) lam[F[i]] = sol[i];
    }
    if ((lam.array() < -1e-12 * scale).any()) continue;
    Vec w = G * lam - b;
    if ((w.array() < -1e-9 * scale).any()) continue;
    const double rr = std::abs(lam.dot(w));
    if (rr < best_res) {
      best_res = rr;
      res.lambda = lam.cwiseMax(0.0);
      found = true;
    }
  }
  if (!found) throw NumericalError("CQ failure at point: multiplier system has no solution");
  res.sum = res.lambda.sum();
  res.bound_violated = res.sum > res.bound;
  return res;
}

}  // namespace sweep
