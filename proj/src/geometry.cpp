#include "sweep/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "sweep/errors.hpp"

namespace sweep {

std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream) {
  // FNV-1a of the stream name, mixed with the seed through seed_seq.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

Vec Box::sample(std::mt19937_64& rng) const {
  std::uniform_real_distribution<double> U(0.0, 1.0);
  Vec v(lo.size());
  for (int k = 0; k < lo.size(); ++k) v[k] = lo[k] + (hi[k] - lo[k]) * U(rng);
  return v;
}

// ---------------------------------------------------------------- generators

GeneratorBundle::GeneratorBundle(int n_, std::vector<PolyExpr> generators)
    : n(n_), psi(std::move(generators)) {
  for (const auto& p : psi)
    if (p.nvars() != n + 1)
      throw InputError("generator must be a polynomial in (t, x) with " + std::to_string(n + 1) +
                       " variables");
  for (const auto& p : psi) {
    dt.push_back(p.diff(0));
    std::vector<PolyExpr> gx, h, tg;
    for (int j = 0; j < n; ++j) gx.push_back(p.diff(j + 1));
    for (int j = 0; j < n; ++j) {
      tg.push_back(gx[j].diff(0));
      for (int k = 0; k < n; ++k) h.push_back(gx[j].diff(k + 1));
    }
    grad_x.push_back(std::move(gx));
    hess.push_back(std::move(h));
    dt_grad.push_back(std::move(tg));
  }
}

namespace {
// (t, x) packed for polynomial evaluation
struct TX {
  TX(double t, const Vec& x) : v(x.size() + 1) {
    v[0] = t;
    for (int j = 0; j < x.size(); ++j) v[j + 1] = x[j];
  }
  std::vector<double> v;
};
}  // namespace

double GeneratorBundle::value(int i, double t, const Vec& x) const {
  return psi.at(i).eval(TX(t, x).v);
}

Vec GeneratorBundle::grad(int i, double t, const Vec& x) const {
  TX p(t, x);
  Vec g(n);
  for (int j = 0; j < n; ++j) g[j] = grad_x.at(i)[j].eval(p.v);
  return g;
}

double GeneratorBundle::time_partial(int i, double t, const Vec& x) const {
  return dt.at(i).eval(TX(t, x).v);
}

Mat GeneratorBundle::hessian(int i, double t, const Vec& x) const {
  TX p(t, x);
  Mat H(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) H(j, k) = hess.at(i)[j * n + k].eval(p.v);
  return H;
}

Vec GeneratorBundle::time_grad(int i, double t, const Vec& x) const {
  TX p(t, x);
  Vec g(n);
  for (int j = 0; j < n; ++j) g[j] = dt_grad.at(i)[j].eval(p.v);
  return g;
}

// ------------------------------------------------------------ reference path

ReferencePath ReferencePath::polynomial(std::vector<PolyExpr> components) {
  ReferencePath p;
  p.kind_ = Kind::Polynomial;
  p.dim_ = static_cast<int>(components.size());
  for (const auto& c : components) {
    if (c.nvars() != 1) throw InputError("reference path components must be polynomials in t");
    p.dpoly_.push_back(c.diff(0));
  }
  p.poly_ = std::move(components);
  return p;
}

ReferencePath ReferencePath::sampled(std::vector<double> times, std::vector<Vec> values) {
  if (times.size() < 2 || times.size() != values.size())
    throw InputError("sampled reference path needs at least two (time, value) pairs");
  for (std::size_t j = 1; j < times.size(); ++j)
    if (!(times[j] > times[j - 1])) throw InputError("reference path times must increase");
  ReferencePath p;
  p.kind_ = Kind::Sampled;
  p.dim_ = static_cast<int>(values[0].size());
  p.times_ = std::move(times);
  p.values_ = std::move(values);
  return p;
}

ReferencePath ReferencePath::function(int dim, std::function<Vec(double)> value,
                                      std::function<Vec(double)> derivative) {
  ReferencePath p;
  p.kind_ = Kind::Function;
  p.dim_ = dim;
  p.fn_ = std::move(value);
  p.dfn_ = std::move(derivative);
  return p;
}

ReferencePath ReferencePath::constant(const Vec& c) {
  std::vector<PolyExpr> comps;
  for (int k = 0; k < c.size(); ++k) comps.push_back(PolyExpr::constant(1, c[k]));
  return polynomial(std::move(comps));
}

Vec ReferencePath::value(double t) const {
  switch (kind_) {
    case Kind::Polynomial: {
      Vec v(dim_);
      const double tt[1] = {t};
      for (int k = 0; k < dim_; ++k) v[k] = poly_[k].eval(tt);
      return v;
    }
    case Kind::Sampled: {
      if (t <= times_.front()) return values_.front();
      if (t >= times_.back()) return values_.back();
      auto it = std::upper_bound(times_.begin(), times_.end(), t);
      std::size_t j = static_cast<std::size_t>(it - times_.begin()) - 1;
      double w = (t - times_[j]) / (times_[j + 1] - times_[j]);
      return (1.0 - w) * values_[j] + w * values_[j + 1];
    }
    case Kind::Function:
      return fn_(t);
    case Kind::None:
      break;
  }
  throw InputError("reference path is not set");
}

Vec ReferencePath::derivative(double t) const {
  switch (kind_) {
    case Kind::Polynomial: {
      Vec v(dim_);
      const double tt[1] = {t};
      for (int k = 0; k < dim_; ++k) v[k] = dpoly_[k].eval(tt);
      return v;
    }
    case Kind::Sampled: {
      std::size_t j;
      if (t <= times_.front())
        j = 0;
      else if (t >= times_.back())
        j = times_.size() - 2;
      else
        j = static_cast<std::size_t>(std::upper_bound(times_.begin(), times_.end(), t) -
                                     times_.begin()) - 1;
      return (values_[j + 1] - values_[j]) / (times_[j + 1] - times_[j]);
    }
    case Kind::Function:
      return dfn_(t);
    case Kind::None:
      break;
  }
  throw InputError("reference path is not set");
}

void Truncation::validate() const {
  if (!enabled) return;
  if (center_x.empty() || center_y.empty())
    throw InputError("truncation requires both reference paths");
  if (!(radius_x > 0.0) || !(radius_y > 0.0)) throw InputError("truncation radii must be positive");
  if (!(radius_x < radius_y))
    throw InputError("truncation radius for x must be smaller than the radius for y");
}

double Truncation::psi_ball(double t, const Vec& x) const {
  return 0.5 * ((x - center_x.value(t)).squaredNorm() - radius_x * radius_x);
}

double Truncation::phi(double t, const Vec& y) const {
  return 0.5 * ((y - center_y.value(t)).squaredNorm() - radius_y * radius_y);
}

// ------------------------------------------------------------ constraint sets

double SetSlice::value(int i, const Vec& x) const {
  if (i < b_.r()) return b_.value(i, t_, x);
  return trunc_->psi_ball(t_, x);
}

Vec SetSlice::grad(int i, const Vec& x) const {
  if (i < b_.r()) return b_.grad(i, t_, x);
  return x - trunc_->center_x.value(t_);
}

Mat SetSlice::hess(int i, const Vec& x) const {
  if (i < b_.r()) return b_.hessian(i, t_, x);
  return Mat::Identity(x.size(), x.size());
}

Vec PenaltySlice::weights(const Vec& x, double* lse) const {
  const int c = base_.count();
  Vec s(c);
  for (int i = 0; i < c; ++i) s[i] = gamma_ * base_.value(i, x);
  const double mx = s.maxCoeff();
  Vec w = (s.array() - mx).exp();
  const double tot = w.sum();
  if (lse) *lse = (mx + std::log(tot)) / gamma_;
  return w / tot;
}

double PenaltySlice::value(int, const Vec& x) const {
  double lse;
  weights(x, &lse);
  return lse + level_;
}

Vec PenaltySlice::grad(int, const Vec& x) const {
  Vec w = weights(x, nullptr);
  Vec g = Vec::Zero(x.size());
  for (int i = 0; i < w.size(); ++i) g += w[i] * base_.grad(i, x);
  return g;
}

Mat PenaltySlice::hess(int, const Vec& x) const {
  Vec w = weights(x, nullptr);
  const int n = static_cast<int>(x.size());
  Mat H = Mat::Zero(n, n);
  Vec gbar = Vec::Zero(n);
  for (int i = 0; i < w.size(); ++i) {
    Vec gi = base_.grad(i, x);
    H += w[i] * (base_.hess(i, x) + gamma_ * gi * gi.transpose());
    gbar += w[i] * gi;
  }
  H -= gamma_ * gbar * gbar.transpose();
  return H;
}

// ------------------------------------------------------------ operations

double default_active_tol(const GeneratorBundle& b) {
  double scale = 0.0;
  for (const auto& p : b.psi)
    for (const auto& t : p.terms()) scale = std::max(scale, std::abs(t.coef));
  return 1e-8 * (1.0 + scale);
}

double eval_generator(const GeneratorBundle& b, int i, double t, const Vec& x) {
  if (i < 0 || i >= b.r()) throw InputError("generator index out of range");
  if (x.size() != b.n) throw InputError("point dimension does not match the generators");
  return b.value(i, t, x);
}

ActiveSet active_set(const GeneratorBundle& b, const Truncation* trunc, double t, const Vec& x,
                     double tol) {
  if (!(tol > 0.0)) throw InputError("active-set tolerance must be positive");
  if (x.size() != b.n) throw InputError("point dimension does not match the generators");
  SetSlice s(b, trunc, t);
  ActiveSet a;
  a.tolerance = tol;
  for (int i = 0; i < s.count(); ++i) {
    const double v = s.value(i, x);
    a.values.push_back(v);
    if (v > tol)
      throw InfeasiblePoint("infeasible point: constraint " + std::to_string(i + 1) + " has value " +
                                std::to_string(v),
                            i);
    if (v >= -tol) a.indices.push_back(i);
  }
  return a;
}

std::vector<Vec> normal_cone_basis(const GeneratorBundle& b, const Truncation* trunc, double t,
                                   const Vec& x, double tol) {
  ActiveSet a = active_set(b, trunc, t, x, tol);
  SetSlice s(b, trunc, t);
  std::vector<Vec> out;
  for (int i : a.indices) out.push_back(s.grad(i, x));
  return out;
}

namespace {

// Minimize lam' G lam over {lam >= 0, sum lam = 1} restricted to the face F.
bool face_minimum(const Mat& G, const std::vector<int>& F, Vec& lam_out, double& val_out) {
  const int k = static_cast<int>(F.size());
  Mat K = Mat::Zero(k + 1, k + 1);
  Vec rhs = Vec::Zero(k + 1);
  for (int a = 0; a < k; ++a) {
    for (int c = 0; c < k; ++c) K(a, c) = 2.0 * G(F[a], F[c]);
    K(a, k) = 1.0;
    K(k, a) = 1.0;
  }
  rhs[k] = 1.0;
  Vec sol = K.completeOrthogonalDecomposition().solve(rhs);
  if ((K * sol - rhs).norm() > 1e-9 * (1.0 + K.norm())) return false;
  Vec lam = Vec::Zero(G.rows());
  for (int a = 0; a < k; ++a) {
    if (sol[a] < -1e-12) return false;
    lam[F[a]] = std::max(0.0, sol[a]);
  }
  const double s = lam.sum();
  if (!(s > 0)) return false;
  lam /= s;
  lam_out = lam;
  val_out = lam.dot(G * lam);
  return true;
}

// Euclidean projection onto the probability simplex.
Vec project_simplex(const Vec& v) {
  const int k = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + k);
  std::sort(u.begin(), u.end(), std::greater<>());
  double css = 0.0, theta = 0.0;
  for (int j = 0; j < k; ++j) {
    css += u[j];
    const double th = (css - 1.0) / (j + 1);
    if (u[j] - th > 0) theta = th;
  }
  return (v.array() - theta).max(0.0).matrix();
}

}  // namespace

SimplexMinNorm simplex_min_norm(const std::vector<Vec>& g, double stationarity_tol) {
  const int k = static_cast<int>(g.size());
  if (k == 0) throw InputError("simplex minimum over an empty set of vectors");
  Mat G(k, k);
  for (int a = 0; a < k; ++a)
    for (int c = 0; c < k; ++c) G(a, c) = g[a].dot(g[c]);
  SimplexMinNorm best;
  best.value = std::numeric_limits<double>::infinity();
  if (k <= 4) {
    for (int mask = 1; mask < (1 << k); ++mask) {
      std::vector<int> F;
      for (int a = 0; a < k; ++a)
        if (mask & (1 << a)) F.push_back(a);
      Vec lam;
      double val;
      if (face_minimum(G, F, lam, val) && val < best.value) {
        best.value = val;
        best.lambda = lam;
      }
    }
  } else {
    Vec lam = Vec::Constant(k, 1.0 / k);
    const double L = 2.0 * G.norm() + 1e-300;
    for (int it = 0; it < 200000; ++it) {
      Vec next = project_simplex(lam - (2.0 * G * lam) / L);
      const double step = (next - lam).norm();
      lam = next;
      if (step * L < stationarity_tol) break;
    }
    best.value = lam.dot(G * lam);
    best.lambda = lam;
  }
  best.value = std::sqrt(std::max(0.0, best.value));
  return best;
}

CqResult cq_eta(const GeneratorBundle& b, const Truncation* trunc, double t, const Vec& x,
                double tol) {
  ActiveSet a = active_set(b, trunc, t, x, tol);
  CqResult res;
  res.active = a.indices;
  if (a.indices.empty()) {
    res.vacuous = true;
    return res;
  }
  SetSlice s(b, trunc, t);
  std::vector<Vec> g;
  for (int i : a.indices) g.push_back(s.grad(i, x));
  SimplexMinNorm m = simplex_min_norm(g);
  res.min_norm = m.value;
  res.lambda = m.lambda;
  res.violated = m.value <= tol;
  return res;
}

DominanceResult gram_diag_dominance(const GeneratorBundle& b, double t, const Vec& x,
                                    const Vec& beta, double tol) {
  if (beta.size() != b.r()) throw InputError("dominance weights must have one entry per generator");
  for (int i = 0; i < beta.size(); ++i)
    if (!(beta[i] > 0.0)) throw InputError("dominance weights must be strictly positive");
  ActiveSet a = active_set(b, nullptr, t, x, tol);
  DominanceResult res;
  res.active = a.indices;
  if (a.indices.empty()) throw InputError("diagonal dominance needs a nonempty active set");
  std::vector<Vec> g;
  for (int i : a.indices) g.push_back(b.grad(i, t, x));
  res.margin = std::numeric_limits<double>::infinity();
  for (std::size_t jj = 0; jj < g.size(); ++jj) {
    double off = 0.0;
    for (std::size_t ii = 0; ii < g.size(); ++ii)
      if (ii != jj) off += beta[a.indices[ii]] * std::abs(g[ii].dot(g[jj]));
    res.margin = std::min(res.margin, beta[a.indices[jj]] * g[jj].squaredNorm() - off);
  }
  res.holds = res.margin > 0.0;
  return res;
}

double prox_constant(double eta_bar, double L_psi) {
  if (!(eta_bar > 0.0) || !(L_psi > 0.0))
    throw InputError("prox constant needs positive eta_bar and L_psi");
  return 2.0 * eta_bar / L_psi;
}

double lipschitz_estimate(const GeneratorBundle& b, const Box& region, int samples,
                          std::mt19937_64& rng) {
  if (samples < 2) throw InputError("Lipschitz estimate needs at least two samples");
  if (region.dim() != b.n + 1) throw InputError("Lipschitz region must be a box in (t, x)");
  bool degenerate = true;
  for (int k = 0; k < region.dim(); ++k) {
    if (region.hi[k] < region.lo[k]) throw InputError("Lipschitz region has inverted bounds");
    if (region.hi[k] > region.lo[k]) degenerate = false;
  }
  if (degenerate) throw InputError("Lipschitz region is a single point");
  std::vector<Vec> pts;
  for (int s = 0; s < samples; ++s) pts.push_back(region.sample(rng));
  // Pair every sample with its successor plus a local perturbation, so that
  // both long-range and short-range quotients are represented.
  std::normal_distribution<double> N(0.0, 1.0);
  Vec width = region.hi - region.lo;
  double L = 0.0;
  auto quotient = [&](const Vec& p, const Vec& q) {
    const double d = std::abs(p[0] - q[0]) + (p.tail(b.n) - q.tail(b.n)).norm();
    if (d <= 1e-14) return;
    const Vec xp = p.tail(b.n), xq = q.tail(b.n);
    for (int i = 0; i < b.r(); ++i) {
      L = std::max(L, std::abs(b.value(i, p[0], xp) - b.value(i, q[0], xq)) / d);
      L = std::max(L, (b.grad(i, p[0], xp) - b.grad(i, q[0], xq)).norm() / d);
    }
  };
  for (int s = 0; s < samples; ++s) {
    quotient(pts[s], pts[(s + 1) % samples]);
    Vec q = pts[s];
    for (int k = 0; k < q.size(); ++k) q[k] += 1e-3 * width[k] * N(rng);
    q = q.cwiseMax(region.lo).cwiseMin(region.hi);
    quotient(pts[s], q);
  }
  return L;
}

double penalty_sum(const GeneratorBundle& b, const Truncation* trunc, double t, const Vec& x,
                   double gamma) {
  SetSlice s(b, trunc, t);
  double sum = 0.0;
  for (int i = 0; i < s.count(); ++i) sum += std::exp(gamma * s.value(i, x));
  return sum;
}

PenaltyMembership penalty_set_membership(const GeneratorBundle& b, const Truncation* trunc,
                                         double t, const Vec& x, double gamma, double alpha_k) {
  if (!(gamma > 0.0) || alpha_k < 0.0) throw InputError("penalty membership needs gamma > 0, alpha >= 0");
  if (x.size() != b.n) throw InputError("point dimension does not match the generators");
  const double sum = penalty_sum(b, trunc, t, x, gamma);
  if (sum <= std::exp(-gamma * alpha_k)) return PenaltyMembership::InCgkK;
  if (sum <= 1.0) return PenaltyMembership::InCgk;
  return PenaltyMembership::Outside;
}

}  // namespace sweep
