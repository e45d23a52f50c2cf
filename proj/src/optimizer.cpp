#include "sweep/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>
#include <limits>
#include <thread>

#include "sweep/errors.hpp"
#include "sweep/oracle.hpp"

namespace sweep {

double evaluate_cost(const CostSpec& cost, const Vec& e) {
  std::vector<double> v(e.data(), e.data() + e.size());
  if (!cost.poly.is_zero() && cost.poly.nvars() != e.size())
    throw InputError("cost polynomial has wrong number of endpoint variables");
  double J = cost.poly.is_zero() ? 0.0 : cost.poly.eval(v);
  for (const auto& a : cost.abs_terms) J += a.weight * std::abs(a.affine.eval(v));
  return J;
}

double endpoint_violation(const std::vector<EndpointConstraint>& S, const Vec& e) {
  std::vector<double> v(e.data(), e.data() + e.size());
  double out = 0.0;
  for (const auto& c : S) {
    const double s = c.expr.eval(v);
    out = std::max(out, c.kind == EndpointConstraint::Kind::Eq ? std::abs(s) : std::max(0.0, s));
  }
  return out;
}

Vec transcription_start(const SweepingProblem& p, const PenaltySchedule& s, int k, const Vec& x0) {
  const Vec c = project(p.bundle, p.trunc(), 0.0, x0).point;
  const double g = s.gammas.at(k);
  SetSlice sl(p.bundle, p.trunc(), 0.0);
  std::vector<double> vals(sl.count());
  double top = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < sl.count(); ++i) top = std::max(top, vals[i] = sl.value(i, c));
  // Smooth version of the automatic inward direction: unit gradients weighted
  // by how close their constraint is to the top one on the scale of the shift
  // (equal weights on the active set). Weighting on the penalty scale instead
  // ignores a constraint that sits a few 1/gamma below a narrow corner and
  // pushes the start across it.
  // The shift fades out linearly once the nearest constraint is more than
  // three shifts away, so deep interior starts are left alone (the direction
  // is meaningless there) and the start stays continuous in x0.
  const double sigma = s.sigmas.at(k);
  Vec dir = Vec::Zero(p.n);
  double top_grad = 0.0;
  for (int i = 0; i < sl.count(); ++i) {
    const Vec gi = sl.grad(i, c);
    const double gn = gi.norm();
    if (!(gn > 0)) continue;
    if (vals[i] == top) top_grad = gn;
    dir -= std::exp((vals[i] - top) / (sigma * gn)) * gi / gn;
  }
  const double reach = 3.0 * sigma * top_grad;
  const double beta = reach > 0 ? std::clamp(1.0 + top / reach, 0.0, 1.0) : 1.0;
  if (beta == 0.0 || !(dir.norm() > 0)) return c;
  const Vec out = c + beta * sigma * dir / dir.norm();
  const double level = std::exp(-g * s.alphas.at(k));
  if (penalty_sum(p.bundle, p.trunc(), 0.0, out, g) <= level) return out;
  try {
    return interior_start(p, s, k, c);
  } catch (const std::runtime_error&) {
    return out;
  }
}

namespace {

unsigned thread_count(const TranscriptionConfig& cfg) {
  if (cfg.threads > 0) return static_cast<unsigned>(cfg.threads);
  return std::max(1u, std::thread::hardware_concurrency());
}

template <class F>
void parallel_for(int count, unsigned threads, F fn) {
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max(count, 1)));
  if (threads <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::future<void>> jobs;
  for (unsigned w = 0; w < threads; ++w)
    jobs.push_back(std::async(std::launch::async, [&, w] {
      for (int i = static_cast<int>(w); i < count; i += static_cast<int>(threads)) fn(i);
    }));
  for (auto& j : jobs) j.get();
}

struct Evaluation {
  double objective = std::numeric_limits<double>::infinity();
  double cost = 0.0, violation = 0.0, start_distance = 0.0;
  // integrator state (z, IMEX warm start) at the start of each control interval
  std::vector<Vec> z, mu;
};

// Objective of the transcribed problem at one rung and one weight.
class Transcription {
 public:
  Transcription(const SweepingProblem& p, const TranscriptionConfig& cfg, const PenaltySchedule& s)
      : p_(p), cfg_(cfg), s_(s), nx_(p.n + p.l), dim_(p.n + p.l + cfg.N * p.m) {
    lo_ = Vec::Constant(dim_, -std::numeric_limits<double>::infinity());
    hi_ = Vec::Constant(dim_, std::numeric_limits<double>::infinity());
    for (int j = 0; j < cfg.N; ++j) {
      const int b = p_.U.index(p_.T * (j + 0.5) / cfg.N);
      lo_.segment(nx_ + j * p.m, p.m) = p_.U.lo[b];
      hi_.segment(nx_ + j * p.m, p.m) = p_.U.hi[b];
    }
    opt_.fixed_steps_per_interval = cfg.steps_per_interval;
  }

  int dim() const { return dim_; }
  int start_dim() const { return nx_; }
  int control_dim() const { return p_.m; }
  const Vec& lo() const { return lo_; }
  const Vec& hi() const { return hi_; }
  Vec clamp(const Vec& d) const { return d.cwiseMax(lo_).cwiseMin(hi_); }

  ControlSignal controls(const Vec& d) const {
    std::vector<Vec> u;
    for (int j = 0; j < cfg_.N; ++j) u.push_back(d.segment(nx_ + j * p_.m, p_.m));
    return ControlSignal::uniform(p_.T, std::move(u));
  }

  Trajectory simulate(const Vec& d, int k) const {
    const Vec x0 = d.head(p_.n), y0 = d.segment(p_.n, p_.l);
    const Vec xs = transcription_start(p_, s_, k, x0);
    const Vec ys = interior_start_y(p_, s_, k, y0);
    return integrate_penalized(p_, s_.gammas[k], s_.alphas[k], controls(d), xs, ys,
                               GridSpec{cfg_.N}, opt_);
  }

  // Same arithmetic as simulate(), endpoint only. With a base evaluation whose
  // controls agree with d before interval `from`, the integration resumes from
  // the cached state there, giving bit-identical results.
  Vec endpoint(const Vec& d, int k, int from, const Evaluation* base, Evaluation& e) const {
    const PenalizedSystem sys(p_, s_.gammas[k]);
    Vec z(nx_), mu;
    if (from > 0 && base && static_cast<int>(base->z.size()) == cfg_.N) {
      z = base->z[from];
      mu = base->mu[from];
      e.z.assign(base->z.begin(), base->z.begin() + from);
      e.mu.assign(base->mu.begin(), base->mu.begin() + from);
    } else {
      from = 0;
      const Vec x0 = d.head(p_.n), y0 = d.segment(p_.n, p_.l);
      z << transcription_start(p_, s_, k, x0), interior_start_y(p_, s_, k, y0);
      Vec dz;
      const double s0 = sys.rhs(0.0, z, d.segment(nx_, p_.m), dz);
      if (!std::isfinite(s0) || s0 > 1e200) throw NumericalError("start outside the penalty domain");
    }
    for (int j = from; j < cfg_.N; ++j) {
      e.z.push_back(z);
      e.mu.push_back(mu);
      const double ta = p_.T * j / cfg_.N, tb = j + 1 == cfg_.N ? p_.T : p_.T * (j + 1) / cfg_.N;
      imex_propagate(sys, d.segment(nx_ + j * p_.m, p_.m), ta, tb, cfg_.steps_per_interval, z, mu);
    }
    return z;
  }

  Evaluation evaluate(const Vec& d, int k, double w, int from = 0, const Evaluation* base = nullptr) const {
    Evaluation e;
    try {
      const Vec x0 = d.head(p_.n), y0 = d.segment(p_.n, p_.l);
      const Vec zT = endpoint(d, k, from, base, e);
      const Vec ends = pack_endpoints(x0, y0, zT.head(p_.n), zT.tail(p_.l));
      std::vector<double> v(ends.data(), ends.data() + ends.size());
      e.cost = evaluate_cost(p_.J, ends);
      // |a| enters the objective as sqrt(a^2 + eps^2), eps shrinking with the
      // stage weight: the optimum typically sits on the kink, where one-sided
      // difference quotients stall the line search.
      double smooth = p_.J.poly.is_zero() ? 0.0 : p_.J.poly.eval(v);
      const double eps = cfg_.abs_smoothing / w;
      for (const auto& a : p_.J.abs_terms) {
        const double s = a.affine.eval(v);
        smooth += a.weight * (eps > 0 ? std::sqrt(s * s + eps * eps) : std::abs(s));
      }
      double pen = 0.0;
      for (const auto& c : p_.S) {
        const double s = c.expr.eval(v);
        const double viol = c.kind == EndpointConstraint::Kind::Eq ? s : std::max(0.0, s);
        pen += viol * viol;
        e.violation = std::max(e.violation, std::abs(viol));
      }
      e.start_distance = (project(p_.bundle, p_.trunc(), 0.0, x0).point - x0).norm();
      pen += e.start_distance * e.start_distance;
      double prox = 0.0;
      if (cfg_.prox_weight > 0 && !cfg_.prox_center.empty()) {
        const double h = p_.T / cfg_.N;
        for (int j = 0; j < cfg_.N; ++j)
          prox += h * (d.segment(nx_ + j * p_.m, p_.m) - cfg_.prox_center.at(j)).lpNorm<1>();
      }
      e.objective = smooth + w * pen + cfg_.prox_weight * prox;
      if (!std::isfinite(e.objective)) e.objective = std::numeric_limits<double>::infinity();
    } catch (const std::runtime_error&) {
      e.objective = std::numeric_limits<double>::infinity();
    }
    return e;
  }

 private:
  const SweepingProblem& p_;
  const TranscriptionConfig& cfg_;
  const PenaltySchedule& s_;
  int nx_, dim_;
  Vec lo_, hi_;
  IntegratorOptions opt_;
};

struct StageOutcome {
  Vec x;
  Evaluation eval;
  int iterations = 0;
  long evaluations = 0;
};

// Projected L-BFGS with forward-difference gradients and Armijo backtracking
// along the projection arc.
StageOutcome minimize(const Transcription& tp, Vec x, int k, double w,
                      const TranscriptionConfig& cfg, unsigned threads) {
  StageOutcome out;
  auto f = [&](const Vec& d) { return tp.evaluate(d, k, w); };
  // Control perturbations only re-integrate from their own interval on.
  auto grad = [&](const Vec& d, const Evaluation& base) {
    Vec g(tp.dim());
    parallel_for(tp.dim(), threads, [&](int i) {
      double h = 1e-6 * (1.0 + std::abs(d[i]));
      if (d[i] + h > tp.hi()[i]) h = -h;  // stay inside the control box
      Vec e = d;
      e[i] += h;
      const int from = i < tp.start_dim() ? 0 : (i - tp.start_dim()) / tp.control_dim();
      g[i] = (tp.evaluate(e, k, w, from, &base).objective - base.objective) / h;
    });
    out.evaluations += tp.dim();
    return g;
  };
  x = tp.clamp(x);
  Evaluation fx = f(x);
  ++out.evaluations;
  out.x = x;
  out.eval = fx;
  if (!std::isfinite(fx.objective)) return out;
  Vec g = grad(x, fx);
  std::deque<std::pair<Vec, Vec>> mem;
  int stall = 0;
  for (int it = 0; it < cfg.max_iter; ++it) {
    out.iterations = it;
    if (!g.allFinite()) break;
    Vec pg = g;
    std::vector<char> fixed(tp.dim(), 0);
    for (int i = 0; i < tp.dim(); ++i)
      if ((x[i] <= tp.lo()[i] && g[i] > 0) || (x[i] >= tp.hi()[i] && g[i] < 0)) {
        pg[i] = 0;
        fixed[i] = 1;
      }
    if (pg.lpNorm<Eigen::Infinity>() <= cfg.grad_tol * (1.0 + std::abs(fx.objective))) break;
    // two-loop recursion on the free variables
    Vec q = pg;
    std::vector<double> alpha(mem.size());
    for (int j = static_cast<int>(mem.size()) - 1; j >= 0; --j) {
      alpha[j] = mem[j].first.dot(q) / mem[j].first.dot(mem[j].second);
      q -= alpha[j] * mem[j].second;
    }
    if (!mem.empty()) q *= mem.back().first.dot(mem.back().second) / mem.back().second.squaredNorm();
    for (std::size_t j = 0; j < mem.size(); ++j) {
      const double b = mem[j].second.dot(q) / mem[j].first.dot(mem[j].second);
      q += (alpha[j] - b) * mem[j].first;
    }
    Vec dir = -q;
    for (int i = 0; i < tp.dim(); ++i)
      if (fixed[i]) dir[i] = 0;
    if (!(dir.dot(pg) < 0)) {
      dir = -pg;
      mem.clear();
    }
    double step = mem.empty() ? std::min(1.0, 1.0 / dir.lpNorm<Eigen::Infinity>()) : 1.0;
    Vec xn;
    Evaluation fn;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      xn = tp.clamp(x + step * dir);
      fn = f(xn);
      ++out.evaluations;
      if (fn.objective <= fx.objective + 1e-4 * g.dot(xn - x)) {
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) {
      if (mem.empty()) break;
      mem.clear();
      continue;
    }
    const Vec gn = grad(xn, fn);
    const Vec sv = xn - x, yv = gn - g;
    if (sv.dot(yv) > 1e-12 * sv.norm() * yv.norm()) {
      mem.emplace_back(sv, yv);
      if (mem.size() > 10) mem.pop_front();
    }
    const double drop = fx.objective - fn.objective;
    stall = drop <= cfg.ftol * std::max(1.0, std::abs(fx.objective)) ? stall + 1 : 0;
    x = xn;
    fx = fn;
    g = gn;
    out.x = x;
    out.eval = fx;
    out.iterations = it + 1;
    if (stall >= 2) break;
  }
  return out;
}

Incumbent run_stages(const Transcription& tp, const Incumbent& from, int k, int start_index,
                     const TranscriptionConfig& cfg, unsigned threads,
                     std::vector<StageRecord>& history, const PenaltySchedule& s) {
  Incumbent cur = from;
  cur.rung = k;
  for (double w : cfg.weights) {
    StageOutcome st = minimize(tp, cur.decision, k, w, cfg, threads);
    if (!std::isfinite(st.eval.objective))
      throw NumericalError("start " + std::to_string(start_index) + ": dynamics failed at gamma = " +
                           std::to_string(s.gammas[k]));
    cur.decision = st.x;
    cur.cost = st.eval.cost;
    cur.objective = st.eval.objective;
    cur.violation = st.eval.violation;
    cur.start_distance = st.eval.start_distance;
    history.push_back({start_index, s.gammas[k], w, st.eval.cost, st.eval.objective,
                       st.eval.violation, st.iterations, st.evaluations});
  }
  return cur;
}

std::vector<Vec> initial_decisions(const SweepingProblem& p, const TranscriptionConfig& cfg) {
  if (!cfg.initial.empty()) return cfg.initial;
  const int nx = p.n + p.l, dim = nx + cfg.N * p.m;
  const Vec x0 = p.x0 ? *p.x0 : Vec::Zero(p.n);
  const Vec y0 = p.y0 ? *p.y0 : Vec::Zero(p.l);
  std::vector<Vec> out;
  for (int s = 0; s < cfg.starts; ++s) {
    auto rng = make_rng(cfg.seed, "multistart:" + std::to_string(s));
    std::normal_distribution<double> nd(0.0, cfg.start_spread);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    Vec d(dim);
    for (int i = 0; i < p.n; ++i) d[i] = x0[i] + nd(rng);
    for (int i = 0; i < p.l; ++i) d[p.n + i] = y0[i] + nd(rng);
    // start in the set: projected onto C(0) (falls back to the raw sample)
    try {
      d.head(p.n) = project(p.bundle, p.trunc(), 0.0, d.head(p.n)).point;
    } catch (const std::runtime_error&) {
    }
    for (int j = 0; j < cfg.N; ++j) {
      const int b = p.U.index(p.T * (j + 0.5) / cfg.N);
      for (int i = 0; i < p.m; ++i)
        d[nx + j * p.m + i] = p.U.lo[b][i] + ud(rng) * (p.U.hi[b][i] - p.U.lo[b][i]);
    }
    out.push_back(d);
  }
  return out;
}

void validate_config(const SweepingProblem& p, const TranscriptionConfig& cfg) {
  if (cfg.N < 1) throw InputError("transcription needs N >= 1");
  if (cfg.gammas.empty()) throw InputError("transcription needs a gamma ladder");
  if (cfg.weights.empty()) throw InputError("transcription needs endpoint penalty weights");
  for (std::size_t i = 0; i < cfg.weights.size(); ++i)
    if (!(cfg.weights[i] > 0) || (i > 0 && !(cfg.weights[i] > cfg.weights[i - 1])))
      throw InputError("endpoint penalty weights must be positive and increasing");
  if (cfg.steps_per_interval < 1) throw InputError("steps per interval must be >= 1");
  if (cfg.initial.empty() && cfg.starts < 1) throw InputError("need at least one start");
  const int dim = p.n + p.l + cfg.N * p.m;
  for (const auto& d : cfg.initial)
    if (d.size() != dim) throw InputError("initial decision vector has wrong dimension");
  if (cfg.prox_weight > 0 && static_cast<int>(cfg.prox_center.size()) != cfg.N)
    throw InputError("proximal term needs one control value per interval");
}

}  // namespace

Incumbent gamma_continuation(const SweepingProblem& p, const TranscriptionConfig& cfg,
                             const Incumbent& incumbent, int k, OptimizeResult& out) {
  const PenaltySchedule s = make_schedule(p, cfg.gammas);
  Transcription tp(p, cfg, s);
  Incumbent next = run_stages(tp, incumbent, k, out.best_start, cfg, thread_count(cfg), out.history, s);
  if (next.cost > incumbent.cost + 0.1 * std::abs(incumbent.cost) + 1e-12)
    out.warnings.push_back("cost rose by more than 10% at gamma = " + std::to_string(s.gammas[k]) +
                           " (penalty-layer effect)");
  return next;
}

OptimizeResult optimize(const SweepingProblem& p, const TranscriptionConfig& cfg) {
  validate_config(p, cfg);
  const PenaltySchedule s = make_schedule(p, cfg.gammas);
  Transcription tp(p, cfg, s);
  const std::vector<Vec> starts = initial_decisions(p, cfg);
  const unsigned threads = thread_count(cfg);
  const int S = static_cast<int>(starts.size());

  OptimizeResult out;
  std::vector<Incumbent> results(S);
  std::vector<std::vector<StageRecord>> hist(S);
  std::vector<std::string> errors(S);
  // Starts run concurrently; each start's gradients are serial then.
  const unsigned inner = std::max(1u, threads / static_cast<unsigned>(S));
  parallel_for(S, threads, [&](int i) {
    try {
      results[i] = run_stages(tp, Incumbent{starts[i], 0}, 0, i, cfg, inner, hist[i], s);
    } catch (const std::runtime_error& e) {
      errors[i] = e.what();
      results[i].objective = std::numeric_limits<double>::infinity();
    }
  });
  for (int i = 0; i < S; ++i) {
    out.history.insert(out.history.end(), hist[i].begin(), hist[i].end());
    out.start_objectives.push_back(results[i].objective);
    if (!errors[i].empty()) out.failures.push_back(errors[i]);
    if (std::isfinite(results[i].objective) &&
        (out.best_start < 0 || results[i].objective < results[out.best_start].objective))
      out.best_start = i;
  }
  if (out.best_start < 0) {
    std::string msg = "all starts failed:";
    for (const auto& e : out.failures) msg += "\n  " + e;
    throw NumericalError(msg);
  }
  Incumbent best = results[out.best_start];
  out.rung_costs.push_back(best.cost);
  for (int k = 1; k < s.size(); ++k) {
    best = gamma_continuation(p, cfg, best, k, out);
    out.rung_costs.push_back(best.cost);
  }
  out.best = best;
  out.x0 = best.decision.head(p.n);
  out.y0 = best.decision.segment(p.n, p.l);
  out.u = tp.controls(best.decision);
  out.traj = tp.simulate(best.decision, best.rung);
  out.invariance = invariance_report(p, out.traj, s, best.rung);
  return out;
}

}  // namespace sweep
