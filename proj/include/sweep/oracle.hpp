#pragma once

#include <functional>
#include <random>
#include <vector>

#include "sweep/dynamics.hpp"

namespace sweep {

struct ProjectionResult {
  Vec point;
  Vec multipliers;  // one per constraint, zero when inactive
  double distance = 0.0;
  int iterations = 0;
};

/// Metric projection onto {w : c_i(w) <= 0} by Newton on the KKT system of
/// each candidate active face (faces enumerated for up to four constraints,
/// primal-dual active-set iteration beyond that).
ProjectionResult project(const ConstraintSet& C, const Vec& z, double tol = 1e-10,
                         int max_iter = 60);
/// Projection onto the (truncated) sweeping set C(t).
ProjectionResult project(const GeneratorBundle& b, const Truncation* trunc, double t, const Vec& z,
                         double tol = 1e-10);

/// Moreau catching-up scheme: step the drift, project onto C(t_{j+1}).
/// xi holds projection multipliers divided by h (first-order accurate).
Trajectory catch_up(const SweepingProblem& p, const ControlSignal& u, const Vec& x0,
                    const Vec& y0, double h);
/// Richardson combination 2 x_{h/2} - x_h on the coarse grid.
Trajectory catch_up_extrapolated(const SweepingProblem& p, const ControlSignal& u, const Vec& x0,
                                 const Vec& y0, double h);

struct SampledSet {
  std::function<bool(const Vec&)> contains;
  std::function<Vec(const Vec&)> project;
};

/// Monte-Carlo estimate of the one-sided Hausdorff excess sup_{a in A} d(a, B):
/// box samples are mapped into A (by projection when outside) and their
/// projection distance to B is maximized.
double hausdorff_sample(const SampledSet& A, const SampledSet& B, const Box& box, int samples,
                        std::mt19937_64& rng);

// ---------------------------------------------------------------- audit

struct PathSample {
  double t;
  Vec x, y;
};

struct ConstantsAudit {
  AuditedConstants constants;
  double L_ref = 0.0;  // Lipschitz estimate of the reference pair (truncated mode)
  double min_cq_norm = std::numeric_limits<double>::infinity();
  int active_samples = 0;
};

/// Samples of the problem's reference pair, or of a trajectory.
std::vector<PathSample> reference_samples(const SweepingProblem& p, int count);
std::vector<PathSample> trajectory_samples(const Trajectory& tr, int count);

/// Sampled lower estimates of eta_bar, L_psi, M_h, L_bar and mu_bar along a
/// path, following the problem's truncation mode: with truncation
/// L_bar = max(L_psi, delta L_ref), mu_bar = L_bar (1 + M_h); in global mode
/// L_bar = L_psi, mu_bar = L_psi (1 + M_h).
ConstantsAudit audit_constants(const SweepingProblem& p, const std::vector<PathSample>& path,
                               int samples, std::mt19937_64& rng);

}  // namespace sweep
