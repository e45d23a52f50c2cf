#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "sweep/problem.hpp"

namespace sweep {

// ---------------------------------------------------------------- schedule

struct PenaltySchedule {
  std::vector<double> gammas, alphas, sigmas, rhos;  // rhos empty without a y-ball
  double eta_bar = 0, mu_bar = 0, L_bar = 0;
  double delta_bar = std::numeric_limits<double>::quiet_NaN();
  int generators = 1;  // r + 1 when truncating, r in global mode

  int size() const { return static_cast<int>(gammas.size()); }
  /// Smallest admissible gamma is anything strictly above 2 mu e / eta^2.
  double threshold() const;
};

PenaltySchedule make_schedule(const std::vector<double>& gammas, double eta_bar, double mu_bar,
                              double L_bar, int generators,
                              double delta_bar = std::numeric_limits<double>::quiet_NaN());
/// Schedule for a problem from its audited constants and truncation mode.
PenaltySchedule make_schedule(const SweepingProblem& p, const std::vector<double>& gammas);
/// Geometric ladder lo, lo*factor, ... up to hi (inclusive within rounding).
std::vector<double> geometric_ladder(double lo, double hi, double factor);

// ---------------------------------------------------------------- controls

/// Piecewise-constant control on [0, T]; value j holds on [breaks[j], breaks[j+1]).
struct ControlSignal {
  std::vector<double> breaks;
  std::vector<Vec> values;

  static ControlSignal constant(double T, const Vec& u);
  static ControlSignal uniform(double T, std::vector<Vec> values);
  int m() const { return values.empty() ? 0 : static_cast<int>(values.front().size()); }
  int intervals() const { return static_cast<int>(values.size()); }
  Vec at(double t) const;
};

// ---------------------------------------------------------------- trajectory

struct TrajectoryDiagnostics {
  long steps_accepted = 0;
  long steps_rejected = 0;
  long rhs_evals = 0;
  double h_min = std::numeric_limits<double>::infinity();
  double max_constraint = -std::numeric_limits<double>::infinity();  // max psi_i over nodes
  double max_sigma_ratio = 0.0;  // max over nodes of sum e^{gamma psi} / e^{-gamma alpha}
  bool invariance_flag = false;  // ratio exceeded 1 + 1e-6 somewhere
  std::string integrator;
};

struct Trajectory {
  std::vector<double> t;
  std::vector<Vec> x, y;
  std::vector<Vec> u;   // one per interval
  std::vector<Vec> xi;  // per node, one entry per penalized generator
  std::vector<double> zeta;
  double gamma = 0.0;
  bool limit = false;
  TrajectoryDiagnostics diag;

  int nodes() const { return static_cast<int>(t.size()); }
  /// Control on the interval containing node j (last node uses last interval).
  const Vec& u_at_node(int j) const;
  /// Linear interpolation of the state (x, y) at time s.
  Vec state_at(double s) const;
};

/// Sup-norm distance between two trajectories' (x, y), evaluated at the nodes
/// of a and interpolating b.
double sup_distance(const Trajectory& a, const Trajectory& b);

struct GridSpec {
  int intervals = 1000;
};

/// Output grid: uniform nodes merged with the control breakpoints.
std::vector<double> output_grid(double T, const GridSpec& g, const ControlSignal& u);

// ---------------------------------------------------------------- penalized dynamics

/// Right-hand side of the exponentially penalized system and its Jacobians.
/// State z = (x, y). Global mode (no truncation) sums generators only to r and
/// drops the y-ball term.
class PenalizedSystem {
 public:
  PenalizedSystem(const SweepingProblem& p, double gamma);

  int dim() const { return n_ + l_; }
  double gamma() const { return gamma_; }
  const SweepingProblem& problem() const { return p_; }

  /// dz = penalized vector field; returns sum_i e^{gamma psi_i} (x-generators).
  double rhs(double t, const Vec& z, const Vec& u, Vec& dz) const;
  /// Unpenalized h = (f, g).
  void drift(double t, const Vec& z, const Vec& u, Vec& h) const;
  /// xi^i = gamma e^{gamma psi_i}, zeta = gamma e^{gamma phi}.
  void multipliers(double t, const Vec& z, Vec& xi, double& zeta) const;
  /// Penalty potential Phi = sum_i e^{gamma psi_i} (+ y-ball term); the
  /// penalty force is -grad Phi. Gradient and Hessian optional.
  double potential(double t, const Vec& z, Vec* grad, Mat* hess) const;
  /// Values and z-gradients of every penalized term (generators, then the
  /// x-ball and y-ball in truncated mode).
  void penalty_terms(double t, const Vec& z, std::vector<double>& vals, std::vector<Vec>& grads,
                     std::vector<Mat>* hess = nullptr) const;
  /// Jacobian of the penalized field in z, and its explicit time derivative.
  void jacobian(double t, const Vec& z, const Vec& u, Mat& Jz, Vec* Jt) const;
  /// Jacobian of the unpenalized drift (f, g) in z.
  void drift_jacobian(double t, const Vec& z, const Vec& u, Mat& Jz) const;

 private:
  double exp_term(double a) const;
  const SweepingProblem& p_;
  double gamma_;
  int n_, l_, m_, r_;
  bool trunc_;
  std::vector<std::vector<PolyExpr>> dh_dz_;  // [(f,g) component][z index]
  std::vector<PolyExpr> dh_dt_;
  mutable std::vector<double> vars_;
};

struct IntegratorOptions {
  double rtol = 1e-9;
  double atol = 1e-11;
  double h_max = 1e-2;        // user cap on the step
  double c_step = 0.25;       // step cap c_step / gamma near the boundary
  double boundary_trigger = 1e-3;
  long max_steps = 200000000;
  /// Fixed-step IMEX mode (drift explicit, penalty implicit), used by the
  /// optimizer for cheap, smooth objective evaluations; 0 selects adaptive
  /// explicit RK.
  int fixed_steps_per_interval = 0;
};

/// Integrates the penalized system at the given gamma. alpha_k is used only for
/// the invariance margin in the diagnostics (pass 0 when not applicable).
Trajectory integrate_penalized(const SweepingProblem& p, double gamma, double alpha_k,
                               const ControlSignal& u, const Vec& x0, const Vec& y0,
                               const GridSpec& grid, const IntegratorOptions& opt = {});

/// One interval of the fixed-step IMEX scheme with a constant control, as used
/// by integrate_penalized; mu carries the implicit solver's warm start from
/// interval to interval (empty before the first one).
void imex_propagate(const PenalizedSystem& sys, const Vec& u, double t0, double t1, int steps, Vec& z,
                    Vec& mu);

// ---------------------------------------------------------------- starts

/// Start for rung k: unchanged if already in the inner set C^gamma(0, k),
/// otherwise shifted by sigma_k along d (auto: minus the active gradients).
Vec interior_start(const SweepingProblem& p, const PenaltySchedule& s, int k, const Vec& c,
                   const Vec* d = nullptr);
/// y start pulled into the ball of radius rho_k around ybar(0) (truncated mode).
Vec interior_start_y(const SweepingProblem& p, const PenaltySchedule& s, int k, const Vec& d);

// ---------------------------------------------------------------- reports

struct InvarianceReport {
  double max_sigma_ratio = 0.0;   // sum e^{gamma psi} / e^{-gamma alpha_k}
  double initial_sigma_ratio = 0.0;
  double max_y_distance = 0.0;    // |y - ybar|
  double rho = std::numeric_limits<double>::infinity();
  double max_xi_sum = 0.0, max_zeta = 0.0, multiplier_bound = 0.0;
  double max_speed = 0.0, speed_bound = 0.0;
  bool sigma_ok = true, y_ok = true, multiplier_ok = true, speed_ok = true;
  int first_violation = -1;
  bool ok() const { return sigma_ok && y_ok && multiplier_ok && speed_ok; }
};

InvarianceReport invariance_report(const SweepingProblem& p, const Trajectory& traj,
                                   const PenaltySchedule& s, int k, double rel_tol = 1e-6);

struct SweepResult {
  Trajectory traj;
  std::vector<double> gammas;     // rungs actually integrated
  std::vector<double> residuals;  // sup distance between consecutive rungs
  std::vector<InvarianceReport> invariance;
  int converged_rung = -1;        // rung index whose comparison met tol
  bool converged = false;
};

/// Runs the gamma ladder until consecutive rungs agree to tol in sup norm.
SweepResult solve_sweeping(const SweepingProblem& p, const ControlSignal& u, const Vec& x0,
                           const Vec& y0, const PenaltySchedule& s, double tol,
                           const GridSpec& grid, const IntegratorOptions& opt = {});

struct MultiplierResult {
  std::vector<int> active;
  Vec lambda;
  double sum = 0.0;
  double bound = std::numeric_limits<double>::infinity();  // mu / (4 eta^2) when known
  bool bound_violated = false;
};

/// Normal-cone multipliers from the complementarity system on the active set:
/// lambda >= 0, G lambda - b >= 0, lambda'(G lambda - b) = 0.
MultiplierResult multipliers_from_activeset(const SweepingProblem& p, double t, const Vec& x,
                                            const Vec& y, const Vec& u, double tol = -1.0);

}  // namespace sweep
