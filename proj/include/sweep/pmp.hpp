#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sweep/dynamics.hpp"

namespace sweep {

struct MeasureAtom {
  double t = 0.0;
  double weight = 0.0;
};

struct JumpAtom {
  double t = 0.0;
  Vec jump;  // q(t+) - q(t-)
};

/// Candidate multipliers for the maximum principle on a time grid.
///
/// q is of bounded variation: the grid stores left limits q(t_j-) (q(0) at the
/// first node) and every jump separately, so q(t+) = q(t-) + jump. The
/// measures nu^i have a density w.r.t. dt on the grid plus a list of atoms.
struct PmpCertificate {
  double lambda = 0.0;
  std::vector<double> t;
  std::vector<Vec> q;  // n per node, left limits
  std::vector<JumpAtom> q_jumps;
  std::vector<Vec> v;   // l per node
  std::vector<Vec> xi;  // r per node
  std::vector<std::vector<double>> nu_density;  // [i][node]
  std::vector<std::vector<MeasureAtom>> nu_atoms;  // [i]
  /// S = C0 x R^{n+l}: lambda = 1 and the non-triviality condition is replaced
  /// by |lambda - 1|.
  bool lambda_one = false;

  int nodes() const { return static_cast<int>(t.size()); }
  int r() const { return static_cast<int>(nu_atoms.size()); }
  /// Total jump of q at time s (zero when there is none).
  Vec jump_at(double s, int n, double tol = 1e-12) const;
  Vec q_terminal() const;  // q(T+)
  void validate(int n, int l, int r) const;
};

struct Residual {
  double value = 0.0;
  double witness_t = -1.0;  // time where the maximum is attained (-1: none)
};

struct CheckOptions {
  int test_basis_size = 64;
  int control_grid_density = 11;  // points per control coordinate
  double active_tol = 1e-6;       // psi_i >= -active_tol counts as active
  double tol = 1e-6;
  double nontriviality_tol = 1e-12;
};

struct ConditionResult {
  std::string name;
  double residual = 0.0;
  double tol = 0.0;
  bool pass = false;
  double witness_t = -1.0;
  std::string note;
};

struct CheckReport {
  std::vector<ConditionResult> conditions;
  bool all_pass() const;
  const ConditionResult& operator[](const std::string& name) const;
};

/// Admissibility: max over nodes of |xdot - f + sum xi grad psi|, |ydot - g| and psi_+.
Residual check_admissibility(const PmpCertificate& c, const SweepingProblem& p,
                             const Trajectory& traj);
/// Non-triviality: |lambda + |p(T+)| - 1|.
Residual check_nontriviality(const PmpCertificate& c);
/// Adjoint: weak form of the q equation against hat functions, and the v equation
/// pointwise.
Residual check_adjoint_weak(const PmpCertificate& c, const SweepingProblem& p,
                            const Trajectory& traj, int test_basis_size);
/// Maximization: Hamiltonian gap between the best grid control and the trajectory's.
Residual check_maximization(const PmpCertificate& c, const SweepingProblem& p,
                            const Trajectory& traj, int control_grid_density);

struct SlacknessResiduals {
  Residual inactive_xi;      // xi on {psi < -tol}
  Residual xi_orthogonality; // |xi <grad psi, q>|
  Residual mass_outside;     // nu mass away from the active set
  Residual sign;             // negative part of <q, grad psi> dnu
  double slackness() const { return std::max(inactive_xi.value, xi_orthogonality.value); }
  double measures() const { return std::max(mass_outside.value, sign.value); }
};
/// Complementary slackness and the sign/support conditions on nu.
SlacknessResiduals check_slackness_and_measures(const PmpCertificate& c, const SweepingProblem& p,
                                                const Trajectory& traj, double active_tol);

struct TransversalityResult {
  Residual residual;
  Vec alpha;  // multipliers of the active S rows
  Vec s;      // abs-term subgradient parameters
};
/// Transversality: distance of ((q,v)(0), -(q,v)(T+)) to lambda dJ + rowspace(DS).
TransversalityResult check_transversality(const PmpCertificate& c, const SweepingProblem& p,
                                          const Trajectory& traj, double active_tol = 1e-8);

/// All seven conditions.
CheckReport check_pmp(const PmpCertificate& c, const SweepingProblem& p, const Trajectory& traj,
                      const CheckOptions& opt = {});

// ---------------------------------------------------------------- penalized adjoint

struct AdjointPath {
  double gamma = 0.0;
  double lambda = 0.0;
  std::vector<double> t;
  std::vector<Vec> q, v;
  /// Discrete measure of cell j = [t_j, t_j+1] for each penalized term:
  /// h gamma xi^i <grad psi_i, q_j>.
  std::vector<std::vector<double>> nu_mass;
};

/// Backward integration of the adjoint system of the penalized problem along
/// traj (implicit Euler on the trajectory grid, which is L-stable and keeps
/// the discrete measure consistent with the increments of q).
AdjointPath integrate_adjoint_penalized(const SweepingProblem& p, double gamma,
                                        const Trajectory& traj, const Vec& qT, const Vec& vT,
                                        double lambda);

struct LadderRun {
  Trajectory traj;
  AdjointPath adjoint;
};

struct AssemblyReport {
  std::vector<double> gammas;
  std::vector<std::vector<double>> atom_mass;  // [rung][generator]: total atomic mass
  bool masses_converged = true;
  double window = 0.0;  // atom-detection window of the finest rung
  std::vector<std::string> warnings;
};

/// Certificate from the finest rung of a ladder: measure densities and atoms
/// (mass concentrated in a window of width 3/gamma exceeding 10 times the
/// surrounding mass), normalized so that lambda + |p(T)| = 1.
PmpCertificate assemble_certificate(const SweepingProblem& p, const std::vector<LadderRun>& runs,
                                    AssemblyReport* report = nullptr);

}  // namespace sweep
