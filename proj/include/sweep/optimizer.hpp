#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sweep/dynamics.hpp"

namespace sweep {

/// Polynomial part plus sum of weight * |affine| at the endpoint vector
/// (x(0), y(0), x(T), y(T)).
double evaluate_cost(const CostSpec& cost, const Vec& endpoints);

/// Largest violation of the endpoint constraints: |eq| and max(0, ineq).
double endpoint_violation(const std::vector<EndpointConstraint>& S, const Vec& endpoints);

struct TranscriptionConfig {
  int N = 16;                                          // control intervals
  std::vector<double> gammas = {1e2, 1e3, 1e4};        // penalty ladder
  std::vector<double> weights = {1e1, 1e2, 1e3, 1e4, 1e5};  // endpoint penalty stages
  /// Decision vectors (x0, y0, u_1..u_N) to start from; empty selects
  /// `starts` random starts around the problem's default start.
  std::vector<Vec> initial;
  int starts = 8;
  std::uint64_t seed = 7;
  double start_spread = 0.1;  // std. deviation of the start perturbation
  /// Absolute-value terms of J are smoothed to sqrt(a^2 + eps^2) with
  /// eps = abs_smoothing / weight during each stage (0: exact).
  double abs_smoothing = 1.0;
  int steps_per_interval = 16;
  int max_iter = 500;         // per stage
  double grad_tol = 1e-9;
  double ftol = 1e-11;        // stop after two steps with relative decrease below this
  /// Optional proximal term prox_weight * sum_j h |u_j - prox_center_j|_1.
  double prox_weight = 0.0;
  std::vector<Vec> prox_center;
  int threads = 0;            // 0: hardware concurrency
};

struct StageRecord {
  int start = 0;
  double gamma = 0.0, weight = 0.0;
  double cost = 0.0, objective = 0.0, violation = 0.0;
  int iterations = 0;
  long evaluations = 0;
};

/// A decision vector and its evaluation at one rung.
struct Incumbent {
  Vec decision;
  int rung = 0;
  double cost = 0.0;
  double objective = 0.0;
  double violation = 0.0;        // endpoint constraints, at the decision start
  double start_distance = 0.0;   // distance of the decision start to C(0)
};

struct OptimizeResult {
  Trajectory traj;  // fixed-step IMEX trajectory of the best decision at the last rung
  Vec x0, y0;       // decision start (what S and J see)
  ControlSignal u;
  Incumbent best;
  int best_start = -1;
  std::vector<double> start_objectives;  // per start at the first rung (inf: failed)
  std::vector<StageRecord> history;
  std::vector<double> rung_costs;        // best cost after each rung
  InvarianceReport invariance;
  std::vector<std::string> warnings;
  std::vector<std::string> failures;
};

/// Direct transcription with piecewise-constant controls over the penalized
/// dynamics: multistart at the first rung, then gamma continuation of the
/// best start. Throws NumericalError when every start fails.
OptimizeResult optimize(const SweepingProblem& p, const TranscriptionConfig& cfg);

/// Re-optimizes the incumbent at rung k through the weight stages and
/// appends to the result's history (warns when the cost rises by > 10%).
Incumbent gamma_continuation(const SweepingProblem& p, const TranscriptionConfig& cfg,
                             const Incumbent& incumbent, int k, OptimizeResult& out);

/// Start actually integrated at rung k for a decision start x0: x0 projected
/// onto C(0), then moved inward by sigma_k along the penalty-weighted normal.
Vec transcription_start(const SweepingProblem& p, const PenaltySchedule& s, int k, const Vec& x0);

}  // namespace sweep
