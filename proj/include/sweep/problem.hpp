#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sweep/geometry.hpp"

namespace sweep {

/// Piecewise-constant box table U(t): box j is valid on [breaks[j], breaks[j+1]).
struct ControlBox {
  std::vector<double> breaks;  // starts at 0
  std::vector<Vec> lo, hi;

  static ControlBox constant(const Vec& lo, const Vec& hi);
  int m() const { return lo.empty() ? 0 : static_cast<int>(lo.front().size()); }
  int index(double t) const;
  void validate(int m) const;
  bool contains(double t, const Vec& u, double tol = 1e-12) const;
  Vec clamp(double t, const Vec& u) const;
};

/// Polynomial constraint on the endpoint vector (x(0), y(0), x(T), y(T)).
/// Equalities read expr = 0, inequalities expr <= 0.
struct EndpointConstraint {
  enum class Kind { Eq, Ineq };
  PolyExpr expr;
  Kind kind = Kind::Eq;
};

struct AbsTerm {
  double weight = 0.0;
  PolyExpr affine;
};

/// Mayer cost: polynomial part plus weighted absolute values of affine forms,
/// all in the endpoint variables.
struct CostSpec {
  PolyExpr poly;
  std::vector<AbsTerm> abs_terms;
};

/// Constants behind the penalty schedule. They are taken as given; the
/// audit fills them from samples, in which case they are lower estimates.
struct AuditedConstants {
  double eta_bar = 0.0;
  double mu_bar = 0.0;
  double L_bar = 0.0;
  double M_h = 0.0;
  double L_psi = 0.0;  // 0 when not supplied
  bool sampled = false;
};

/// Index layout of the dynamics variables (t, x_1..x_n, y_1..y_l, u_1..u_m).
struct VarLayout {
  int n = 0, l = 0, m = 0;
  int size() const { return 1 + n + l + m; }
  int t() const { return 0; }
  int x(int j) const { return 1 + j; }
  int y(int j) const { return 1 + n + j; }
  int u(int j) const { return 1 + n + l + j; }
};

struct SweepingProblem {
  std::string name;
  int n = 0, l = 0, m = 0;
  double T = 1.0;
  GeneratorBundle bundle;
  Truncation truncation;
  std::vector<PolyExpr> f;  // n polynomials over VarLayout
  std::vector<PolyExpr> g;  // l polynomials over VarLayout
  ControlBox U;
  std::vector<EndpointConstraint> S;
  CostSpec J;
  std::optional<AuditedConstants> constants;
  std::optional<Vec> x0, y0;  // default start
  /// Optional path (x(t), y(t)) along which the constants are audited when
  /// there is no truncation reference pair.
  ReferencePath audit_x, audit_y;

  VarLayout layout() const { return {n, l, m}; }
  int endpoint_size() const { return 2 * (n + l); }
  int r() const { return bundle.r(); }
  /// Number of penalized x-generators: r, plus the ball when truncating.
  int penalized_count() const { return r() + (truncation.enabled ? 1 : 0); }
  const Truncation* trunc() const { return truncation.enabled ? &truncation : nullptr; }
  void validate() const;
};

/// Packs (t, x, y, u) for polynomial evaluation.
std::vector<double> pack_vars(const VarLayout& L, double t, const Vec& x, const Vec& y,
                              const Vec& u);
/// Packs (x(0), y(0), x(T), y(T)).
Vec pack_endpoints(const Vec& x0, const Vec& y0, const Vec& xT, const Vec& yT);

}  // namespace sweep
