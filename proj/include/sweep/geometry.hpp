#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "sweep/poly.hpp"

namespace sweep {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Named, splittable random stream: the same (seed, name) always yields the
/// same sequence, and different names give independent streams.
std::mt19937_64 make_rng(std::uint64_t seed, std::string_view stream);

struct Box {
  Vec lo, hi;
  int dim() const { return static_cast<int>(lo.size()); }
  Vec sample(std::mt19937_64& rng) const;
};

/// Moving-set generators psi_i(t, x), i = 1..r, over variables (t, x_1..x_n),
/// together with their exact symbolic derivatives.
struct GeneratorBundle {
  int n = 0;
  std::vector<PolyExpr> psi;
  std::vector<std::vector<PolyExpr>> grad_x;   // [i][j] = d psi_i / d x_j
  std::vector<PolyExpr> dt;                    // [i]    = d psi_i / d t
  std::vector<std::vector<PolyExpr>> hess;     // [i][j*n+k]
  std::vector<std::vector<PolyExpr>> dt_grad;  // [i][j] = d^2 psi_i / dt dx_j

  GeneratorBundle() = default;
  GeneratorBundle(int n, std::vector<PolyExpr> generators);

  int r() const { return static_cast<int>(psi.size()); }
  double value(int i, double t, const Vec& x) const;
  Vec grad(int i, double t, const Vec& x) const;
  double time_partial(int i, double t, const Vec& x) const;
  Mat hessian(int i, double t, const Vec& x) const;
  Vec time_grad(int i, double t, const Vec& x) const;
};

/// A reference path c(t) in R^d: polynomial in t, sampled (piecewise linear),
/// or a closed-form callable supplied by built-in problems.
class ReferencePath {
 public:
  ReferencePath() = default;
  static ReferencePath polynomial(std::vector<PolyExpr> components);  // each over (t)
  static ReferencePath sampled(std::vector<double> times, std::vector<Vec> values);
  static ReferencePath function(int dim, std::function<Vec(double)> value,
                                std::function<Vec(double)> derivative);
  static ReferencePath constant(const Vec& c);

  int dim() const { return dim_; }
  bool empty() const { return kind_ == Kind::None; }
  Vec value(double t) const;
  Vec derivative(double t) const;

  enum class Kind { None, Polynomial, Sampled, Function };
  Kind kind() const { return kind_; }
  const std::vector<PolyExpr>& components() const { return poly_; }
  const std::vector<double>& sample_times() const { return times_; }
  const std::vector<Vec>& sample_values() const { return values_; }

 private:
  Kind kind_ = Kind::None;
  int dim_ = 0;
  std::vector<PolyExpr> poly_, dpoly_;
  std::vector<double> times_;
  std::vector<Vec> values_;
  std::function<Vec(double)> fn_, dfn_;
};

/// Localization of the sweeping set around a reference pair:
/// psi_{r+1} = (|x - xbar(t)|^2 - eps^2)/2 and phi = (|y - ybar(t)|^2 - delta^2)/2.
struct Truncation {
  bool enabled = false;
  ReferencePath center_x;
  double radius_x = 0.0;
  ReferencePath center_y;
  double radius_y = 0.0;

  void validate() const;
  double psi_ball(double t, const Vec& x) const;
  double phi(double t, const Vec& y) const;
};

/// The (possibly truncated) sweeping set frozen at time t, seen as a finite
/// list of smooth inequality constraints value(i, x) <= 0.
class ConstraintSet {
 public:
  virtual ~ConstraintSet() = default;
  virtual int dim() const = 0;
  virtual int count() const = 0;
  virtual double value(int i, const Vec& x) const = 0;
  virtual Vec grad(int i, const Vec& x) const = 0;
  virtual Mat hess(int i, const Vec& x) const = 0;
};

class SetSlice final : public ConstraintSet {
 public:
  SetSlice(const GeneratorBundle& b, const Truncation* trunc, double t)
      : b_(b), trunc_(trunc && trunc->enabled ? trunc : nullptr), t_(t) {}
  int dim() const override { return b_.n; }
  int count() const override { return b_.r() + (trunc_ ? 1 : 0); }
  double value(int i, const Vec& x) const override;
  Vec grad(int i, const Vec& x) const override;
  Mat hess(int i, const Vec& x) const override;

 private:
  const GeneratorBundle& b_;
  const Truncation* trunc_;
  double t_;
};

/// Single smooth constraint (1/gamma) log sum_i exp(gamma psi_i) <= -level,
/// i.e. the inner penalty set {sum_i e^{gamma psi_i} <= e^{-gamma level}}.
class PenaltySlice final : public ConstraintSet {
 public:
  PenaltySlice(const ConstraintSet& base, double gamma, double level = 0.0)
      : base_(base), gamma_(gamma), level_(level) {}
  int dim() const override { return base_.dim(); }
  int count() const override { return 1; }
  double value(int i, const Vec& x) const override;
  Vec grad(int i, const Vec& x) const override;
  Mat hess(int i, const Vec& x) const override;

 private:
  Vec weights(const Vec& x, double* lse) const;
  const ConstraintSet& base_;
  double gamma_, level_;
};

struct ActiveSet {
  std::vector<int> indices;   // 0-based; index r denotes the truncation ball
  std::vector<double> values; // all constraint values at the point
  double tolerance = 0.0;
};

/// Default active-set tolerance 1e-8 * (1 + coefficient scale of the generators).
double default_active_tol(const GeneratorBundle& b);

double eval_generator(const GeneratorBundle& b, int i, double t, const Vec& x);
ActiveSet active_set(const GeneratorBundle& b, const Truncation* trunc, double t, const Vec& x,
                     double tol);
std::vector<Vec> normal_cone_basis(const GeneratorBundle& b, const Truncation* trunc, double t,
                                   const Vec& x, double tol);

/// Minimum norm of convex combinations of the given vectors.
struct SimplexMinNorm {
  double value = 0.0;
  Vec lambda;
};
SimplexMinNorm simplex_min_norm(const std::vector<Vec>& g, double stationarity_tol = 1e-10);

struct CqResult {
  double min_norm = 0.0;  // m*
  Vec lambda;             // minimizing simplex weights over the active set
  std::vector<int> active;
  bool vacuous = false;   // no active constraint
  bool violated = false;  // m* <= tol
};
CqResult cq_eta(const GeneratorBundle& b, const Truncation* trunc, double t, const Vec& x,
                double tol);

struct DominanceResult {
  bool holds = false;
  double margin = 0.0;
  std::vector<int> active;
};
DominanceResult gram_diag_dominance(const GeneratorBundle& b, double t, const Vec& x,
                                    const Vec& beta, double tol);

double prox_constant(double eta_bar, double L_psi);

/// Sampled lower estimate of the Lipschitz constant of psi_i and grad psi_i
/// over a box in (t, x), using the metric |dt| + |dx|.
double lipschitz_estimate(const GeneratorBundle& b, const Box& region, int samples,
                          std::mt19937_64& rng);

enum class PenaltyMembership { InCgkK, InCgk, Outside };
/// Sum_i e^{gamma psi_i} over the generators (plus the ball when truncating).
double penalty_sum(const GeneratorBundle& b, const Truncation* trunc, double t, const Vec& x,
                   double gamma);
PenaltyMembership penalty_set_membership(const GeneratorBundle& b, const Truncation* trunc,
                                         double t, const Vec& x, double gamma, double alpha_k);

}  // namespace sweep
