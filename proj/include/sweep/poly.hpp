#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sweep {

/// One monomial: coef * prod_k v[k]^exps[k].
struct Term {
  double coef = 0.0;
  std::vector<int> exps;
};

/// Multivariate polynomial over a fixed number of variables.
///
/// Terms are kept in canonical form: duplicate exponent vectors merged,
/// zero coefficients dropped, sorted lexicographically by exponent vector.
/// The variable meaning is decided by the owner (e.g. (t, x, y, u) for the
/// dynamics, endpoint variables for costs).
class PolyExpr {
 public:
  PolyExpr() = default;
  explicit PolyExpr(int nvars) : nvars_(nvars) {}
  PolyExpr(int nvars, std::vector<Term> terms);

  static PolyExpr constant(int nvars, double c);
  static PolyExpr variable(int nvars, int k);

  int nvars() const { return nvars_; }
  const std::vector<Term>& terms() const { return terms_; }
  bool is_zero() const { return terms_.empty(); }
  int degree() const;
  /// Highest exponent of variable k over all terms.
  int degree_in(int k) const;
  /// True if the polynomial does not depend on variable k.
  bool independent_of(int k) const { return degree_in(k) == 0; }

  double eval(std::span<const double> v) const;
  PolyExpr diff(int k) const;

  /// Re-embeds into a space of new_nvars variables; variable k goes to map[k].
  PolyExpr remap(int new_nvars, const std::vector<int>& map) const;
  /// Substitutes variable k by a constant value (variable count unchanged).
  PolyExpr fix(int k, double value) const;

  PolyExpr operator+(const PolyExpr& o) const;
  PolyExpr operator-(const PolyExpr& o) const;
  PolyExpr operator*(const PolyExpr& o) const;
  PolyExpr operator*(double s) const;
  PolyExpr operator-() const { return *this * -1.0; }

  bool operator==(const PolyExpr& o) const;

  std::string to_string() const;

 private:
  void canonicalize();
  void build_sparse();

  int nvars_ = 0;
  std::vector<Term> terms_;
  // flattened (var, exp) factors for fast evaluation
  std::vector<std::uint32_t> offsets_;
  std::vector<std::uint16_t> fvar_;
  std::vector<std::uint16_t> fexp_;
};

inline PolyExpr operator*(double s, const PolyExpr& p) { return p * s; }

}  // namespace sweep
