#include "sweep/poly.hpp"

#include <algorithm>
#include <map>
#include <sstream>

#include "sweep/errors.hpp"

namespace sweep {

PolyExpr::PolyExpr(int nvars, std::vector<Term> terms) : nvars_(nvars), terms_(std::move(terms)) {
  for (const auto& t : terms_) {
    if (static_cast<int>(t.exps.size()) != nvars_)
      throw InputError("polynomial term has " + std::to_string(t.exps.size()) +
                       " exponents, expected " + std::to_string(nvars_));
    for (int e : t.exps)
      if (e < 0) throw InputError("negative exponent in polynomial term");
  }
  canonicalize();
}

PolyExpr PolyExpr::constant(int nvars, double c) {
  return PolyExpr(nvars, {Term{c, std::vector<int>(nvars, 0)}});
}

PolyExpr PolyExpr::variable(int nvars, int k) {
  std::vector<int> e(nvars, 0);
  e.at(k) = 1;
  return PolyExpr(nvars, {Term{1.0, e}});
}

void PolyExpr::canonicalize() {
  std::map<std::vector<int>, double> acc;
  for (auto& t : terms_) acc[t.exps] += t.coef;
  terms_.clear();
  for (auto& [e, c] : acc)
    if (c != 0.0) terms_.push_back(Term{c, e});
  build_sparse();
}

void PolyExpr::build_sparse() {
  offsets_.assign(1, 0);
  fvar_.clear();
  fexp_.clear();
  for (const auto& t : terms_) {
    for (int k = 0; k < nvars_; ++k)
      if (t.exps[k] > 0) {
        fvar_.push_back(static_cast<std::uint16_t>(k));
        fexp_.push_back(static_cast<std::uint16_t>(t.exps[k]));
      }
    offsets_.push_back(static_cast<std::uint32_t>(fvar_.size()));
  }
}

int PolyExpr::degree() const {
  int d = 0;
  for (const auto& t : terms_) {
    int s = 0;
    for (int e : t.exps) s += e;
    d = std::max(d, s);
  }
  return d;
}

int PolyExpr::degree_in(int k) const {
  int d = 0;
  for (const auto& t : terms_) d = std::max(d, t.exps.at(k));
  return d;
}

double PolyExpr::eval(std::span<const double> v) const {
  if (static_cast<int>(v.size()) < nvars_)
    throw InputError("polynomial evaluated with " + std::to_string(v.size()) +
                     " values, needs " + std::to_string(nvars_));
  double sum = 0.0;
  const std::size_t nt = terms_.size();
  for (std::size_t j = 0; j < nt; ++j) {
    double p = terms_[j].coef;
    for (std::uint32_t f = offsets_[j]; f < offsets_[j + 1]; ++f) {
      const double b = v[fvar_[f]];
      double q = b;
      for (int e = fexp_[f]; e > 1; --e) q *= b;
      p *= q;
    }
    sum += p;
  }
  return sum;
}

PolyExpr PolyExpr::diff(int k) const {
  if (k < 0 || k >= nvars_) throw InputError("derivative index out of range");
  std::vector<Term> out;
  for (const auto& t : terms_) {
    if (t.exps[k] == 0) continue;
    Term d = t;
    d.coef *= t.exps[k];
    d.exps[k] -= 1;
    out.push_back(std::move(d));
  }
  return PolyExpr(nvars_, std::move(out));
}

PolyExpr PolyExpr::remap(int new_nvars, const std::vector<int>& map) const {
  if (static_cast<int>(map.size()) != nvars_) throw InputError("remap size mismatch");
  std::vector<Term> out;
  for (const auto& t : terms_) {
    Term r{t.coef, std::vector<int>(new_nvars, 0)};
    for (int k = 0; k < nvars_; ++k) {
      if (t.exps[k] == 0) continue;
      if (map[k] < 0 || map[k] >= new_nvars) throw InputError("remap target out of range");
      r.exps[map[k]] += t.exps[k];
    }
    out.push_back(std::move(r));
  }
  return PolyExpr(new_nvars, std::move(out));
}

PolyExpr PolyExpr::fix(int k, double value) const {
  std::vector<Term> out;
  for (const auto& t : terms_) {
    Term r = t;
    for (int e = 0; e < t.exps[k]; ++e) r.coef *= value;
    r.exps[k] = 0;
    out.push_back(std::move(r));
  }
  return PolyExpr(nvars_, std::move(out));
}

PolyExpr PolyExpr::operator+(const PolyExpr& o) const {
  if (o.nvars_ != nvars_) throw InputError("adding polynomials over different variable sets");
  auto t = terms_;
  t.insert(t.end(), o.terms_.begin(), o.terms_.end());
  return PolyExpr(nvars_, std::move(t));
}

PolyExpr PolyExpr::operator-(const PolyExpr& o) const { return *this + o * -1.0; }

PolyExpr PolyExpr::operator*(const PolyExpr& o) const {
  if (o.nvars_ != nvars_) throw InputError("multiplying polynomials over different variable sets");
  std::vector<Term> out;
  out.reserve(terms_.size() * o.terms_.size());
  for (const auto& a : terms_)
    for (const auto& b : o.terms_) {
      Term r{a.coef * b.coef, a.exps};
      for (int k = 0; k < nvars_; ++k) r.exps[k] += b.exps[k];
      out.push_back(std::move(r));
    }
  return PolyExpr(nvars_, std::move(out));
}

PolyExpr PolyExpr::operator*(double s) const {
  auto t = terms_;
  for (auto& x : t) x.coef *= s;
  return PolyExpr(nvars_, std::move(t));
}

bool PolyExpr::operator==(const PolyExpr& o) const {
  if (nvars_ != o.nvars_ || terms_.size() != o.terms_.size()) return false;
  for (std::size_t j = 0; j < terms_.size(); ++j)
    if (terms_[j].coef != o.terms_[j].coef || terms_[j].exps != o.terms_[j].exps) return false;
  return true;
}

std::string PolyExpr::to_string() const {
  if (terms_.empty()) return "0";
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& t : terms_) {
    if (!first) os << " + ";
    first = false;
    os << t.coef;
    for (int k = 0; k < nvars_; ++k)
      if (t.exps[k] > 0) {
        os << "*v" << k;
        if (t.exps[k] > 1) os << "^" << t.exps[k];
      }
  }
  return os.str();
}

}  // namespace sweep
