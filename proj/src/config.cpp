#include "sweep/config.hpp"

#include <yaml-cpp/yaml.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "sweep/errors.hpp"
#include "sweep/serialize.hpp"

namespace sweep {

namespace {

[[noreturn]] void fail(const YAML::Node& n, const std::string& what) {
  const auto m = n.Mark();
  if (m.is_null()) throw InputError("config: " + what);
  throw InputError("config line " + std::to_string(m.line + 1) + ": " + what);
}

YAML::Node need(const YAML::Node& n, const std::string& key) {
  if (!n.IsMap()) fail(n, "expected a mapping");
  const YAML::Node v = n[key];
  if (!v) fail(n, "missing key '" + key + "'");
  return v;
}

double number(const YAML::Node& n) {
  try {
    return n.as<double>();
  } catch (const YAML::Exception&) {
    fail(n, "expected a number");
  }
}

int integer(const YAML::Node& n) {
  try {
    return n.as<int>();
  } catch (const YAML::Exception&) {
    fail(n, "expected an integer");
  }
}

Vec vec(const YAML::Node& n, int dim, const std::string& what) {
  if (!n.IsSequence()) fail(n, what + " must be a list");
  if (dim >= 0 && static_cast<int>(n.size()) != dim)
    fail(n, what + " must have " + std::to_string(dim) + " entries");
  Vec v(n.size());
  for (std::size_t i = 0; i < n.size(); ++i) v[i] = number(n[i]);
  return v;
}

// [[coef, [e0, e1, ...]], ...]
PolyExpr terms(const YAML::Node& n, int nvars, const std::string& what) {
  if (!n.IsSequence()) fail(n, what + ": term list must be a sequence");
  std::vector<Term> out;
  for (const auto& t : n) {
    if (!t.IsSequence() || t.size() != 2 || !t[1].IsSequence())
      fail(t, what + ": each term is [coefficient, [exponents]]");
    Term term;
    term.coef = number(t[0]);
    for (const auto& e : t[1]) {
      const int k = integer(e);
      if (k < 0) fail(e, what + ": exponents must be nonnegative");
      term.exps.push_back(k);
    }
    if (static_cast<int>(term.exps.size()) != nvars)
      fail(t, what + ": exponent vector needs " + std::to_string(nvars) + " entries");
    out.push_back(std::move(term));
  }
  return PolyExpr(nvars, std::move(out));
}

std::vector<PolyExpr> term_lists(const YAML::Node& n, int count, int nvars, const std::string& what) {
  if (!n.IsSequence()) fail(n, what + " must be a list of term lists");
  if (count >= 0 && static_cast<int>(n.size()) != count)
    fail(n, what + " must have " + std::to_string(count) + " components");
  std::vector<PolyExpr> out;
  for (std::size_t i = 0; i < n.size(); ++i)
    out.push_back(terms(n[i], nvars, what + "[" + std::to_string(i) + "]"));
  return out;
}

// Term lists in t, or "from-trajectory <file>" taking the x or y columns.
ReferencePath path_node(const YAML::Node& n, int dim, bool want_x, const std::string& base) {
  if (n.IsScalar()) {
    const std::string s = n.as<std::string>();
    const std::string key = "from-trajectory";
    if (s.rfind(key, 0) != 0) fail(n, "reference path must be term lists or 'from-trajectory <file>'");
    std::string file = s.substr(key.size());
    file.erase(0, file.find_first_not_of(' '));
    std::filesystem::path fp(file);
    if (fp.is_relative()) fp = std::filesystem::path(base) / fp;
    const Trajectory tr = load_trajectory_csv(fp.string());
    const auto& vals = want_x ? tr.x : tr.y;
    if (vals.empty() || vals[0].size() != dim) fail(n, "reference trajectory has wrong dimension");
    return ReferencePath::sampled(tr.t, vals);
  }
  if (dim == 0 && n.IsSequence() && n.size() == 0) return ReferencePath::constant(Vec());
  return ReferencePath::polynomial(term_lists(n, dim, 1, "reference path"));
}

}  // namespace

SweepingProblem parse_problem(const std::string& text, const std::string& base) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw InputError(std::string("config is not valid YAML: ") + e.what());
  }
  if (!root.IsMap()) throw InputError("config: top level must be a mapping");
  SweepingProblem p;
  p.name = root["name"] ? root["name"].as<std::string>() : "config";
  const YAML::Node dims = need(root, "dims");
  p.n = integer(need(dims, "n"));
  p.l = dims["l"] ? integer(dims["l"]) : 0;
  p.m = dims["m"] ? integer(dims["m"]) : 0;
  if (p.n <= 0 || p.l < 0 || p.m < 0) fail(dims, "dimensions must satisfy n > 0, l >= 0, m >= 0");
  p.T = number(need(root, "T"));
  const VarLayout L = p.layout();
  const int E = p.endpoint_size();

  p.bundle = GeneratorBundle(p.n, term_lists(need(root, "generators"), -1, 1 + p.n, "generators"));
  if (p.bundle.r() == 0) fail(root["generators"], "need at least one generator");
  p.f = term_lists(need(root, "f"), p.n, L.size(), "f");
  p.g = p.l > 0 ? term_lists(need(root, "g"), p.l, L.size(), "g") : std::vector<PolyExpr>{};

  if (p.m > 0) {
    const YAML::Node U = need(root, "U");
    if (!U.IsSequence() || U.size() == 0) fail(U, "U must be a non-empty list of boxes");
    for (const auto& b : U) {
      p.U.breaks.push_back(b["t"] ? number(b["t"]) : 0.0);
      p.U.lo.push_back(vec(need(b, "lo"), p.m, "U.lo"));
      p.U.hi.push_back(vec(need(b, "hi"), p.m, "U.hi"));
    }
  } else {
    p.U = ControlBox::constant(Vec(), Vec());
  }

  if (const YAML::Node S = root["S"]) {
    if (!S.IsSequence()) fail(S, "S must be a list");
    for (const auto& c : S) {
      EndpointConstraint ec;
      const std::string kind = need(c, "kind").as<std::string>();
      if (kind == "eq") ec.kind = EndpointConstraint::Kind::Eq;
      else if (kind == "ineq") ec.kind = EndpointConstraint::Kind::Ineq;
      else fail(c, "S kind must be 'eq' or 'ineq'");
      ec.expr = terms(need(c, "terms"), E, "S");
      p.S.push_back(ec);
    }
  }

  p.J.poly = PolyExpr(E);
  if (const YAML::Node J = root["J"]) {
    if (J["poly"]) p.J.poly = terms(J["poly"], E, "J.poly");
    if (const YAML::Node a = J["abs_terms"]) {
      for (const auto& t : a) {
        AbsTerm at;
        at.weight = number(need(t, "weight"));
        if (at.weight < 0) fail(t, "abs term weights must be nonnegative");
        at.affine = terms(need(t, "terms"), E, "J.abs_terms");
        if (at.affine.degree() > 1) fail(t, "abs terms must be affine");
        p.J.abs_terms.push_back(at);
      }
    }
  }

  if (const YAML::Node tr = root["truncation"]) {
    p.truncation.enabled = tr["enabled"] ? tr["enabled"].as<bool>() : true;
    p.truncation.center_x = path_node(need(tr, "center_x"), p.n, true, base);
    p.truncation.radius_x = number(need(tr, "radius_x"));
    p.truncation.center_y = tr["center_y"] ? path_node(tr["center_y"], p.l, false, base)
                                           : ReferencePath::constant(Vec::Zero(p.l));
    p.truncation.radius_y = number(need(tr, "radius_y"));
  }

  if (const YAML::Node ap = root["audit_path"]) {
    p.audit_x = path_node(need(ap, "x"), p.n, true, base);
    p.audit_y = ap["y"] ? path_node(ap["y"], p.l, false, base) : ReferencePath::constant(Vec::Zero(p.l));
  }

  if (const YAML::Node st = root["start"]) {
    if (st["x0"]) p.x0 = vec(st["x0"], p.n, "start.x0");
    if (st["y0"]) p.y0 = vec(st["y0"], p.l, "start.y0");
  }
  if (!p.y0 && p.l == 0) p.y0 = Vec();

  p.validate();

  if (const YAML::Node c = root["audited_constants"]) {
    AuditedConstants k;
    k.eta_bar = number(need(c, "eta_bar"));
    k.mu_bar = number(need(c, "mu_bar"));
    k.L_bar = number(need(c, "L_bar"));
    k.M_h = c["M_h"] ? number(c["M_h"]) : 0.0;
    k.L_psi = c["L_psi"] ? number(c["L_psi"]) : 0.0;
    if (!(k.eta_bar > 0) || !(k.mu_bar > 0) || !(k.L_bar > 0))
      fail(c, "audited constants eta_bar, mu_bar, L_bar must be positive");
    p.constants = k;
  } else {
    auto rng = make_rng(20240601, "config-audit:" + p.name);
    p.constants = audit_constants(p, audit_path_samples(p, 256), 256, rng).constants;
  }
  return p;
}

SweepingProblem load_problem_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_problem(ss.str(), dir.empty() ? "." : dir.string());
}

std::vector<PathSample> audit_path_samples(const SweepingProblem& p, int count) {
  if (p.truncation.enabled) return reference_samples(p, count);
  std::vector<PathSample> out;
  for (int j = 0; j < count; ++j) {
    const double t = p.T * j / std::max(1, count - 1);
    if (!p.audit_x.empty())
      out.push_back({t, p.audit_x.value(t), p.audit_y.empty() ? Vec::Zero(p.l) : p.audit_y.value(t)});
    else
      out.push_back({t, p.x0 ? *p.x0 : Vec::Zero(p.n), p.y0 ? *p.y0 : Vec::Zero(p.l)});
  }
  return out;
}

}  // namespace sweep
