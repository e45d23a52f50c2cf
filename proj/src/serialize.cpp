#include "sweep/serialize.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sweep/errors.hpp"

namespace sweep {

namespace {

void put(std::ostream& os, double v) {
  char buf[32];
  const int len = std::snprintf(buf, sizeof buf, "%.17g", v);
  os.write(buf, len);
}

double parse_double(const std::string& s, int line) {
  double v = 0.0;
  const char* b = s.data();
  const char* e = b + s.size();
  while (b < e && *b == ' ') ++b;
  auto [ptr, ec] = std::from_chars(b, e, v);
  if (ec != std::errc() || ptr == b) {
    // from_chars rejects "inf"/"nan" spellings written by printf
    try {
      return std::stod(s);
    } catch (...) {
      throw InputError("trajectory CSV line " + std::to_string(line) + ": bad number '" + s + "'");
    }
  }
  return v;
}

int count_prefix(const std::vector<std::string>& cols, char c) {
  int k = 0;
  for (const auto& s : cols)
    if (s.size() > 1 && s[0] == c && std::isdigit(static_cast<unsigned char>(s[1]))) ++k;
  return k;
}

std::vector<double> to_vector(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vec from_json_vec(const Json& j) {
  if (!j.is_array()) throw InputError("expected a numeric array in JSON");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[i] = j[i].get<double>();
  return v;
}

Json residual_json(double v) {
  return std::isfinite(v) ? Json(v) : Json(std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf"));
}

}  // namespace

// ---------------------------------------------------------------- CSV

void write_trajectory_csv(std::ostream& os, const Trajectory& tr) {
  const int N = tr.nodes();
  if (N == 0) throw InputError("cannot write an empty trajectory");
  const int n = static_cast<int>(tr.x[0].size()), l = static_cast<int>(tr.y[0].size());
  const int m = tr.u.empty() ? 0 : static_cast<int>(tr.u[0].size());
  const int k = tr.xi.empty() ? 0 : static_cast<int>(tr.xi[0].size());
  os << "t";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  for (int i = 1; i <= l; ++i) os << ",y" << i;
  for (int i = 1; i <= m; ++i) os << ",u" << i;
  for (int i = 1; i <= k; ++i) os << ",xi" << i;
  os << ",zeta\n";
  for (int j = 0; j < N; ++j) {
    put(os, tr.t[j]);
    auto row = [&](const Vec& v) {
      for (int i = 0; i < v.size(); ++i) {
        os << ',';
        put(os, v[i]);
      }
    };
    row(tr.x[j]);
    row(tr.y[j]);
    if (m > 0) row(tr.u[std::min<int>(j, static_cast<int>(tr.u.size()) - 1)]);
    if (k > 0) row(tr.xi[j]);
    os << ',';
    put(os, j < static_cast<int>(tr.zeta.size()) ? tr.zeta[j] : 0.0);
    os << '\n';
  }
}

void save_trajectory_csv(const std::string& path, const Trajectory& tr) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write '" + path + "'");
  write_trajectory_csv(f, tr);
}

Trajectory read_trajectory_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw InputError("trajectory CSV is empty");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) {
      while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.pop_back();
      cols.push_back(c);
    }
  }
  if (cols.empty() || cols[0] != "t" || cols.back() != "zeta")
    throw InputError("trajectory CSV header must start with t and end with zeta");
  const int n = count_prefix(cols, 'x'), l = count_prefix(cols, 'y'), m = count_prefix(cols, 'u');
  int k = 0;
  for (const auto& c : cols) k += c.rfind("xi", 0) == 0 ? 1 : 0;
  if (1 + n + l + m + k + 1 != static_cast<int>(cols.size()))
    throw InputError("trajectory CSV header has unexpected columns");
  Trajectory tr;
  tr.limit = true;
  std::vector<Vec> urows;
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    std::vector<double> v;
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, ',')) v.push_back(parse_double(c, lineno));
    if (v.size() != cols.size())
      throw InputError("trajectory CSV line " + std::to_string(lineno) + " has " +
                       std::to_string(v.size()) + " fields, expected " + std::to_string(cols.size()));
    int o = 0;
    tr.t.push_back(v[o++]);
    auto take = [&](int d) {
      Vec out(d);
      for (int i = 0; i < d; ++i) out[i] = v[o++];
      return out;
    };
    tr.x.push_back(take(n));
    tr.y.push_back(take(l));
    urows.push_back(take(m));
    tr.xi.push_back(take(k));
    tr.zeta.push_back(v[o]);
  }
  if (tr.t.size() < 2) throw InputError("trajectory CSV needs at least two rows");
  for (std::size_t j = 1; j < tr.t.size(); ++j)
    if (!(tr.t[j] > tr.t[j - 1])) throw InputError("trajectory CSV times must increase");
  tr.u.assign(urows.begin(), urows.end() - 1);
  tr.diag.integrator = "file";
  return tr;
}

Trajectory load_trajectory_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read '" + path + "'");
  return read_trajectory_csv(f);
}

// ---------------------------------------------------------------- certificate

Json to_json(const Vec& v) { return Json(to_vector(v)); }

Json certificate_to_json(const PmpCertificate& c) {
  Json j;
  j["lambda"] = c.lambda;
  j["lambda_one"] = c.lambda_one;
  j["t"] = c.t;
  auto rows = [](const std::vector<Vec>& a) {
    Json out = Json::array();
    for (const auto& v : a) out.push_back(to_json(v));
    return out;
  };
  j["q"] = rows(c.q);
  j["v"] = rows(c.v);
  j["xi"] = rows(c.xi);
  j["q_jumps"] = Json::array();
  for (const auto& J : c.q_jumps) j["q_jumps"].push_back({{"t", J.t}, {"jump", to_json(J.jump)}});
  j["nu"] = Json::array();
  for (int i = 0; i < c.r(); ++i) {
    Json atoms = Json::array();
    for (const auto& a : c.nu_atoms[i]) atoms.push_back({{"t", a.t}, {"weight", a.weight}});
    j["nu"].push_back({{"density", c.nu_density[i]}, {"atoms", atoms}});
  }
  return j;
}

PmpCertificate certificate_from_json(const Json& j) {
  try {
    PmpCertificate c;
    c.lambda = j.at("lambda").get<double>();
    c.lambda_one = j.value("lambda_one", false);
    c.t = j.at("t").get<std::vector<double>>();
    for (const auto& v : j.at("q")) c.q.push_back(from_json_vec(v));
    for (const auto& v : j.at("v")) c.v.push_back(from_json_vec(v));
    for (const auto& v : j.at("xi")) c.xi.push_back(from_json_vec(v));
    for (const auto& J : j.value("q_jumps", Json::array()))
      c.q_jumps.push_back({J.at("t").get<double>(), from_json_vec(J.at("jump"))});
    for (const auto& nu : j.at("nu")) {
      c.nu_density.push_back(nu.at("density").get<std::vector<double>>());
      std::vector<MeasureAtom> atoms;
      for (const auto& a : nu.value("atoms", Json::array()))
        atoms.push_back({a.at("t").get<double>(), a.at("weight").get<double>()});
      c.nu_atoms.push_back(atoms);
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed certificate: ") + e.what());
  }
}

PmpCertificate load_certificate(const std::string& path) { return certificate_from_json(load_json(path)); }

// ---------------------------------------------------------------- reports

Json to_json(const TrajectoryDiagnostics& d) {
  return {{"integrator", d.integrator},
          {"steps_accepted", d.steps_accepted},
          {"steps_rejected", d.steps_rejected},
          {"rhs_evals", d.rhs_evals},
          {"h_min", residual_json(d.h_min)},
          {"max_constraint", residual_json(d.max_constraint)},
          {"max_sigma_ratio", residual_json(d.max_sigma_ratio)},
          {"invariance_flag", d.invariance_flag}};
}

Json to_json(const InvarianceReport& r) {
  return {{"ok", r.ok()},
          {"max_sigma_ratio", residual_json(r.max_sigma_ratio)},
          {"initial_sigma_ratio", residual_json(r.initial_sigma_ratio)},
          {"sigma_ok", r.sigma_ok},
          {"max_y_distance", r.max_y_distance},
          {"rho", residual_json(r.rho)},
          {"y_ok", r.y_ok},
          {"max_xi_sum", r.max_xi_sum},
          {"max_zeta", r.max_zeta},
          {"multiplier_bound", residual_json(r.multiplier_bound)},
          {"multiplier_ok", r.multiplier_ok},
          {"max_speed", r.max_speed},
          {"speed_bound", residual_json(r.speed_bound)},
          {"speed_ok", r.speed_ok},
          {"first_violation", r.first_violation}};
}

Json to_json(const CheckReport& r) {
  Json j;
  j["all_pass"] = r.all_pass();
  j["conditions"] = Json::array();
  for (const auto& c : r.conditions) {
    Json e = {{"name", c.name}, {"residual", residual_json(c.residual)}, {"tol", c.tol}, {"pass", c.pass}};
    if (c.witness_t >= 0) e["witness_t"] = c.witness_t;
    if (!c.note.empty()) e["note"] = c.note;
    j["conditions"].push_back(e);
  }
  return j;
}

Json to_json(const AssemblyReport& r) {
  return {{"gammas", r.gammas},
          {"atom_mass", r.atom_mass},
          {"masses_converged", r.masses_converged},
          {"window", r.window},
          {"warnings", r.warnings}};
}

Json to_json(const OptimizeResult& r) {
  Json j;
  j["cost"] = r.best.cost;
  j["violation"] = r.best.violation;
  j["start_distance"] = r.best.start_distance;
  j["gamma"] = r.traj.gamma;
  j["best_start"] = r.best_start;
  j["x0"] = to_json(r.x0);
  j["y0"] = to_json(r.y0);
  j["xT"] = to_json(r.traj.x.back());
  j["yT"] = to_json(r.traj.y.back());
  Json u = Json::array();
  for (const auto& v : r.u.values) u.push_back(to_json(v));
  j["u"] = u;
  j["start_objectives"] = Json::array();
  for (double v : r.start_objectives) j["start_objectives"].push_back(residual_json(v));
  j["rung_costs"] = r.rung_costs;
  j["stages"] = Json::array();
  for (const auto& s : r.history)
    j["stages"].push_back({{"start", s.start},
                           {"gamma", s.gamma},
                           {"weight", s.weight},
                           {"cost", s.cost},
                           {"objective", s.objective},
                           {"violation", s.violation},
                           {"iterations", s.iterations},
                           {"evaluations", s.evaluations}});
  j["invariance"] = to_json(r.invariance);
  j["integrator"] = r.traj.diag.integrator;
  j["warnings"] = r.warnings;
  j["failures"] = r.failures;
  j["note"] = "local minimizer from multistart; basins are explored only by the starts";
  return j;
}

void save_json(const std::string& path, const Json& j) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << j.dump(2) << '\n';
}

Json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot read '" + path + "'");
  try {
    return Json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
}

}  // namespace sweep
