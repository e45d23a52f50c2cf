// Command-line front end. Exit codes: 0 success/pass, 1 verification failure,
// 2 input error, 3 numerical failure.

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sweep/config.hpp"
#include "sweep/errors.hpp"
#include "sweep/registry.hpp"
#include "sweep/serialize.hpp"

using namespace sweep;

namespace {

struct Common {
  std::string problem, config;
  bool global = false;
  std::string csv, report;
};

void add_common(CLI::App* c, Common& o) {
  c->add_option("--problem", o.problem, "built-in problem name");
  c->add_option("--config", o.config, "problem file (YAML)");
  c->add_flag("--global", o.global, "disable truncation (global mode)");
  c->add_option("--csv", o.csv, "trajectory CSV output");
  c->add_option("--report", o.report, "JSON report output (default: stdout)");
}

SweepingProblem load(const Common& o) {
  if (o.problem.empty() == o.config.empty()) throw InputError("give exactly one of --problem or --config");
  SweepingProblem p = o.problem.empty() ? load_problem_file(o.config) : registry_problem(o.problem);
  if (o.global) p.truncation.enabled = false;
  return p;
}

Vec parse_list(const std::string& s, int dim, const std::string& what) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    try {
      v.push_back(std::stod(tok));
    } catch (...) {
      throw InputError(what + ": bad number '" + tok + "'");
    }
  }
  if (dim >= 0 && static_cast<int>(v.size()) != dim)
    throw InputError(what + " needs " + std::to_string(dim) + " values");
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// "lo:hi:factor"
std::vector<double> parse_ladder(const std::string& s) {
  const Vec v = parse_list([&] {
    std::string c = s;
    std::replace(c.begin(), c.end(), ':', ',');
    return c;
  }(), 3, "--ladder");
  return geometric_ladder(v[0], v[1], v[2]);
}

// A constant "a,b,..." or a file of rows "t,u1..um" (piecewise constant from t).
ControlSignal parse_control(const SweepingProblem& p, const std::string& spec) {
  if (p.m == 0) return ControlSignal::constant(p.T, Vec());
  if (spec.empty()) {
    return ControlSignal::constant(p.T, p.U.clamp(0.0, Vec::Zero(p.m)));
  }
  std::ifstream f(spec);
  if (!f) return ControlSignal::constant(p.T, parse_list(spec, p.m, "--u"));
  ControlSignal c;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty() || !(std::isdigit(static_cast<unsigned char>(line[0])) || line[0] == '-' || line[0] == '.'))
      continue;
    const Vec row = parse_list(line, 1 + p.m, "control file row");
    c.breaks.push_back(row[0]);
    c.values.push_back(row.tail(p.m));
  }
  if (c.values.empty() || c.breaks.front() != 0.0) throw InputError("control file must start at t = 0");
  c.breaks.push_back(p.T);
  return c;
}

Vec start_x(const SweepingProblem& p, const std::string& s) {
  if (!s.empty()) return parse_list(s, p.n, "--x0");
  if (!p.x0) throw InputError("problem has no default start; pass --x0");
  return *p.x0;
}

Vec start_y(const SweepingProblem& p, const std::string& s) {
  if (!s.empty()) return parse_list(s, p.l, "--y0");
  return p.y0 ? *p.y0 : Vec::Zero(p.l);
}

void emit(const Common& o, const Json& j) {
  if (o.report.empty())
    std::cout << j.dump(2) << '\n';
  else
    save_json(o.report, j);
}

Json exact_error(const SweepingProblem& p, const Trajectory& tr) {
  auto exact = registry_exact_state(p.name);
  if (!exact || p.name.empty()) return nullptr;
  double err = 0.0;
  for (int j = 0; j < tr.nodes(); ++j) {
    Vec z(p.n + p.l);
    z << tr.x[j], tr.y[j];
    err = std::max(err, (z - (*exact)(tr.t[j])).lpNorm<Eigen::Infinity>());
  }
  return err;
}

// ---------------------------------------------------------------- check-cq

int cmd_check_cq(const Common& o, const std::string& traj_file, int samples) {
  const SweepingProblem p = load(o);
  std::vector<PathSample> path;
  std::string source;
  if (!traj_file.empty()) {
    path = trajectory_samples(load_trajectory_csv(traj_file), samples);
    source = "trajectory " + traj_file;
  } else if (auto exact = registry_exact_state(p.name); exact && !o.problem.empty()) {
    for (int j = 0; j < samples; ++j) {
      const double t = p.T * j / std::max(1, samples - 1);
      const Vec z = (*exact)(t);
      path.push_back({t, z.head(p.n), z.tail(p.l)});
    }
    source = "closed-form solution";
  } else {
    path = audit_path_samples(p, samples);
    source = p.truncation.enabled ? "reference path" : (p.audit_x.empty() ? "default start" : "audit path");
  }
  const double tol = std::max(default_active_tol(p.bundle), 1e-9);
  double min_norm = std::numeric_limits<double>::infinity();
  double min_margin = std::numeric_limits<double>::infinity();
  int active = 0;
  bool violated = false;
  Json violations = Json::array(), infeasible = Json::array();
  for (const auto& s : path) {
    try {
      const CqResult cq = cq_eta(p.bundle, p.trunc(), s.t, s.x, tol);
      if (cq.vacuous) continue;
      ++active;
      min_norm = std::min(min_norm, cq.min_norm);
      if (cq.violated) {
        violated = true;
        violations.push_back({{"t", s.t}, {"x", to_json(s.x)}, {"min_norm", cq.min_norm}});
      }
      std::vector<int> gens;
      for (int i : cq.active)
        if (i < p.r()) gens.push_back(i);
      if (!gens.empty()) {
        const DominanceResult d = gram_diag_dominance(p.bundle, s.t, s.x, Vec::Ones(p.r()), tol);
        min_margin = std::min(min_margin, d.margin);
      }
    } catch (const InfeasiblePoint& e) {
      infeasible.push_back({{"t", s.t}, {"x", to_json(s.x)}, {"index", e.index}});
    }
  }
  Json j;
  j["problem"] = p.name;
  j["path"] = source;
  j["samples"] = static_cast<int>(path.size());
  j["active_samples"] = active;
  j["infeasible_points"] = infeasible;
  if (active == 0) {
    j["status"] = "no active constraints";
  } else {
    j["status"] = violated ? "CQ violated" : "CQ holds";
    j["min_simplex_norm"] = min_norm;
    j["eta_bar_sampled"] = 0.5 * min_norm;
    if (std::isfinite(min_margin)) j["min_dominance_margin"] = min_margin;
    j["violations"] = violations;
    if (p.constants && p.constants->L_psi > 0 && min_norm > 0) {
      j["L_psi_sampled"] = p.constants->L_psi;
      j["prox_constant"] = prox_constant(0.5 * min_norm, p.constants->L_psi);
    }
  }
  if (p.constants) {
    j["constants"] = {{"eta_bar", p.constants->eta_bar}, {"mu_bar", p.constants->mu_bar},
                      {"L_bar", p.constants->L_bar},     {"M_h", p.constants->M_h},
                      {"L_psi", p.constants->L_psi},     {"sampled_lower_estimates", p.constants->sampled}};
  }
  emit(o, j);
  return violated ? 1 : 0;
}

// ---------------------------------------------------------------- simulate / solve / oracle

struct RunFlags {
  double gamma = 1e4;
  std::string ladder = "1e2:1e5:10";
  std::string u, x0, y0;
  int grid = 1000;
  double tol = 1e-3;
  double h = 1e-3;
  std::string against;
};

int cmd_simulate(const Common& o, const RunFlags& f) {
  const SweepingProblem p = load(o);
  const PenaltySchedule s = make_schedule(p, {f.gamma});
  const ControlSignal u = parse_control(p, f.u);
  const Vec xs = interior_start(p, s, 0, start_x(p, f.x0));
  const Vec ys = interior_start_y(p, s, 0, start_y(p, f.y0));
  const Trajectory tr = integrate_penalized(p, f.gamma, s.alphas[0], u, xs, ys, GridSpec{f.grid});
  if (!o.csv.empty()) save_trajectory_csv(o.csv, tr);
  Json j = {{"command", "simulate"},
            {"gamma", f.gamma},
            {"alpha", s.alphas[0]},
            {"sigma", s.sigmas[0]},
            {"start", to_json(xs)},
            {"diagnostics", to_json(tr.diag)},
            {"invariance", to_json(invariance_report(p, tr, s, 0))}};
  emit(o, j);
  return 0;
}

int cmd_solve(const Common& o, const RunFlags& f) {
  const SweepingProblem p = load(o);
  const PenaltySchedule s = make_schedule(p, parse_ladder(f.ladder));
  const ControlSignal u = parse_control(p, f.u);
  const SweepResult r = solve_sweeping(p, u, start_x(p, f.x0), start_y(p, f.y0), s, f.tol, GridSpec{f.grid});
  if (!o.csv.empty()) save_trajectory_csv(o.csv, r.traj);
  Json inv = Json::array();
  for (const auto& i : r.invariance) inv.push_back(to_json(i));
  Json j = {{"command", "solve"},
            {"gamma", "limit"},
            {"finest_gamma", r.traj.gamma},
            {"gammas", r.gammas},
            {"ladder_residuals", r.residuals},
            {"converged", r.converged},
            {"converged_rung", r.converged_rung},
            {"ladder_factor_note", "growth factor is a user choice (default x10 per rung)"},
            {"diagnostics", to_json(r.traj.diag)},
            {"invariance", inv}};
  if (Json e = exact_error(p, r.traj); !e.is_null()) j["sup_error_closed_form"] = e;
  emit(o, j);
  return 0;
}

int cmd_oracle(const Common& o, const RunFlags& f) {
  const SweepingProblem p = load(o);
  const ControlSignal u = parse_control(p, f.u);
  const Trajectory tr = catch_up_extrapolated(p, u, start_x(p, f.x0), start_y(p, f.y0), f.h);
  if (!o.csv.empty()) save_trajectory_csv(o.csv, tr);
  Json j = {{"command", "oracle"}, {"scheme", "catching-up, Richardson (h, h/2)"}, {"h", f.h}};
  if (!f.against.empty()) {
    const Trajectory other = load_trajectory_csv(f.against);
    j["sup_difference"] = std::max(sup_distance(tr, other), sup_distance(other, tr));
  }
  if (Json e = exact_error(p, tr); !e.is_null()) j["sup_error_closed_form"] = e;
  emit(o, j);
  return 0;
}

// ---------------------------------------------------------------- optimize

int cmd_optimize(const Common& o, int N, int starts, std::uint64_t seed, const std::string& ladder,
                 int steps, int threads, double max_violation) {
  const SweepingProblem p = load(o);
  TranscriptionConfig cfg;
  cfg.N = N;
  cfg.starts = starts;
  cfg.seed = seed;
  cfg.gammas = parse_ladder(ladder);
  cfg.steps_per_interval = steps;
  cfg.threads = threads;
  const OptimizeResult r = optimize(p, cfg);
  if (!o.csv.empty()) save_trajectory_csv(o.csv, r.traj);
  Json j = to_json(r);
  j["command"] = "optimize";
  j["seed"] = seed;
  j["max_violation"] = max_violation;
  const bool ok = r.best.violation <= max_violation && r.best.start_distance <= max_violation;
  j["pass"] = ok;
  emit(o, j);
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------- certificates

int cmd_check_pmp(const Common& o, const std::string& traj_file, const std::string& cert_file,
                  const CheckOptions& opt) {
  const SweepingProblem p = load(o);
  const Trajectory tr = load_trajectory_csv(traj_file);
  const PmpCertificate c = load_certificate(cert_file);
  const CheckReport rep = check_pmp(c, p, tr, opt);
  Json j = to_json(rep);
  j["command"] = "check-pmp";
  j["tolerances"] = {{"tol", opt.tol},
                     {"active_tol", opt.active_tol},
                     {"nontriviality_tol", opt.nontriviality_tol},
                     {"test_basis_size", opt.test_basis_size},
                     {"control_grid_density", opt.control_grid_density}};
  emit(o, j);
  return rep.all_pass() ? 0 : 1;
}

int cmd_assemble(const Common& o, const RunFlags& f, const std::string& qT, const std::string& vT,
                 double lambda, const std::string& cert_out) {
  const SweepingProblem p = load(o);
  const PenaltySchedule s = make_schedule(p, parse_ladder(f.ladder));
  const ControlSignal u = parse_control(p, f.u);
  const Vec x0 = start_x(p, f.x0), y0 = start_y(p, f.y0);
  const Vec q = parse_list(qT, p.n, "--qT");
  const Vec v = vT.empty() ? Vec::Zero(p.l) : parse_list(vT, p.l, "--vT");
  std::vector<LadderRun> runs;
  for (int k = 0; k < s.size(); ++k) {
    const Vec xs = interior_start(p, s, k, x0);
    const Vec ys = interior_start_y(p, s, k, y0);
    Trajectory tr = integrate_penalized(p, s.gammas[k], s.alphas[k], u, xs, ys, GridSpec{f.grid});
    AdjointPath adj = integrate_adjoint_penalized(p, s.gammas[k], tr, q, v, lambda);
    runs.push_back({std::move(tr), std::move(adj)});
  }
  AssemblyReport rep;
  const PmpCertificate c = assemble_certificate(p, runs, &rep);
  if (!cert_out.empty()) save_json(cert_out, certificate_to_json(c));
  if (!o.csv.empty()) save_trajectory_csv(o.csv, runs.back().traj);
  Json j = to_json(rep);
  j["command"] = "assemble";
  j["lambda"] = c.lambda;
  emit(o, j);
  return 0;
}

int cmd_export_example(const Common& o, int grid, const std::string& cert_out) {
  const Trajectory tr = worked_example_trajectory(grid);
  const PmpCertificate c = worked_example_certificate(grid);
  if (!o.csv.empty()) save_trajectory_csv(o.csv, tr);
  if (!cert_out.empty()) save_json(cert_out, certificate_to_json(c));
  emit(o, {{"command", "export-example"}, {"grid", grid}, {"lambda", c.lambda}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sweeping-process optimal control toolkit"};
  app.require_subcommand(1);
  Common common;
  RunFlags run;

  auto* cq = app.add_subcommand("check-cq", "audit constraint qualifications along a path");
  add_common(cq, common);
  std::string cq_traj;
  int cq_samples = 256;
  cq->add_option("--trajectory", cq_traj, "sample along this trajectory CSV");
  cq->add_option("--samples", cq_samples, "number of path samples");

  auto* sim = app.add_subcommand("simulate", "integrate the penalized system at one gamma");
  auto* solve = app.add_subcommand("solve", "gamma ladder until consecutive rungs agree");
  auto* orc = app.add_subcommand("oracle", "catching-up reference solution");
  for (auto* c : {sim, solve, orc}) {
    add_common(c, common);
    c->add_option("--u", run.u, "control: constant 'a,b,..' or file of rows 't,u1..um'");
    c->add_option("--x0", run.x0, "start x (comma separated)");
    c->add_option("--y0", run.y0, "start y (comma separated)");
  }
  sim->add_option("--gamma", run.gamma, "penalty parameter");
  for (auto* c : {sim, solve}) c->add_option("--grid", run.grid, "output grid intervals");
  solve->add_option("--ladder", run.ladder, "gamma ladder lo:hi:factor");
  solve->add_option("--tol", run.tol, "sup-norm Cauchy tolerance");
  orc->add_option("--step", run.h, "coarse step h");
  orc->add_option("--against", run.against, "trajectory CSV to compare with");

  auto* opt = app.add_subcommand("optimize", "direct transcription with gamma continuation");
  add_common(opt, common);
  int N = 16, starts = 8, steps = 16, threads = 0;
  std::uint64_t seed = 7;
  std::string opt_ladder = "1e2:1e4:10";
  double max_violation = 1e-4;
  opt->add_option("--N", N, "control intervals");
  opt->add_option("--starts", starts, "multistart count");
  opt->add_option("--seed", seed, "random seed");
  opt->add_option("--ladder", opt_ladder, "gamma ladder lo:hi:factor");
  opt->add_option("--steps", steps, "integrator steps per control interval");
  opt->add_option("--threads", threads, "worker threads (0: all cores)");
  opt->add_option("--max-violation", max_violation, "endpoint violation accepted as feasible");

  auto* pmp = app.add_subcommand("check-pmp", "verify a maximum-principle certificate");
  add_common(pmp, common);
  std::string pmp_traj, pmp_cert;
  CheckOptions copt;
  pmp->add_option("--trajectory", pmp_traj, "trajectory CSV")->required();
  pmp->add_option("--cert", pmp_cert, "certificate JSON")->required();
  pmp->add_option("--tol", copt.tol, "residual tolerance");
  pmp->add_option("--active-tol", copt.active_tol, "active-set tolerance");
  pmp->add_option("--nontriviality-tol", copt.nontriviality_tol, "non-triviality tolerance");
  pmp->add_option("--test-basis", copt.test_basis_size, "hat functions in the weak adjoint check");
  pmp->add_option("--control-grid", copt.control_grid_density, "grid points per control coordinate");

  auto* asmb = app.add_subcommand("assemble", "certificate from penalized adjoints on a ladder");
  add_common(asmb, common);
  std::string qT, vT, cert_out;
  double lambda = 1.0;
  asmb->add_option("--ladder", run.ladder, "gamma ladder lo:hi:factor");
  asmb->add_option("--grid", run.grid, "grid intervals");
  asmb->add_option("--u", run.u, "control");
  asmb->add_option("--x0", run.x0, "start x");
  asmb->add_option("--y0", run.y0, "start y");
  asmb->add_option("--qT", qT, "terminal q")->required();
  asmb->add_option("--vT", vT, "terminal v");
  asmb->add_option("--lambda", lambda, "cost multiplier before normalization");
  asmb->add_option("--cert", cert_out, "certificate JSON output");

  auto* ex = app.add_subcommand("export-example", "write the worked example's optimal arc and certificate");
  add_common(ex, common);
  int ex_grid = 1000;
  std::string ex_cert;
  ex->add_option("--grid", ex_grid, "grid intervals");
  ex->add_option("--cert", ex_cert, "certificate JSON output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  try {
    if (*cq) return cmd_check_cq(common, cq_traj, cq_samples);
    if (*sim) return cmd_simulate(common, run);
    if (*solve) return cmd_solve(common, run);
    if (*orc) return cmd_oracle(common, run);
    if (*opt) return cmd_optimize(common, N, starts, seed, opt_ladder, steps, threads, max_violation);
    if (*pmp) return cmd_check_pmp(common, pmp_traj, pmp_cert, copt);
    if (*asmb) return cmd_assemble(common, run, qT, vT, lambda, cert_out);
    if (*ex) return cmd_export_example(common, ex_grid, ex_cert);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
