#pragma once

#include <string>
#include <vector>

#include "sweep/oracle.hpp"

namespace sweep {

/// Problem file (YAML). Polynomials are term lists `[[coef, [e0, e1, ...]], ...]`
/// over the variables of their context:
///   generators, truncation.center_*   (t, x_1..x_n) and (t) respectively
///   f, g                              (t, x, y, u)
///   S, J                              (x(0), y(0), x(T), y(T))
///
///   name: my-problem
///   dims: {n: 2, l: 0, m: 1}
///   T: 2.0
///   generators: [<terms>, ...]
///   f: [<terms>, ...]            # n components
///   g: [<terms>, ...]            # l components
///   U: [{t: 0.0, lo: [-1], hi: [1]}, ...]
///   S: [{kind: eq|ineq, terms: <terms>}, ...]
///   J: {poly: <terms>, abs_terms: [{weight: 1.0, terms: <terms>}]}
///   truncation:                  # optional
///     center_x: [<terms in t>, ...] | "from-trajectory path.csv"
///     radius_x: 0.5
///     center_y: [<terms in t>, ...] | "from-trajectory path.csv"
///     radius_y: 0.6
///   audited_constants: {eta_bar: .., mu_bar: .., L_bar: .., M_h: .., L_psi: ..}  # optional
///   audit_path: {x: [<terms in t>, ...], y: [...]}   # optional
///   start: {x0: [..], y0: [..]}  # optional
///
/// Relative paths are resolved against the config file's directory.
SweepingProblem load_problem_file(const std::string& path);
SweepingProblem parse_problem(const std::string& yaml_text, const std::string& base_dir = ".");

/// Samples used to audit the constants and CQ of a problem: the truncation
/// reference pair when present, otherwise the config's audit path, otherwise
/// the default start held constant.
std::vector<PathSample> audit_path_samples(const SweepingProblem& p, int count);

}  // namespace sweep
