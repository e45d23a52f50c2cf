#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sweep/pmp.hpp"
#include "sweep/problem.hpp"

namespace sweep {

/// Builds a polynomial from (coefficient, exponent vector) pairs.
PolyExpr poly(int nvars, std::vector<std::pair<double, std::vector<int>>> terms);

std::vector<std::string> registry_names();
/// Built-in problem with audited constants filled in.
SweepingProblem registry_problem(const std::string& name);
/// Known state (x, y) of the sweeping solution from the default start with
/// zero control, when available in closed form.
std::optional<std::function<Vec(double)>> registry_exact_state(const std::string& name);

/// Closed-form optimal arc of the worked example on a uniform grid of the
/// given number of intervals (u = 0, xi = 1/4 on both generators).
Trajectory worked_example_trajectory(int intervals);
/// Its analytic multiplier certificate on the same grid.
PmpCertificate worked_example_certificate(int intervals);

}  // namespace sweep
