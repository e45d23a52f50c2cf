#pragma once

#include <stdexcept>
#include <string>

namespace sweep {

// Exit-code classes used by the command-line tool: input errors map to 2,
// numerical failures to 3. Verification failures are reported, not thrown.

struct InputError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A query point lies outside the constraint set beyond tolerance.
struct InfeasiblePoint : InputError {
  InfeasiblePoint(const std::string& what, int index) : InputError(what), index(index) {}
  int index;
};

}  // namespace sweep
