#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ctxdepth/tape.hpp"

namespace ctxdepth {

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

/// Builds the function under test on a fresh tape from leaf variables.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Compares tape gradients with central differences for every input
/// coordinate. Non-scalar outputs are reduced with a fixed random projection.
/// The error is ||analytic - numeric||_inf / ||numeric||_inf.
GradCheckResult check_gradients(const std::string& name, const std::vector<Tensor>& inputs, const GraphFn& fn,
                                double tolerance, double step = kFiniteDifferenceStep);

/// Same comparison for parameters: `loss` rebuilds the scalar on a new tape
/// and is called with the parameter values perturbed in place.
GradCheckResult check_parameter_gradients(const std::string& name, const std::vector<Parameter*>& params,
                                          const std::function<Var(Tape&)>& loss, double tolerance,
                                          double step = kFiniteDifferenceStep);

struct GradCheck {
  std::string name;
  double tolerance;
  std::function<GradCheckResult()> run;
};

/// Every registered finite-difference check, one per differentiable op,
/// loss, module and the end-to-end network.
const std::vector<GradCheck>& gradcheck_registry();

/// Runs one named check or "all". Throws ParameterError for unknown names.
std::vector<GradCheckResult> run_gradchecks(const std::string& scope);

/// Fixed-width pass/fail table.
std::string format_gradcheck_table(const std::vector<GradCheckResult>& results);

}  // namespace ctxdepth
