#pragma once

#include <functional>
#include <vector>

#include "metadiffub/params.hpp"
#include "metadiffub/tape.hpp"

namespace metadiffub {

/// Scalar objective recorded on `tape` from parameter leaves (ParamSet order).
using TapeObjective = std::function<Var(Tape& tape, const std::vector<Var>& params)>;

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_element = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares backward() against central differences for every parameter
/// element. Relative error per element is |a-b| / max(|a|, |b|, 1e-8).
/// Throws OracleInvalidError when two evaluations at the same point differ,
/// ParameterError when eps is outside (0, 1e-2].
GradCheckResult finite_diff_check(const TapeObjective& f, const ParamSet& params, double eps);

}  // namespace metadiffub
