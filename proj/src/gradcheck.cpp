#include "metadiffub/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "metadiffub/errors.hpp"

namespace metadiffub {

namespace {

double evaluate(const TapeObjective& f, const ParamSet& params) {
  Tape tape;
  auto leaves = bind_params(tape, params);
  return f(tape, leaves).value().item();
}

}  // namespace

GradCheckResult finite_diff_check(const TapeObjective& f, const ParamSet& params, double eps) {
  if (!(eps > 0.0 && eps <= 1e-2)) throw ParameterError("finite_diff_check: eps must lie in (0, 1e-2]");

  Tape tape;
  auto leaves = bind_params(tape, params);
  Var loss = f(tape, leaves);
  const double base = loss.value().item();
  if (evaluate(f, params) != base) {
    throw OracleInvalidError("finite_diff_check: objective is not deterministic");
  }
  const ParamSet analytic = collect_gradients(tape.backward(loss), leaves, params);

  GradCheckResult result;
  ParamSet probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto values = probe[i].data();
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double original = values[j];
      values[j] = original + eps;
      const double plus = evaluate(f, probe);
      values[j] = original - eps;
      const double minus = evaluate(f, probe);
      values[j] = original;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[i][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (rel > result.max_relative_error) {
        result = GradCheckResult{rel, i, j, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace metadiffub
