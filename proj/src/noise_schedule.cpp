#include "metadiffub/noise_schedule.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "metadiffub/errors.hpp"

namespace metadiffub {

BaseSchedule build_sqrt_schedule(std::size_t T, double s) {
  if (T < 1) throw ParameterError("schedule needs at least one step");
  if (!(s > 0.0 && s <= 0.01)) throw ParameterError("sqrt schedule offset must lie in (0, 0.01]");
  BaseSchedule base;
  base.T = T;
  base.alpha_bar.resize(T + 1);
  base.beta.assign(T + 1, 0.0);
  for (std::size_t t = 0; t <= T; ++t) {
    const double raw = 1.0 - std::sqrt(static_cast<double>(t) / static_cast<double>(T) + s);
    base.alpha_bar[t] = std::clamp(raw, kAlphaBarClamp, 1.0 - kAlphaBarClamp);
  }
  for (std::size_t t = 1; t <= T; ++t) {
    base.beta[t] = 1.0 - base.alpha_bar[t] / base.alpha_bar[t - 1];
  }
  return base;
}

std::size_t MetaInstructions::count_true() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), true));
}

MetaInstructions MetaInstructions::all(std::size_t T, bool value) {
  return MetaInstructions{std::vector<bool>(T, value)};
}

ScheduledNoise apply_skipping(const MetaInstructions& instructions, const BaseSchedule& base) {
  const std::size_t T = base.T;
  if (instructions.size() != T) {
    throw ContractError("instruction length " + std::to_string(instructions.size()) +
                        " does not match schedule length " + std::to_string(T));
  }
  ScheduledNoise out;
  out.pointer.assign(T + 1, 0);
  out.alpha_bar_x.assign(T + 1, 0.0);
  out.beta_pointer.assign(T + 1, 0.0);
  out.beta_eff.assign(T + 1, 0.0);
  out.alpha_bar_x[0] = base.alpha_bar[0];
  std::size_t advanced = 0;
  for (std::size_t t = 1; t <= T; ++t) {
    if (instructions.bits[t - 1]) ++advanced;
    const std::size_t p = std::max<std::size_t>(advanced, 1);
    out.pointer[t] = p;
    out.beta_pointer[t] = base.beta[p];
    out.alpha_bar_x[t] = base.alpha_bar[p];
    // Exact zero on a held pointer; the ratio form is only used when it moved.
    out.beta_eff[t] =
        p == out.pointer[t - 1] ? 0.0 : 1.0 - out.alpha_bar_x[t] / out.alpha_bar_x[t - 1];
  }
  return out;
}

StepNoise effective_noise_at(const ScheduledNoise& schedule, std::size_t t) {
  if (t < 1 || t > schedule.T()) {
    throw IndexError("diffusion step " + std::to_string(t) + " outside 1.." +
                     std::to_string(schedule.T()));
  }
  return StepNoise{schedule.alpha_bar_x[t], schedule.beta_eff[t]};
}

void write_schedule_csv(std::ostream& out, const ScheduledNoise& schedule) {
  out << "t,pointer,beta_pointer,alpha_bar_x,beta_eff\n";
  out << std::setprecision(17);
  for (std::size_t t = 1; t <= schedule.T(); ++t) {
    out << t << ',' << schedule.pointer[t] << ',' << schedule.beta_pointer[t] << ','
        << schedule.alpha_bar_x[t] << ',' << schedule.beta_eff[t] << '\n';
  }
}

}  // namespace metadiffub
