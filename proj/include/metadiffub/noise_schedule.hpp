#pragma once

#include <cstddef>
#include <ostream>
#include <vector>

namespace metadiffub {

/// Fixed base schedule. alpha_bar is indexed 0..T; beta is indexed 1..T with
/// beta[0] unused (kept at 0) so that indices match diffusion steps.
struct BaseSchedule {
  std::size_t T = 0;
  std::vector<double> alpha_bar;
  std::vector<double> beta;
};

inline constexpr double kSqrtScheduleOffset = 1e-4;
inline constexpr double kAlphaBarClamp = 1e-5;

/// alpha_bar_t = clamp(1 - sqrt(t/T + s), 1e-5, 1 - 1e-5);
/// beta_t = 1 - alpha_bar_t / alpha_bar_{t-1}.
BaseSchedule build_sqrt_schedule(std::size_t T, double s = kSqrtScheduleOffset);

/// One boolean per diffusion step (bits[0] is step 1).
struct MetaInstructions {
  std::vector<bool> bits;

  std::size_t size() const { return bits.size(); }
  std::size_t count_true() const;
  static MetaInstructions all(std::size_t T, bool value);
  bool operator==(const MetaInstructions& other) const = default;
};

/// Per-sentence schedule induced by skipping. All vectors are indexed 0..T;
/// beta_pointer[0] and beta_eff[0] are unused.
struct ScheduledNoise {
  std::vector<std::size_t> pointer;
  std::vector<double> alpha_bar_x;
  std::vector<double> beta_pointer;  // literal skipped beta values
  std::vector<double> beta_eff;      // 1 - alpha_bar_x_t / alpha_bar_x_{t-1}

  std::size_t T() const { return pointer.empty() ? 0 : pointer.size() - 1; }
};

/// Skipping transform: the pointer into the base schedule advances on True
/// and holds on False. pointer_t = max(number of True in 1..t, 1), so a
/// leading False still consumes beta_1.
ScheduledNoise apply_skipping(const MetaInstructions& instructions, const BaseSchedule& base);

struct StepNoise {
  double alpha_bar_x = 0.0;
  double beta_eff = 0.0;
};

StepNoise effective_noise_at(const ScheduledNoise& schedule, std::size_t t);

/// CSV with header `t,pointer,beta_pointer,alpha_bar_x,beta_eff`, rows t = 1..T.
void write_schedule_csv(std::ostream& out, const ScheduledNoise& schedule);

}  // namespace metadiffub
