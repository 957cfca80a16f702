#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "metadiffub/errors.hpp"
#include "metadiffub/noise_schedule.hpp"
#include "metadiffub/rng.hpp"

using namespace metadiffub;

namespace {

// Synthetic base with beta = {1, 2, 3}; alpha_bar is only used for lookups.
BaseSchedule toy_base() {
  BaseSchedule b;
  b.T = 3;
  b.alpha_bar = {1.0, 0.9, 0.6, 0.3};
  b.beta = {0.0, 1.0, 2.0, 3.0};
  return b;
}

MetaInstructions bits(std::initializer_list<bool> v) { return MetaInstructions{std::vector<bool>(v)}; }

MetaInstructions random_bits(std::size_t T, RngStream& rng) {
  MetaInstructions m;
  for (std::size_t t = 0; t < T; ++t) m.bits.push_back(rng.bernoulli(0.5));
  return m;
}

}  // namespace

TEST(SqrtSchedule, EndpointsByFormula) {
  const BaseSchedule b = build_sqrt_schedule(64, 1e-4);
  EXPECT_NEAR(b.alpha_bar[0], 0.99, 1e-15);
  EXPECT_DOUBLE_EQ(b.alpha_bar[64], 1e-5);
  EXPECT_EQ(b.alpha_bar.size(), 65u);
  EXPECT_NEAR(b.alpha_bar[16], 1.0 - std::sqrt(0.25 + 1e-4), 1e-15);
}

TEST(SqrtSchedule, StrictlyDecreasingAndBetaConsistent) {
  for (std::size_t T : {1u, 8u, 64u, 2000u}) {
    const BaseSchedule b = build_sqrt_schedule(T);
    for (std::size_t t = 1; t <= T; ++t) {
      ASSERT_LT(b.alpha_bar[t], b.alpha_bar[t - 1]) << "T=" << T << " t=" << t;
      ASSERT_DOUBLE_EQ(b.beta[t], 1.0 - b.alpha_bar[t] / b.alpha_bar[t - 1]);
      ASSERT_GT(b.beta[t], 0.0);
      ASSERT_LT(b.beta[t], 1.0);
    }
  }
}

TEST(SqrtSchedule, RejectsBadArguments) {
  EXPECT_THROW(build_sqrt_schedule(0), ParameterError);
  EXPECT_THROW(build_sqrt_schedule(8, 0.0), ParameterError);
  EXPECT_THROW(build_sqrt_schedule(8, 0.5), ParameterError);
}

TEST(Skipping, WorkedExample) {
  const ScheduledNoise s = apply_skipping(bits({true, false, true}), toy_base());
  EXPECT_EQ(s.beta_pointer[1], 1.0);
  EXPECT_EQ(s.beta_pointer[2], 1.0);
  EXPECT_EQ(s.beta_pointer[3], 2.0);
  EXPECT_EQ(s.pointer, (std::vector<std::size_t>{0, 1, 1, 2}));
}

TEST(Skipping, AllTrueIsIdentity) {
  const BaseSchedule b = build_sqrt_schedule(16);
  const ScheduledNoise s = apply_skipping(MetaInstructions::all(16, true), b);
  for (std::size_t t = 1; t <= 16; ++t) {
    EXPECT_EQ(s.beta_pointer[t], b.beta[t]);
    EXPECT_EQ(s.beta_eff[t], b.beta[t]);
    EXPECT_EQ(s.alpha_bar_x[t], b.alpha_bar[t]);
  }
}

TEST(Skipping, AllFalseHoldsFirstStep) {
  const BaseSchedule b = build_sqrt_schedule(16);
  const ScheduledNoise s = apply_skipping(MetaInstructions::all(16, false), b);
  EXPECT_EQ(s.beta_eff[1], b.beta[1]);
  for (std::size_t t = 1; t <= 16; ++t) {
    EXPECT_EQ(s.beta_pointer[t], b.beta[1]);
    EXPECT_EQ(s.alpha_bar_x[t], b.alpha_bar[1]);
    if (t > 1) EXPECT_EQ(s.beta_eff[t], 0.0);
  }
}

TEST(Skipping, PointerTrace) {
  const BaseSchedule b = build_sqrt_schedule(4);
  const ScheduledNoise s = apply_skipping(bits({true, true, false, true}), b);
  const std::vector<double> expect = {b.alpha_bar[0], b.alpha_bar[1], b.alpha_bar[2], b.alpha_bar[2], b.alpha_bar[3]};
  EXPECT_EQ(s.alpha_bar_x, expect);
}

TEST(Skipping, LengthMismatchThrows) {
  EXPECT_THROW(apply_skipping(bits({true, true}), toy_base()), ContractError);
}

TEST(Skipping, RandomInvariants) {
  RngStream rng(31);
  const BaseSchedule b = build_sqrt_schedule(32);
  for (int trial = 0; trial < 200; ++trial) {
    const MetaInstructions m = random_bits(32, rng);
    const ScheduledNoise s = apply_skipping(m, b);
    ASSERT_EQ(s.T(), 32u);
    const std::size_t count = m.count_true();
    EXPECT_EQ(s.pointer[32], std::clamp<std::size_t>(count, 1, 32));
    EXPECT_EQ(s.alpha_bar_x[32], b.alpha_bar[s.pointer[32]]);
    bool seen_true = false;
    for (std::size_t t = 1; t <= 32; ++t) {
      const std::size_t step = s.pointer[t] - s.pointer[t - 1];
      EXPECT_TRUE(step == 0 || step == 1);
      EXPECT_EQ(s.alpha_bar_x[t], b.alpha_bar[s.pointer[t]]);
      EXPECT_LE(s.alpha_bar_x[t], s.alpha_bar_x[t - 1]);
      if (seen_true && !m.bits[t - 1]) EXPECT_EQ(s.beta_eff[t], 0.0);
      if (s.pointer[t] != s.pointer[t - 1]) {
        EXPECT_DOUBLE_EQ(s.beta_eff[t], 1.0 - s.alpha_bar_x[t] / s.alpha_bar_x[t - 1]);
      }
      seen_true = seen_true || m.bits[t - 1];
    }
  }
}

TEST(Skipping, MonotoneInFlips) {
  RngStream rng(77);
  const BaseSchedule b = build_sqrt_schedule(24);
  for (int trial = 0; trial < 100; ++trial) {
    MetaInstructions m = random_bits(24, rng);
    const std::size_t flip = rng.below(24);
    if (m.bits[flip]) continue;
    const ScheduledNoise before = apply_skipping(m, b);
    m.bits[flip] = true;
    const ScheduledNoise after = apply_skipping(m, b);
    for (std::size_t t = 0; t <= 24; ++t) EXPECT_LE(after.alpha_bar_x[t], before.alpha_bar_x[t]);
  }
}

TEST(EffectiveNoise, Lookup) {
  const BaseSchedule b = build_sqrt_schedule(4);
  const ScheduledNoise s = apply_skipping(bits({true, true, false, true}), b);
  EXPECT_EQ(effective_noise_at(s, 3).beta_eff, 0.0);
  EXPECT_EQ(effective_noise_at(s, 3).alpha_bar_x, b.alpha_bar[2]);
  const ScheduledNoise all = apply_skipping(MetaInstructions::all(4, true), b);
  for (std::size_t t = 1; t <= 4; ++t) EXPECT_EQ(effective_noise_at(all, t).beta_eff, b.beta[t]);
  EXPECT_THROW(effective_noise_at(s, 0), IndexError);
  EXPECT_THROW(effective_noise_at(s, 5), IndexError);
}

TEST(ScheduleCsv, HeaderAndRows) {
  const ScheduledNoise s = apply_skipping(bits({true, false, true}), toy_base());
  std::ostringstream out;
  write_schedule_csv(out, s);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "t,pointer,beta_pointer,alpha_bar_x,beta_eff");
  std::getline(in, line);
  EXPECT_EQ(line.substr(0, 6), "1,1,1,");
  int rows = 1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 3);
}
