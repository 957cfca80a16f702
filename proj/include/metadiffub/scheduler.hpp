#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "metadiffub/noise_schedule.hpp"
#include "metadiffub/params.hpp"
#include "metadiffub/rng.hpp"
#include "metadiffub/text_data.hpp"

namespace metadiffub {

struct SchedulerConfig {
  std::size_t vocab_size = 0;
  std::size_t dim = 64;         // token and instruction embedding width
  std::size_t hidden = 64;
  std::size_t enc_max_len = 128;
  std::size_t T = 64;           // decoder length
  double init_bias = 0.0;       // initial logit bias of the instruction head

  void validate() const;
};

/// The recurrent Bernoulli policy B_psi with its own vocabulary.
struct Scheduler {
  SchedulerConfig config;
  Vocab vocab;
  ParamSet params;
};

Scheduler init_scheduler(const SchedulerConfig& config, const Vocab& vocab, RngStream& rng);

/// A policy that emits `value` at every step with probability 1.
Scheduler constant_scheduler(const SchedulerConfig& config, const Vocab& vocab, bool value);

enum class SampleMode { stochastic, greedy };

struct InstructionSample {
  MetaInstructions instructions;
  std::vector<double> per_step_probs;  // p(iota_t = True), t = 1..T
  double log_prob = 0.0;               // log-probability of the realized bits
  std::uint64_t params_checksum = 0;   // snapshot that produced the sample
};

struct EncoderState {
  NDArray h;  // B x hidden
  NDArray c;
};

/// Final LSTM state after reading each source; tokens map through the
/// scheduler vocabulary with UNK fallback.
EncoderState encode_condition(const Scheduler& scheduler, const std::vector<TokenList>& sources);

/// One sample per source. Stochastic mode draws row b from rng.fork(b);
/// greedy mode takes p_t >= 0.5 and never touches the rng.
std::vector<InstructionSample> sample_instructions(const Scheduler& scheduler,
                                                   const std::vector<TokenList>& sources,
                                                   RngStream& rng, SampleMode mode);

InstructionSample sample_instructions(const Scheduler& scheduler, const TokenList& source,
                                      RngStream& rng, SampleMode mode);

/// Greedy schedules mapped through the skipping transform.
std::vector<ScheduledNoise> greedy_schedules(const Scheduler& scheduler,
                                             const std::vector<TokenList>& sources,
                                             const BaseSchedule& base);

/// grad_psi sum_b rewards[b] * log p(sample_b | source_b), recomputed by
/// teacher forcing. Throws ContractError when a sample came from another
/// parameter snapshot or its recorded log-probability does not reproduce.
ParamSet policy_gradient(const Scheduler& scheduler, const std::vector<TokenList>& sources,
                         const std::vector<InstructionSample>& samples,
                         const std::vector<double>& rewards);

/// Gradient ascent: psi + lr * grad.
ParamSet apply_update(const ParamSet& params, const ParamSet& gradient, double lr);

}  // namespace metadiffub
