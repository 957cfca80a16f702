#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "metadiffub/exploiter.hpp"
#include "metadiffub/noise_schedule.hpp"
#include "metadiffub/params.hpp"
#include "metadiffub/scheduler.hpp"
#include "metadiffub/text_data.hpp"

namespace metadiffub {

struct TrainConfig {
  std::size_t E = 4;                 // exploration epochs per scheduler round
  std::size_t total_batch = 32;      // exploiter batch; split into E exploration minibatches
  std::size_t period = 10;           // exploiter steps between scheduler rounds; 0 never updates
  std::size_t epochs = 2000;         // exploiter optimizer steps
  double exploiter_lr = 1e-3;
  double scheduler_lr = 1.0;
  bool reward_baseline = true;       // subtract the round's mean Meta-Reward when E >= 2
  std::size_t reward_steps = 16;     // generation steps for Meta-Reward probes; 0 = all T
  std::size_t eval_every = 0;        // 0: evaluate only at start and end
  std::size_t eval_steps = 0;        // generation steps for held-out evaluation; 0 = all T
  std::size_t early_stop = 0;        // evaluations without improvement before stopping; 0 disables
  std::size_t checkpoint_every = 0;  // 0: checkpoints at start and end only
  std::size_t threads = 1;
  bool fixed_sqrt = false;           // all-True schedule, no scheduler rounds

  void validate() const;
  std::size_t exploration_batch() const { return total_batch / E; }
};

struct MetaRewardRecord {
  double r_before = 0.0;
  double r_after = 0.0;
  double r_meta = 0.0;
};

MetaRewardRecord make_reward(double r_before, double r_after);

struct ExplorationResult {
  ParamSet gradient;  // grad of r_meta * log p(samples)
  ParamSet score;     // grad of log p(samples)
  MetaRewardRecord reward;
  std::vector<InstructionSample> samples;
};

struct ProbeConfig {
  AdamConfig adam;
  std::size_t reward_steps = 16;
};

/// One frozen-exploiter probe: sample schedules, take one update on a copy
/// of theta, score both exploiters by corpus BLEU on the minibatch.
ExplorationResult exploration_epoch(const Exploiter& theta, const AdamState& adam,
                                    const Scheduler& psi, const std::vector<SentencePair>& minibatch,
                                    const BaseSchedule& base, RngStream rng,
                                    const ProbeConfig& probe);

struct RoundConfig {
  ProbeConfig probe;
  double lr = 1.0;
  bool reward_baseline = true;
  std::size_t threads = 1;
};

struct RoundResult {
  Scheduler scheduler;
  ParamSet gradient;  // summed ascent direction
  std::vector<MetaRewardRecord> rewards;
};

/// E exploration epochs (epoch e uses rng.fork(e)); their gradients are summed
/// in epoch order and applied as one ascent step. theta is never modified.
RoundResult scheduler_round(const Exploiter& theta, const AdamState& adam, const Scheduler& psi,
                            const std::vector<std::vector<SentencePair>>& minibatches,
                            const BaseSchedule& base, const RngStream& rng,
                            const RoundConfig& config);

struct EvalRecord {
  std::size_t step = 0;
  double bleu = 0.0;  // corpus BLEU
  double self_bleu = 0.0;
  double rouge_l = 0.0;
  double dist_1 = 0.0;
};

/// Held-out generation under greedy schedules (all-True when `scheduler` is
/// empty), scored against the references.
EvalRecord evaluate_model(const Exploiter& model, const Scheduler* scheduler,
                          const std::vector<SentencePair>& data, const BaseSchedule& base,
                          RngStream rng, std::size_t steps, std::vector<TokenList>* outputs = nullptr);

struct MetaTrainSetup {
  ExploiterConfig exploiter;
  SchedulerConfig scheduler;
  TrainConfig train;
  std::vector<SentencePair> train_data;
  std::vector<SentencePair> valid_data;
  std::optional<Vocab> vocab;              // built from the training data when empty
  std::optional<Scheduler> initial_scheduler;
  std::uint64_t seed = 0;
  std::string dataset_tag;
  std::optional<std::filesystem::path> run_dir;
  std::string resolved_config;             // written verbatim to config.resolved
};

struct MetaTrainResult {
  Exploiter exploiter;
  Scheduler scheduler;
  std::vector<EvalRecord> evals;
  std::vector<double> losses;  // one per exploiter step
  std::vector<MetaRewardRecord> rewards;
  std::size_t steps_run = 0;
};

MetaTrainResult meta_train(const MetaTrainSetup& setup);

}  // namespace metadiffub
