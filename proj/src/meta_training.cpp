#include "metadiffub/meta_training.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <thread>

#include <json.hpp>

#include "metadiffub/checkpoint.hpp"
#include "metadiffub/errors.hpp"
#include "metadiffub/metrics.hpp"

namespace metadiffub {

void TrainConfig::validate() const {
  if (E == 0) throw ConfigError("train.E must be positive");
  if (total_batch == 0 || total_batch % E != 0) throw ConfigError("train.E must divide train.total_batch");
  if (!(exploiter_lr >= 0.0) || !(scheduler_lr >= 0.0)) throw ConfigError("learning rates must be nonnegative");
  if (threads == 0) throw ConfigError("threads must be positive");
}

MetaRewardRecord make_reward(double r_before, double r_after) {
  return MetaRewardRecord{r_before, r_after, r_after - r_before};
}

namespace {

std::vector<TokenList> sources_of(const std::vector<SentencePair>& pairs) {
  std::vector<TokenList> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.src);
  return out;
}

std::vector<TokenList> targets_of(const std::vector<SentencePair>& pairs) {
  std::vector<TokenList> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.tgt);
  return out;
}

std::vector<ScheduledNoise> skip_all(const std::vector<InstructionSample>& samples,
                                     const BaseSchedule& base) {
  std::vector<ScheduledNoise> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(apply_skipping(s.instructions, base));
  return out;
}

std::vector<SentencePair> draw_minibatch(const std::vector<SentencePair>& data, std::size_t size,
                                         RngStream& rng) {
  std::vector<SentencePair> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) out.push_back(data[rng.below(data.size())]);
  return out;
}

// Runs job(i) for i in [0, n) on up to `threads` workers.
template <class Job>
void run_parallel(std::size_t n, std::size_t threads, Job job) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(threads, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

ExplorationResult exploration_epoch(const Exploiter& theta, const AdamState& adam,
                                    const Scheduler& psi, const std::vector<SentencePair>& minibatch,
                                    const BaseSchedule& base, RngStream rng,
                                    const ProbeConfig& probe) {
  if (minibatch.empty()) throw ContractError("exploration minibatch is empty");
  const auto sources = sources_of(minibatch);
  RngStream sample_rng = rng.fork(1);
  ExplorationResult result;
  result.samples = sample_instructions(psi, sources, sample_rng, SampleMode::stochastic);
  const auto schedules = skip_all(result.samples, base);

  const EncodedBatch batch = encode_batch(minibatch, theta.vocab, theta.config.max_len);
  RngStream loss_rng = rng.fork(2);
  const LossResult loss = diffusion_loss(theta, batch, schedules, loss_rng);
  AdamState probe_state = adam;
  Exploiter theta_e{theta.config, theta.vocab,
                    adam_step(theta.params, loss.gradients, probe_state, probe.adam)};

  const GenerateOptions gen{probe.reward_steps, {}};
  RngStream gen_before = rng.fork(3), gen_after = rng.fork(3);
  const auto refs = targets_of(minibatch);
  const double before = corpus_bleu(generate(theta, sources, schedules, gen_before, gen), refs);
  const double after = corpus_bleu(generate(theta_e, sources, schedules, gen_after, gen), refs);
  result.reward = make_reward(before, after);

  result.score = policy_gradient(psi, sources, result.samples, std::vector<double>(sources.size(), 1.0));
  result.gradient = result.score.zeros_like();
  result.gradient.axpy(result.reward.r_meta, result.score);
  return result;
}

RoundResult scheduler_round(const Exploiter& theta, const AdamState& adam, const Scheduler& psi,
                            const std::vector<std::vector<SentencePair>>& minibatches,
                            const BaseSchedule& base, const RngStream& rng,
                            const RoundConfig& config) {
  const std::size_t E = minibatches.size();
  if (E == 0) throw ContractError("a scheduler round needs at least one exploration epoch");
  std::vector<ExplorationResult> epochs(E);
  run_parallel(E, config.threads, [&](std::size_t e) {
    epochs[e] = exploration_epoch(theta, adam, psi, minibatches[e], base, rng.fork(e), config.probe);
  });

  double baseline = 0.0;
  if (config.reward_baseline && E >= 2) {
    for (const auto& ep : epochs) baseline += ep.reward.r_meta;
    baseline /= static_cast<double>(E);
  }
  RoundResult result{psi, psi.params.zeros_like(), {}};
  for (const auto& ep : epochs) {
    result.gradient.axpy(ep.reward.r_meta - baseline, ep.score);
    result.rewards.push_back(ep.reward);
  }
  result.scheduler.params = apply_update(psi.params, result.gradient, config.lr);
  return result;
}

EvalRecord evaluate_model(const Exploiter& model, const Scheduler* scheduler,
                          const std::vector<SentencePair>& data, const BaseSchedule& base,
                          RngStream rng, std::size_t steps, std::vector<TokenList>* outputs) {
  if (data.empty()) throw ContractError("evaluation set is empty");
  const auto sources = sources_of(data);
  std::vector<ScheduledNoise> schedules;
  if (scheduler) {
    schedules = greedy_schedules(*scheduler, sources, base);
  } else {
    schedules.assign(sources.size(), apply_skipping(MetaInstructions::all(base.T, true), base));
  }
  auto hyps = generate(model, sources, schedules, rng, GenerateOptions{steps, {}});
  const auto refs = targets_of(data);
  EvalRecord rec;
  rec.bleu = corpus_bleu(hyps, refs);
  const MetricReport report = evaluate_corpus(hyps, refs);
  rec.rouge_l = report.values.at("rouge_l");
  rec.dist_1 = report.values.at("dist_1");
  if (auto it = report.values.find("self_bleu"); it != report.values.end()) rec.self_bleu = it->second;
  if (outputs) *outputs = std::move(hyps);
  return rec;
}

MetaTrainResult meta_train(const MetaTrainSetup& setup) {
  const TrainConfig& tc = setup.train;
  tc.validate();
  if (setup.train_data.empty()) throw ContractError("training dataset is empty");

  Vocab vocab;
  if (setup.vocab) {
    vocab = *setup.vocab;
  } else {
    std::vector<TokenList> corpus;
    for (const auto& p : setup.train_data) {
      corpus.push_back(p.src);
      corpus.push_back(p.tgt);
    }
    vocab = build_vocab(corpus, 1);
  }

  const RngStream root(setup.seed);
  RngStream init_rng = root.fork(0);
  RngStream exploiter_init = init_rng.fork(0), scheduler_init = init_rng.fork(1);
  MetaTrainResult result{init_exploiter(setup.exploiter, vocab, exploiter_init), {}, {}, {}, {}, 0};
  Exploiter& theta = result.exploiter;
  if (setup.initial_scheduler) {
    result.scheduler = *setup.initial_scheduler;
  } else {
    SchedulerConfig sc = setup.scheduler;
    sc.T = theta.config.T;
    result.scheduler = init_scheduler(sc, vocab, scheduler_init);
  }
  Scheduler& psi = result.scheduler;
  if (psi.config.T != theta.config.T) throw ConfigError("scheduler T does not match exploiter T");
  const BaseSchedule base = build_sqrt_schedule(theta.config.T, theta.config.schedule_s);
  const ScheduledNoise fixed = apply_skipping(MetaInstructions::all(base.T, true), base);

  AdamConfig adam_cfg;
  adam_cfg.lr = tc.exploiter_lr;
  AdamState adam = make_adam_state(theta.params);
  RoundConfig round_cfg;
  round_cfg.probe.adam = adam_cfg;
  round_cfg.probe.reward_steps = tc.reward_steps;
  round_cfg.lr = tc.scheduler_lr;
  round_cfg.reward_baseline = tc.reward_baseline;
  round_cfg.threads = tc.threads;

  std::ofstream log;
  const auto emit = [&](const nlohmann::json& event) {
    if (log.is_open()) log << event.dump() << '\n';
  };
  const auto save = [&](std::size_t step) {
    if (!setup.run_dir) return;
    const auto dir = *setup.run_dir / "checkpoints";
    save_exploiter(dir / ("exploiter-" + std::to_string(step) + ".bin"), theta, setup.dataset_tag);
    save_scheduler(dir / ("scheduler-" + std::to_string(step) + ".bin"), psi, setup.dataset_tag);
  };
  if (setup.run_dir) {
    std::filesystem::create_directories(*setup.run_dir / "checkpoints");
    std::ofstream(*setup.run_dir / "config.resolved") << setup.resolved_config;
    log.open(*setup.run_dir / "log.jsonl");
  }

  const Scheduler* eval_scheduler = tc.fixed_sqrt ? nullptr : &psi;
  const RngStream eval_rng = root.fork(2);
  double best_bleu = -1.0;
  std::size_t stale = 0;
  const auto evaluate = [&](std::size_t step) {
    if (setup.valid_data.empty()) return false;
    EvalRecord rec = evaluate_model(theta, eval_scheduler, setup.valid_data, base, eval_rng, tc.eval_steps);
    rec.step = step;
    result.evals.push_back(rec);
    emit({{"event", "eval"}, {"epoch", step}, {"bleu", rec.bleu}, {"self_bleu", rec.self_bleu},
          {"rouge_l", rec.rouge_l}, {"dist_1", rec.dist_1}});
    if (rec.bleu > best_bleu) {
      best_bleu = rec.bleu;
      stale = 0;
    } else {
      ++stale;
    }
    return tc.early_stop > 0 && stale >= tc.early_stop;
  };

  emit({{"event", "init"}, {"epoch", 0}, {"exploiter_params", theta.params.element_count()},
        {"scheduler_params", psi.params.element_count()}, {"vocab_size", vocab.size()},
        {"T", theta.config.T}, {"fixed_sqrt", tc.fixed_sqrt}});
  save(0);
  if (tc.epochs == 0) return result;
  evaluate(0);

  const RngStream step_root = root.fork(1);
  for (std::size_t step = 0; step < tc.epochs; ++step) {
    const RngStream step_rng = step_root.fork(step);
    if (!tc.fixed_sqrt && tc.period > 0 && step % tc.period == 0) {
      RngStream pick = step_rng.fork(0);
      std::vector<std::vector<SentencePair>> minibatches;
      for (std::size_t e = 0; e < tc.E; ++e) {
        minibatches.push_back(draw_minibatch(setup.train_data, tc.exploration_batch(), pick));
      }
      const std::uint64_t before = theta.params.checksum();
      RoundResult round = scheduler_round(theta, adam, psi, minibatches, base, step_rng.fork(1), round_cfg);
      if (theta.params.checksum() != before) throw ContractError("scheduler round mutated the exploiter");
      psi = std::move(round.scheduler);
      for (std::size_t e = 0; e < round.rewards.size(); ++e) {
        const auto& r = round.rewards[e];
        emit({{"event", "exploration"}, {"epoch", step}, {"exploration", e},
              {"r_before", r.r_before}, {"r_after", r.r_after}, {"r_meta", r.r_meta}});
        result.rewards.push_back(r);
      }
    }

    RngStream pick = step_rng.fork(2);
    const auto minibatch = draw_minibatch(setup.train_data, tc.total_batch, pick);
    std::vector<ScheduledNoise> schedules;
    if (tc.fixed_sqrt) {
      schedules.assign(minibatch.size(), fixed);
    } else {
      RngStream sample_rng = step_rng.fork(3);
      schedules = skip_all(sample_instructions(psi, sources_of(minibatch), sample_rng, SampleMode::stochastic), base);
    }
    const EncodedBatch batch = encode_batch(minibatch, vocab, theta.config.max_len);
    RngStream loss_rng = step_rng.fork(4);
    const LossResult loss = diffusion_loss(theta, batch, schedules, loss_rng);
    theta.params = adam_step(theta.params, loss.gradients, adam, adam_cfg);
    result.losses.push_back(loss.loss);
    result.steps_run = step + 1;
    emit({{"event", "train"}, {"epoch", step + 1}, {"loss", loss.loss}});

    if (!theta.params.all_finite()) throw Error("exploiter weights diverged at step " + std::to_string(step + 1));
    if (tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 && step + 1 < tc.epochs) {
      save(step + 1);
    }
    if (tc.eval_every > 0 && (step + 1) % tc.eval_every == 0 && step + 1 < tc.epochs) {
      if (evaluate(step + 1)) break;
    }
  }
  if (result.evals.empty() || result.evals.back().step != result.steps_run) evaluate(result.steps_run);
  save(result.steps_run);
  return result;
}

}  // namespace metadiffub
