#include "metadiffub/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "metadiffub/errors.hpp"
#include "metadiffub/tape.hpp"

namespace metadiffub {

void SchedulerConfig::validate() const {
  if (vocab_size < Vocab::kReserved) throw ConfigError("scheduler vocabulary smaller than the reserved ids");
  if (dim == 0 || hidden == 0) throw ConfigError("scheduler widths must be positive");
  if (enc_max_len == 0) throw ConfigError("scheduler encoder length must be positive");
  if (T < 1) throw ConfigError("scheduler decoder length must be positive");
  if (!std::isfinite(init_bias)) throw ConfigError("scheduler init_bias must be finite");
}

namespace {

constexpr std::size_t kStartSymbol = 2;  // rows of instr_emb: False, True, start

NDArray normal_matrix(std::size_t rows, std::size_t cols, double std, RngStream& rng) {
  NDArray out = NDArray::matrix(rows, cols);
  for (auto& x : out.data()) x = std * rng.normal();
  return out;
}

NDArray gate_bias(std::size_t hidden) {
  NDArray b = NDArray::matrix(1, 4 * hidden);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) b.at(0, j) = 1.0;  // forget gate
  return b;
}

struct Cell {
  Var h;
  Var c;
};

Cell lstm_step(Var x, const Cell& state, Var wx, Var wh, Var b, std::size_t hidden) {
  Var gates = add_row(add(matmul(x, wx), matmul(state.h, wh)), b);
  Var i = sigmoid(slice_cols(gates, 0, hidden));
  Var f = sigmoid(slice_cols(gates, hidden, hidden));
  Var g = tanh(slice_cols(gates, 2 * hidden, hidden));
  Var o = sigmoid(slice_cols(gates, 3 * hidden, hidden));
  Var c = add(mul(f, state.c), mul(i, g));
  return Cell{mul(o, tanh(c)), c};
}

struct Bound {
  const ParamSet& params;
  const std::vector<Var>& vars;
  Var operator()(const char* name) const { return vars[params.index_of(name)]; }
};

std::vector<IdList> map_sources(const Scheduler& s, const std::vector<TokenList>& sources) {
  std::vector<IdList> ids;
  ids.reserve(sources.size());
  for (const auto& src : sources) {
    if (src.empty()) throw ContractError("scheduler input is empty");
    if (src.size() > s.config.enc_max_len) {
      throw TruncationError("source of " + std::to_string(src.size()) +
                            " tokens exceeds the scheduler encoder length " +
                            std::to_string(s.config.enc_max_len));
    }
    ids.push_back(s.vocab.encode(src));
  }
  return ids;
}

Cell encode_on_tape(Tape& tape, const Scheduler& s, const Bound& p,
                    const std::vector<IdList>& ids) {
  const std::size_t B = ids.size();
  const std::size_t H = s.config.hidden;
  std::size_t longest = 0;
  for (const auto& row : ids) longest = std::max(longest, row.size());
  Cell state{tape.constant(NDArray::matrix(B, H)), tape.constant(NDArray::matrix(B, H))};
  for (std::size_t step = 0; step < longest; ++step) {
    std::vector<std::size_t> tok(B, Vocab::kPad);
    NDArray live = NDArray::matrix(B, H), dead = NDArray::matrix(B, H);
    bool ragged = false;
    for (std::size_t b = 0; b < B; ++b) {
      const bool active = step < ids[b].size();
      if (active) tok[b] = ids[b][step];
      ragged = ragged || !active;
      for (auto& x : (active ? live : dead).row(b)) x = 1.0;
    }
    Cell next = lstm_step(gather_rows(p("emb"), tok), state, p("enc.wx"), p("enc.wh"), p("enc.b"), H);
    if (ragged) {
      Var keep = tape.constant(std::move(live));
      Var hold = tape.constant(std::move(dead));
      next.h = add(mul(next.h, keep), mul(state.h, hold));
      next.c = add(mul(next.c, keep), mul(state.c, hold));
    }
    state = next;
  }
  return state;
}

struct Rollout {
  std::vector<Var> step_log_probs;  // T entries of B x 1
  std::vector<InstructionSample> samples;
};

double sigmoid_value(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Rolls the decoder T steps. When `forced` is set the realized bits are
// taken from it; otherwise they are drawn per `mode`.
Rollout rollout(Tape& tape, const Scheduler& s, const std::vector<Var>& vars,
                const std::vector<TokenList>& sources, SampleMode mode, RngStream* rng,
                const std::vector<InstructionSample>* forced) {
  const Bound p{s.params, vars};
  const auto ids = map_sources(s, sources);
  const std::size_t B = ids.size();
  const std::size_t T = s.config.T;
  const std::size_t H = s.config.hidden;
  Cell state = encode_on_tape(tape, s, p, ids);

  std::vector<RngStream> row_rngs;
  if (!forced && mode == SampleMode::stochastic) {
    for (std::size_t b = 0; b < B; ++b) row_rngs.push_back(rng->fork(b));
  }
  Rollout out;
  out.samples.resize(B);
  const std::uint64_t checksum = s.params.checksum();
  for (auto& sample : out.samples) {
    sample.instructions.bits.assign(T, false);
    sample.per_step_probs.assign(T, 0.0);
    sample.params_checksum = checksum;
  }
  std::vector<std::size_t> prev(B, kStartSymbol);
  for (std::size_t t = 0; t < T; ++t) {
    state = lstm_step(gather_rows(p("instr_emb"), prev), state, p("dec.wx"), p("dec.wh"), p("dec.b"), H);
    Var logit = add_row(matmul(state.h, p("head.w")), p("head.b"));
    NDArray sign = NDArray::matrix(B, 1);
    for (std::size_t b = 0; b < B; ++b) {
      const double z = logit.value().at(b, 0);
      const double prob = sigmoid_value(z);
      bool bit;
      if (forced) {
        bit = (*forced)[b].instructions.bits.at(t);
      } else if (mode == SampleMode::greedy) {
        bit = z >= 0.0;
      } else {
        bit = row_rngs[b].uniform() < prob;
      }
      out.samples[b].instructions.bits[t] = bit;
      out.samples[b].per_step_probs[t] = prob;
      sign.at(b, 0) = bit ? 1.0 : -1.0;
      prev[b] = bit ? 1 : 0;
    }
    Var lp = log_sigmoid(mul(logit, tape.constant(std::move(sign))));
    for (std::size_t b = 0; b < B; ++b) out.samples[b].log_prob += lp.value().at(b, 0);
    out.step_log_probs.push_back(lp);
  }
  return out;
}

}  // namespace

Scheduler init_scheduler(const SchedulerConfig& config, const Vocab& vocab, RngStream& rng) {
  SchedulerConfig cfg = config;
  cfg.vocab_size = vocab.size();
  cfg.validate();
  const std::size_t d = cfg.dim, h = cfg.hidden;
  const double in_std = 1.0 / std::sqrt(static_cast<double>(d));
  const double rec_std = 1.0 / std::sqrt(static_cast<double>(h));
  ParamSet p;
  p.add("emb", normal_matrix(cfg.vocab_size, d, 1.0, rng));
  p.add("enc.wx", normal_matrix(d, 4 * h, in_std, rng));
  p.add("enc.wh", normal_matrix(h, 4 * h, rec_std, rng));
  p.add("enc.b", gate_bias(h));
  p.add("dec.wx", normal_matrix(d, 4 * h, in_std, rng));
  p.add("dec.wh", normal_matrix(h, 4 * h, rec_std, rng));
  p.add("dec.b", gate_bias(h));
  p.add("instr_emb", normal_matrix(3, d, 1.0, rng));
  p.add("head.w", normal_matrix(h, 1, rec_std, rng));
  p.add("head.b", NDArray::matrix(1, 1, cfg.init_bias));
  return Scheduler{cfg, vocab, std::move(p)};
}

Scheduler constant_scheduler(const SchedulerConfig& config, const Vocab& vocab, bool value) {
  SchedulerConfig cfg = config;
  cfg.vocab_size = vocab.size();
  cfg.validate();
  const std::size_t d = cfg.dim, h = cfg.hidden;
  ParamSet p;
  p.add("emb", NDArray::matrix(cfg.vocab_size, d));
  p.add("enc.wx", NDArray::matrix(d, 4 * h));
  p.add("enc.wh", NDArray::matrix(h, 4 * h));
  p.add("enc.b", NDArray::matrix(1, 4 * h));
  p.add("dec.wx", NDArray::matrix(d, 4 * h));
  p.add("dec.wh", NDArray::matrix(h, 4 * h));
  p.add("dec.b", NDArray::matrix(1, 4 * h));
  p.add("instr_emb", NDArray::matrix(3, d));
  p.add("head.w", NDArray::matrix(h, 1));
  p.add("head.b", NDArray::matrix(1, 1, value ? 1000.0 : -1000.0));
  cfg.init_bias = p.get("head.b").item();
  return Scheduler{cfg, vocab, std::move(p)};
}

EncoderState encode_condition(const Scheduler& scheduler, const std::vector<TokenList>& sources) {
  Tape tape;
  auto vars = bind_params(tape, scheduler.params);
  const Bound p{scheduler.params, vars};
  Cell state = encode_on_tape(tape, scheduler, p, map_sources(scheduler, sources));
  return EncoderState{state.h.value(), state.c.value()};
}

std::vector<InstructionSample> sample_instructions(const Scheduler& scheduler,
                                                   const std::vector<TokenList>& sources,
                                                   RngStream& rng, SampleMode mode) {
  if (sources.empty()) return {};
  Tape tape;
  auto vars = bind_params(tape, scheduler.params);
  return rollout(tape, scheduler, vars, sources, mode, &rng, nullptr).samples;
}

InstructionSample sample_instructions(const Scheduler& scheduler, const TokenList& source,
                                      RngStream& rng, SampleMode mode) {
  return sample_instructions(scheduler, std::vector<TokenList>{source}, rng, mode).front();
}

std::vector<ScheduledNoise> greedy_schedules(const Scheduler& scheduler,
                                             const std::vector<TokenList>& sources,
                                             const BaseSchedule& base) {
  if (base.T != scheduler.config.T) {
    throw ConfigError("scheduler T " + std::to_string(scheduler.config.T) +
                      " does not match diffusion T " + std::to_string(base.T));
  }
  RngStream unused(0);
  std::vector<ScheduledNoise> out;
  for (const auto& s : sample_instructions(scheduler, sources, unused, SampleMode::greedy)) {
    out.push_back(apply_skipping(s.instructions, base));
  }
  return out;
}

ParamSet policy_gradient(const Scheduler& scheduler, const std::vector<TokenList>& sources,
                         const std::vector<InstructionSample>& samples,
                         const std::vector<double>& rewards) {
  if (samples.size() != sources.size() || rewards.size() != sources.size()) {
    throw ContractError("policy gradient needs one sample and one reward per source");
  }
  if (sources.empty()) return scheduler.params.zeros_like();
  const std::uint64_t checksum = scheduler.params.checksum();
  for (const auto& s : samples) {
    if (s.params_checksum != checksum) {
      throw ContractError("instruction sample was drawn from a different scheduler snapshot");
    }
    if (s.instructions.size() != scheduler.config.T) {
      throw ContractError("instruction sample length does not match the scheduler T");
    }
  }
  Tape tape;
  auto vars = bind_params(tape, scheduler.params);
  Rollout replay = rollout(tape, scheduler, vars, sources, SampleMode::greedy, nullptr, &samples);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    const double a = replay.samples[b].log_prob, r = samples[b].log_prob;
    if (std::abs(a - r) > 1e-9 * std::max(1.0, std::abs(r))) {
      throw ContractError("recorded log-probability does not match the scheduler replay");
    }
  }
  NDArray weights = NDArray::matrix(sources.size(), 1);
  for (std::size_t b = 0; b < rewards.size(); ++b) weights.at(b, 0) = rewards[b];
  Var w = tape.constant(std::move(weights));
  std::optional<Var> objective;
  for (Var lp : replay.step_log_probs) {
    Var term = sum(mul(lp, w));
    objective = objective ? add(*objective, term) : term;
  }
  return collect_gradients(tape.backward(*objective), vars, scheduler.params);
}

ParamSet apply_update(const ParamSet& params, const ParamSet& gradient, double lr) {
  if (!params.compatible(gradient)) throw ShapeError("scheduler gradient does not match its parameters");
  ParamSet out = params;
  out.axpy(lr, gradient);
  return out;
}

}  // namespace metadiffub
