#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "metadiffub/noise_schedule.hpp"
#include "metadiffub/params.hpp"
#include "metadiffub/rng.hpp"
#include "metadiffub/tape.hpp"
#include "metadiffub/text_data.hpp"

namespace metadiffub {

struct ExploiterConfig {
  std::size_t vocab_size = 0;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t dim = 64;
  std::size_t ffn_mult = 4;
  std::size_t T = 64;
  std::size_t max_len = 32;
  double lambda = 1.0;          // weight of the ||z_0||^2 regulariser
  bool rounding_loss = false;   // add -log p(w | z_0_hat) over target positions
  bool train_embeddings = false;
  double embed_std = 1.0;
  double schedule_s = kSqrtScheduleOffset;  // offset of the base sqrt schedule

  void validate() const;
};

/// The denoising model D_theta together with the vocabulary it embeds.
struct Exploiter {
  ExploiterConfig config;
  Vocab vocab;
  ParamSet params;
};

Exploiter init_exploiter(const ExploiterConfig& config, const Vocab& vocab, RngStream& rng);

/// Diffusion latent for a whole batch: rows are the batch's positions
/// (B*L x d). Condition rows always hold emb(w^x) exactly.
struct LatentState {
  NDArray z;
  std::size_t t = 0;
};

/// Observes every latent produced during training or generation.
using LatentHook = std::function<void(const NDArray& z, const EncodedBatch& batch)>;

/// emb(ids) for every position, B*L x d.
NDArray embed(const Exploiter& model, const EncodedBatch& batch);

/// z_0 = emb + sqrt(beta_0) eps on target rows, with beta_0 = 1 - alpha_bar_x_0.
LatentState embed_and_sample_z0(const Exploiter& model, const EncodedBatch& batch,
                                std::span<const ScheduledNoise> schedules, RngStream& rng);

/// Closed-form q(z_t | z_0) on target rows with signal level
/// alpha_bar_x_t / alpha_bar_x_0, the composition of the beta_eff steps;
/// condition rows keep their anchor.
LatentState forward_diffuse(const LatentState& z0, const EncodedBatch& batch, std::size_t t,
                            std::span<const ScheduledNoise> schedules, RngStream& rng);

/// Records the transformer f_theta on `tape`; `step_per_row` holds one
/// diffusion step per sequence in the batch.
Var denoiser_forward(Tape& tape, const ExploiterConfig& config, const ParamSet& params,
                     const std::vector<Var>& vars, Var z, std::size_t seq_len,
                     std::span<const std::size_t> step_per_row);

/// Predicted z_0 for every position (same shape as z).
NDArray denoise_predict(const Exploiter& model, const NDArray& z, std::size_t seq_len,
                        std::size_t t);
/// Per-sequence time-embedding steps.
NDArray denoise_predict(const Exploiter& model, const NDArray& z, std::size_t seq_len,
                        std::span<const std::size_t> steps);

using DenoiseFn = std::function<Var(Tape& tape, Var z_t, std::span<const std::size_t> steps)>;

struct LossOptions {
  std::optional<std::size_t> fixed_t;  // sample t uniformly in 1..T when empty
  LatentHook hook;
};

struct LossTerms {
  Var total;
  double denoise = 0.0;
  double regulariser = 0.0;
  double rounding = 0.0;
};

/// Single-t Monte-Carlo estimate of the exploiter objective, recorded on
/// `tape`. `vars` are leaves for `params` in ParamSet order. When `denoiser`
/// is empty the transformer is used.
LossTerms diffusion_objective(Tape& tape, const ExploiterConfig& config, const ParamSet& params,
                              const std::vector<Var>& vars, const EncodedBatch& batch,
                              std::span<const ScheduledNoise> schedules, RngStream& rng,
                              const LossOptions& options = {}, const DenoiseFn& denoiser = {});

struct LossResult {
  double loss = 0.0;
  double denoise = 0.0;
  double regulariser = 0.0;
  double rounding = 0.0;
  ParamSet gradients;
};

LossResult diffusion_loss(const Exploiter& model, const EncodedBatch& batch,
                          std::span<const ScheduledNoise> schedules, RngStream& rng,
                          const LossOptions& options = {});

/// Coefficients of q(z_s | z_t, z_0) for s < t under cumulative levels
/// alpha_bar_t <= alpha_bar_s. `skip` is set when the two levels are equal.
struct PosteriorCoefficients {
  double coef_z0 = 0.0;
  double coef_zt = 1.0;
  double variance = 0.0;
  bool skip = true;
};

PosteriorCoefficients posterior_coefficients(double alpha_bar_t, double alpha_bar_s);

/// One reverse transition from step t to step s (s < t) for every sequence,
/// using levels relative to z_0 as in forward_diffuse.
/// Rows whose schedule holds alpha_bar between t and s are copied bit-exactly;
/// noise is only added when s > 0; condition rows are re-anchored to emb.
NDArray denoise_jump(const Exploiter& model, const NDArray& z_t, const EncodedBatch& batch,
                     const NDArray& anchors, std::size_t t, std::size_t s,
                     std::span<const ScheduledNoise> schedules, RngStream& rng);

/// z_{t-1} from z_t.
NDArray sample_step(const Exploiter& model, const NDArray& z_t, const EncodedBatch& batch,
                    std::size_t t, std::span<const ScheduledNoise> schedules, RngStream& rng);

/// Descending step list T = s_K > ... > s_0 = 0 with `steps` evenly strided
/// jumps; steps == 0 or steps >= T gives every step.
std::vector<std::size_t> sampling_steps(std::size_t T, std::size_t steps);

struct GenerateOptions {
  std::size_t steps = 0;  // 0: all T steps
  LatentHook hook;
};

/// Batched generation: z_T = [emb(w^x) | N(0, I)], denoised down to z_0 and
/// rounded on the target block; each output is cut at its first EOS.
std::vector<TokenList> generate(const Exploiter& model, const std::vector<TokenList>& sources,
                                std::span<const ScheduledNoise> schedules, RngStream& rng,
                                const GenerateOptions& options = {});

TokenList generate(const Exploiter& model, const TokenList& source, const ScheduledNoise& schedule,
                   RngStream& rng, const GenerateOptions& options = {});

/// Nearest embedding row per position by squared Euclidean distance; ties go
/// to the lower id.
IdList round_to_tokens(const NDArray& z, const NDArray& embedding);

/// Self-consensus MBR: the candidate with the highest mean BLEU against the
/// others; ties go to the earliest candidate.
TokenList mbr_select(const std::vector<TokenList>& candidates);
std::size_t mbr_select_index(const std::vector<TokenList>& candidates);

}  // namespace metadiffub
