#include "metadiffub/exploiter.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "metadiffub/errors.hpp"
#include "metadiffub/metrics.hpp"

namespace metadiffub {

void ExploiterConfig::validate() const {
  if (vocab_size < Vocab::kReserved) throw ConfigError("exploiter vocabulary smaller than the reserved ids");
  if (layers < 1) throw ConfigError("exploiter needs at least one layer");
  if (heads < 1 || dim % heads != 0) throw ConfigError("model dim must be divisible by heads");
  if (T < 1) throw ConfigError("diffusion step count must be positive");
  if (max_len < 3) throw ConfigError("max_len must leave room for SEP and EOS");
  if (ffn_mult < 1) throw ConfigError("ffn_mult must be positive");
  if (lambda < 0.0) throw ConfigError("lambda must be nonnegative");
  if (!(embed_std > 0.0)) throw ConfigError("embed_std must be positive");
  if (!(schedule_s > 0.0) || schedule_s > 0.01) throw ConfigError("schedule offset must lie in (0, 0.01]");
}

namespace {

NDArray normal_matrix(std::size_t rows, std::size_t cols, double std, RngStream& rng) {
  NDArray out = NDArray::matrix(rows, cols);
  for (auto& x : out.data()) x = std * rng.normal();
  return out;
}

std::string block_name(std::size_t layer, const char* part) {
  return "blk" + std::to_string(layer) + "." + part;
}

void require_schedules(const EncodedBatch& batch, std::span<const ScheduledNoise> schedules,
                       std::size_t T) {
  if (schedules.size() != batch.batch) {
    throw ContractError("need one schedule per sequence: got " + std::to_string(schedules.size()) +
                        " for " + std::to_string(batch.batch));
  }
  for (const auto& s : schedules) {
    if (s.T() != T) throw ConfigError("schedule length does not match the exploiter's T");
  }
}

// sqrt(beta_0) eps on target rows, 0 on condition rows.
NDArray z0_noise(const EncodedBatch& batch, std::span<const ScheduledNoise> schedules,
                 std::size_t d, RngStream& rng) {
  NDArray noise = NDArray::matrix(batch.batch * batch.length, d);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const double sigma = std::sqrt(1.0 - schedules[b].alpha_bar_x[0]);
    for (std::size_t i = 0; i < batch.length; ++i) {
      if (batch.is_condition(b, i)) continue;
      for (auto& x : noise.row(b * batch.length + i)) x = sigma * rng.normal();
    }
  }
  return noise;
}

// Signal level of step t relative to z_0, the product of (1 - beta_eff) over 1..t.
double relative_level(const ScheduledNoise& s, std::size_t t) {
  return s.alpha_bar_x[t] / s.alpha_bar_x[0];
}

// z_t = scale * z_0 + noise; scale is 1 and noise 0 on condition rows.
void marginal_terms(const EncodedBatch& batch, std::span<const ScheduledNoise> schedules,
                    std::span<const std::size_t> steps, std::size_t d, RngStream& rng,
                    NDArray& scale, NDArray& noise) {
  scale = NDArray::matrix(batch.batch * batch.length, d, 1.0);
  noise = NDArray::matrix(batch.batch * batch.length, d);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const double ab = relative_level(schedules[b], steps[b]);
    const double keep = std::sqrt(ab);
    const double sigma = std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < batch.length; ++i) {
      if (batch.is_condition(b, i)) continue;
      const std::size_t r = b * batch.length + i;
      for (auto& x : scale.row(r)) x = keep;
      for (auto& x : noise.row(r)) x = sigma * rng.normal();
    }
  }
}

NDArray add_arrays(const NDArray& a, const NDArray& b) {
  NDArray out = a;
  auto bs = b.data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] += bs[i];
  return out;
}

void reanchor(NDArray& z, const NDArray& anchors, const EncodedBatch& batch) {
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t i = 0; i < batch.length; ++i) {
      if (!batch.is_condition(b, i)) continue;
      const std::size_t r = b * batch.length + i;
      auto src = anchors.row(r);
      std::copy(src.begin(), src.end(), z.row(r).begin());
    }
  }
}

struct Binder {
  const ParamSet& params;
  const std::vector<Var>& vars;
  Var operator()(const std::string& name) const { return vars[params.index_of(name)]; }
};

}  // namespace

Exploiter init_exploiter(const ExploiterConfig& config, const Vocab& vocab, RngStream& rng) {
  ExploiterConfig cfg = config;
  cfg.vocab_size = vocab.size();
  cfg.validate();
  const std::size_t d = cfg.dim;
  const std::size_t fd = cfg.dim * cfg.ffn_mult;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  ParamSet p;
  p.add("tok_emb", normal_matrix(cfg.vocab_size, d, cfg.embed_std, rng));
  p.add("pos_emb", normal_matrix(cfg.max_len, d, 0.2, rng));
  p.add("time_emb", normal_matrix(cfg.T + 1, d, 0.2, rng));
  p.add("in_w", normal_matrix(d, d, inv, rng));
  p.add("in_b", NDArray::matrix(1, d));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    p.add(block_name(l, "ln1_g"), NDArray::matrix(1, d, 1.0));
    p.add(block_name(l, "ln1_b"), NDArray::matrix(1, d));
    p.add(block_name(l, "wq"), normal_matrix(d, d, inv, rng));
    p.add(block_name(l, "wk"), normal_matrix(d, d, inv, rng));
    p.add(block_name(l, "wv"), normal_matrix(d, d, inv, rng));
    p.add(block_name(l, "wo"), normal_matrix(d, d, inv, rng));
    p.add(block_name(l, "bo"), NDArray::matrix(1, d));
    p.add(block_name(l, "ln2_g"), NDArray::matrix(1, d, 1.0));
    p.add(block_name(l, "ln2_b"), NDArray::matrix(1, d));
    p.add(block_name(l, "ff_w1"), normal_matrix(d, fd, inv, rng));
    p.add(block_name(l, "ff_b1"), NDArray::matrix(1, fd));
    p.add(block_name(l, "ff_w2"), normal_matrix(fd, d, 1.0 / std::sqrt(static_cast<double>(fd)), rng));
    p.add(block_name(l, "ff_b2"), NDArray::matrix(1, d));
  }
  p.add("lnf_g", NDArray::matrix(1, d, 1.0));
  p.add("lnf_b", NDArray::matrix(1, d));
  p.add("out_w", normal_matrix(d, d, inv, rng));
  p.add("out_b", NDArray::matrix(1, d));
  return Exploiter{cfg, vocab, std::move(p)};
}

NDArray embed(const Exploiter& model, const EncodedBatch& batch) {
  const NDArray& table = model.params.get("tok_emb");
  const std::size_t d = table.cols();
  NDArray out = NDArray::matrix(batch.batch * batch.length, d);
  for (std::size_t r = 0; r < batch.ids.size(); ++r) {
    auto src = table.row(batch.ids[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

LatentState embed_and_sample_z0(const Exploiter& model, const EncodedBatch& batch,
                                std::span<const ScheduledNoise> schedules, RngStream& rng) {
  require_schedules(batch, schedules, model.config.T);
  NDArray emb = embed(model, batch);
  return LatentState{add_arrays(emb, z0_noise(batch, schedules, emb.cols(), rng)), 0};
}

LatentState forward_diffuse(const LatentState& z0, const EncodedBatch& batch, std::size_t t,
                            std::span<const ScheduledNoise> schedules, RngStream& rng) {
  if (schedules.size() != batch.batch) throw ContractError("need one schedule per sequence");
  for (const auto& s : schedules) {
    if (t < 1 || t > s.T()) throw IndexError("diffusion step " + std::to_string(t) + " out of range");
  }
  std::vector<std::size_t> steps(batch.batch, t);
  NDArray scale, noise;
  marginal_terms(batch, schedules, steps, z0.z.cols(), rng, scale, noise);
  NDArray z = z0.z;
  auto zs = z.data();
  auto sc = scale.data();
  auto ns = noise.data();
  for (std::size_t i = 0; i < zs.size(); ++i) zs[i] = zs[i] * sc[i] + ns[i];
  return LatentState{std::move(z), t};
}

Var denoiser_forward(Tape&, const ExploiterConfig& config, const ParamSet& params,
                     const std::vector<Var>& vars, Var z, std::size_t seq_len,
                     std::span<const std::size_t> step_per_row) {
  const Binder p{params, vars};
  const std::size_t rows = z.rows();
  if (seq_len == 0 || rows % seq_len != 0) throw ShapeError("latent rows not a multiple of seq_len");
  if (seq_len > config.max_len) throw ShapeError("sequence longer than the position table");
  const std::size_t batch = rows / seq_len;
  if (step_per_row.size() != batch) throw ShapeError("need one diffusion step per sequence");
  std::vector<std::size_t> pos_idx(rows), time_idx(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    pos_idx[r] = r % seq_len;
    time_idx[r] = step_per_row[r / seq_len];
    if (time_idx[r] > config.T) throw IndexError("diffusion step beyond the time table");
  }
  Var h = add_row(matmul(z, p("in_w")), p("in_b"));
  h = add(h, gather_rows(p("pos_emb"), pos_idx));
  h = add(h, gather_rows(p("time_emb"), time_idx));
  for (std::size_t l = 0; l < config.layers; ++l) {
    Var a = layer_norm(h, p(block_name(l, "ln1_g")), p(block_name(l, "ln1_b")));
    Var q = matmul(a, p(block_name(l, "wq")));
    Var k = matmul(a, p(block_name(l, "wk")));
    Var v = matmul(a, p(block_name(l, "wv")));
    Var att = attention(q, k, v, seq_len, config.heads);
    h = add(h, add_row(matmul(att, p(block_name(l, "wo"))), p(block_name(l, "bo"))));
    Var f = layer_norm(h, p(block_name(l, "ln2_g")), p(block_name(l, "ln2_b")));
    f = gelu(add_row(matmul(f, p(block_name(l, "ff_w1"))), p(block_name(l, "ff_b1"))));
    f = add_row(matmul(f, p(block_name(l, "ff_w2"))), p(block_name(l, "ff_b2")));
    h = add(h, f);
  }
  Var out = layer_norm(h, p("lnf_g"), p("lnf_b"));
  return add_row(matmul(out, p("out_w")), p("out_b"));
}

NDArray denoise_predict(const Exploiter& model, const NDArray& z, std::size_t seq_len,
                        std::span<const std::size_t> steps) {
  for (std::size_t t : steps) {
    if (t < 1 || t > model.config.T) throw IndexError("diffusion step " + std::to_string(t) + " out of range");
  }
  Tape tape;
  auto vars = bind_params(tape, model.params);
  Var zv = tape.constant(z);
  return denoiser_forward(tape, model.config, model.params, vars, zv, seq_len, steps).value();
}

NDArray denoise_predict(const Exploiter& model, const NDArray& z, std::size_t seq_len,
                        std::size_t t) {
  if (seq_len == 0) throw ShapeError("sequence length must be positive");
  const std::vector<std::size_t> steps(z.rows() / seq_len, t);
  return denoise_predict(model, z, seq_len, steps);
}

LossTerms diffusion_objective(Tape& tape, const ExploiterConfig& config, const ParamSet& params,
                              const std::vector<Var>& vars, const EncodedBatch& batch,
                              std::span<const ScheduledNoise> schedules, RngStream& rng,
                              const LossOptions& options, const DenoiseFn& denoiser) {
  require_schedules(batch, schedules, config.T);
  const std::size_t B = batch.batch, L = batch.length;
  if (B == 0) throw ContractError("empty batch");
  const Binder p{params, vars};
  Var table = p("tok_emb");
  const std::size_t d = table.cols();

  std::vector<std::size_t> steps(B);
  for (auto& t : steps) {
    if (options.fixed_t) {
      t = *options.fixed_t;
      if (t < 1 || t > config.T) throw IndexError("fixed diffusion step out of range");
    } else {
      t = 1 + rng.below(config.T);
    }
  }

  Var emb = gather_rows(table, batch.ids);
  Var z0 = add(emb, tape.constant(z0_noise(batch, schedules, d, rng)));
  NDArray keep, noise;
  marginal_terms(batch, schedules, steps, d, rng, keep, noise);
  Var zt = add(mul(z0, tape.constant(std::move(keep))), tape.constant(std::move(noise)));
  if (options.hook) {
    options.hook(z0.value(), batch);
    options.hook(zt.value(), batch);
  }

  Var pred = denoiser ? denoiser(tape, zt, steps)
                      : denoiser_forward(tape, config, params, vars, zt, L, steps);

  // t >= 2 regresses z_0 on target rows; t = 1 regresses emb on every row.
  std::vector<Var> targets;
  std::vector<double> weights(B * L, 0.0), reg_weights(B * L, 0.0), ce_weights(B * L, 0.0);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t n_target = L - batch.condition_length(b);
    targets.push_back(slice_rows(steps[b] == 1 ? emb : z0, b * L, L));
    for (std::size_t i = 0; i < L; ++i) {
      const std::size_t r = b * L + i;
      const bool target = !batch.is_condition(b, i);
      if (steps[b] == 1) {
        weights[r] = inv_b / static_cast<double>(L * d);
      } else if (target) {
        weights[r] = inv_b / static_cast<double>(n_target * d);
      }
      if (target) {
        reg_weights[r] = inv_b / static_cast<double>(n_target * d);
        ce_weights[r] = inv_b / static_cast<double>(n_target);
      }
    }
  }
  Var target = concat_rows(targets);
  LossTerms terms;
  Var denoise = weighted_sse(pred, target, weights);
  terms.denoise = denoise.value().item();
  Var total = denoise;
  if (config.lambda > 0.0) {
    Var zeros = tape.constant(NDArray(z0.value().shape()));
    Var reg = weighted_sse(z0, zeros, reg_weights);
    terms.regulariser = config.lambda * reg.value().item();
    total = add(total, scale(reg, config.lambda));
  }
  if (config.rounding_loss) {
    Var logits = matmul(pred, transpose(table));
    Var ce = cross_entropy(logits, batch.ids, ce_weights);
    terms.rounding = ce.value().item();
    total = add(total, ce);
  }
  terms.total = total;
  return terms;
}

LossResult diffusion_loss(const Exploiter& model, const EncodedBatch& batch,
                          std::span<const ScheduledNoise> schedules, RngStream& rng,
                          const LossOptions& options) {
  Tape tape;
  auto vars = bind_params(tape, model.params);
  LossTerms terms =
      diffusion_objective(tape, model.config, model.params, vars, batch, schedules, rng, options);
  LossResult result;
  result.loss = terms.total.value().item();
  result.denoise = terms.denoise;
  result.regulariser = terms.regulariser;
  result.rounding = terms.rounding;
  result.gradients = collect_gradients(tape.backward(terms.total), vars, model.params);
  if (!model.config.train_embeddings) {
    auto g = result.gradients.get("tok_emb").data();
    std::fill(g.begin(), g.end(), 0.0);
  }
  return result;
}

PosteriorCoefficients posterior_coefficients(double alpha_bar_t, double alpha_bar_s) {
  PosteriorCoefficients c;
  if (alpha_bar_t == alpha_bar_s) return c;
  const double beta = 1.0 - alpha_bar_t / alpha_bar_s;
  const double denom = 1.0 - alpha_bar_t;
  c.coef_z0 = std::sqrt(alpha_bar_s) * beta / denom;
  c.coef_zt = std::sqrt(1.0 - beta) * (1.0 - alpha_bar_s) / denom;
  c.variance = beta * (1.0 - alpha_bar_s) / denom;
  c.skip = false;
  return c;
}

NDArray denoise_jump(const Exploiter& model, const NDArray& z_t, const EncodedBatch& batch,
                     const NDArray& anchors, std::size_t t, std::size_t s,
                     std::span<const ScheduledNoise> schedules, RngStream& rng) {
  require_schedules(batch, schedules, model.config.T);
  if (t < 1 || t > model.config.T || s >= t) {
    throw IndexError("reverse transition " + std::to_string(t) + " -> " + std::to_string(s) +
                     " out of range");
  }
  std::vector<PosteriorCoefficients> coefs;
  bool any_move = false;
  for (const auto& sched : schedules) {
    coefs.push_back(posterior_coefficients(relative_level(sched, t), relative_level(sched, s)));
    any_move = any_move || !coefs.back().skip;
  }
  NDArray z = z_t;
  if (any_move) {
    const NDArray pred = denoise_predict(model, z_t, batch.length, t);
    for (std::size_t b = 0; b < batch.batch; ++b) {
      const auto& c = coefs[b];
      if (c.skip) continue;
      const double sigma = std::sqrt(c.variance);
      for (std::size_t i = 0; i < batch.length; ++i) {
        if (batch.is_condition(b, i)) continue;
        const std::size_t r = b * batch.length + i;
        auto zr = z.row(r);
        auto pr = pred.row(r);
        for (std::size_t j = 0; j < zr.size(); ++j) {
          zr[j] = c.coef_z0 * pr[j] + c.coef_zt * zr[j];
          if (s > 0) zr[j] += sigma * rng.normal();
        }
      }
    }
  }
  reanchor(z, anchors, batch);
  return z;
}

NDArray sample_step(const Exploiter& model, const NDArray& z_t, const EncodedBatch& batch,
                    std::size_t t, std::span<const ScheduledNoise> schedules, RngStream& rng) {
  return denoise_jump(model, z_t, batch, embed(model, batch), t, t - 1, schedules, rng);
}

std::vector<std::size_t> sampling_steps(std::size_t T, std::size_t steps) {
  if (steps == 0 || steps >= T) steps = T;
  std::vector<std::size_t> out;
  for (std::size_t k = steps + 1; k-- > 0;) {
    const std::size_t t = (k * T + steps / 2) / steps;
    if (out.empty() || out.back() != t) out.push_back(t);
  }
  return out;
}

std::vector<TokenList> generate(const Exploiter& model, const std::vector<TokenList>& sources,
                                std::span<const ScheduledNoise> schedules, RngStream& rng,
                                const GenerateOptions& options) {
  if (sources.empty()) return {};
  EncodedBatch batch;
  batch.length = model.config.max_len;
  for (const auto& src : sources) batch.append(encode_source(src, model.vocab, model.config.max_len));
  require_schedules(batch, schedules, model.config.T);

  const NDArray anchors = embed(model, batch);
  NDArray z = anchors;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    for (std::size_t i = 0; i < batch.length; ++i) {
      if (batch.is_condition(b, i)) continue;
      for (auto& x : z.row(b * batch.length + i)) x = rng.normal();
    }
  }
  if (options.hook) options.hook(z, batch);

  const auto steps = sampling_steps(model.config.T, options.steps);
  for (std::size_t k = 0; k + 1 < steps.size(); ++k) {
    z = denoise_jump(model, z, batch, anchors, steps[k], steps[k + 1], schedules, rng);
    if (options.hook) options.hook(z, batch);
  }

  const NDArray& table = model.params.get("tok_emb");
  std::vector<TokenList> outputs;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const std::size_t cond = batch.condition_length(b);
    NDArray block = NDArray::matrix(batch.length - cond, z.cols());
    for (std::size_t i = cond; i < batch.length; ++i) {
      auto src = z.row(b * batch.length + i);
      std::copy(src.begin(), src.end(), block.row(i - cond).begin());
    }
    TokenList out;
    for (std::size_t id : round_to_tokens(block, table)) {
      if (id == Vocab::kEos) break;
      out.push_back(model.vocab.token(id));
    }
    outputs.push_back(std::move(out));
  }
  return outputs;
}

TokenList generate(const Exploiter& model, const TokenList& source, const ScheduledNoise& schedule,
                   RngStream& rng, const GenerateOptions& options) {
  const ScheduledNoise schedules[] = {schedule};
  return generate(model, std::vector<TokenList>{source}, schedules, rng, options).front();
}

IdList round_to_tokens(const NDArray& z, const NDArray& embedding) {
  if (z.rows() > 0 && z.cols() != embedding.cols()) throw ShapeError("rounding width mismatch");
  IdList ids(z.rows(), 0);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto zr = z.row(r);
    double best = 0.0;
    for (std::size_t v = 0; v < embedding.rows(); ++v) {
      auto er = embedding.row(v);
      double dist = 0.0;
      for (std::size_t j = 0; j < zr.size(); ++j) dist += (zr[j] - er[j]) * (zr[j] - er[j]);
      if (v == 0 || dist < best) {
        best = dist;
        ids[r] = v;
      }
    }
  }
  return ids;
}

std::size_t mbr_select_index(const std::vector<TokenList>& candidates) {
  if (candidates.empty()) throw ContractError("MBR selection needs at least one candidate");
  if (candidates.size() == 1) return 0;
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (j != i) total += bleu(candidates[i], {candidates[j]});
    }
    const double mean = total / static_cast<double>(candidates.size() - 1);
    if (mean > best_score) {
      best_score = mean;
      best = i;
    }
  }
  return best;
}

TokenList mbr_select(const std::vector<TokenList>& candidates) {
  return candidates[mbr_select_index(candidates)];
}

}  // namespace metadiffub
