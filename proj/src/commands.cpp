#include "metadiffub/commands.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "metadiffub/checkpoint.hpp"
#include "metadiffub/errors.hpp"

namespace metadiffub {

namespace {

constexpr std::size_t kGenerationChunk = 128;

bool is_jsonl(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  return ext == ".jsonl" || ext == ".json";
}

template <class Fn>
void for_each_line(const std::filesystem::path& path, Fn fn) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    fn(line, n);
  }
}

nlohmann::json parse_line(const std::filesystem::path& path, const std::string& line, std::size_t n) {
  try {
    auto obj = nlohmann::json::parse(line);
    if (!obj.is_object()) throw ParseError("not an object");
    return obj;
  } catch (const std::exception& e) {
    throw ParseError(path.string() + ":" + std::to_string(n) + ": " + e.what());
  }
}

std::string field(const std::filesystem::path& path, const nlohmann::json& obj, const char* key,
                  std::size_t n) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) {
    throw ParseError(path.string() + ":" + std::to_string(n) + ": missing string field \"" + key + "\"");
  }
  return it->get<std::string>();
}

std::vector<TokenList> read_column(const std::filesystem::path& path, const char* key, TokenizeMode mode) {
  std::vector<TokenList> out;
  if (is_jsonl(path)) {
    for_each_line(path, [&](const std::string& line, std::size_t n) {
      out.push_back(tokenize(field(path, parse_line(path, line, n), key, n), mode));
    });
  } else {
    for_each_line(path, [&](const std::string& line, std::size_t) { out.push_back(tokenize(line, mode)); });
  }
  return out;
}

std::vector<TokenList> sources_of(const std::vector<SentencePair>& pairs) {
  std::vector<TokenList> out;
  for (const auto& p : pairs) out.push_back(p.src);
  return out;
}

bool all_have_refs(const std::vector<GenerationRecord>& records) {
  return !records.empty() &&
         std::all_of(records.begin(), records.end(), [](const auto& r) { return r.ref.has_value(); });
}

MetricReport score_records(const std::vector<GenerationRecord>& records) {
  std::vector<TokenList> hyps, refs;
  for (const auto& r : records) {
    hyps.push_back(r.gen);
    refs.push_back(*r.ref);
  }
  return evaluate_corpus(hyps, refs);
}

}  // namespace

std::pair<std::vector<SentencePair>, std::vector<SentencePair>> load_datasets(const RunConfig& cfg) {
  const TokenizeMode mode = parse_tokenize_mode(cfg.get("data.tokenizer"));
  const std::string train_path = cfg.get("data.train");
  if (!train_path.empty()) {
    auto train = load_jsonl(train_path, mode);
    const std::string valid_path = cfg.get("data.valid");
    std::vector<SentencePair> valid;
    if (!valid_path.empty()) valid = load_jsonl(valid_path, mode);
    return {std::move(train), std::move(valid)};
  }
  const SyntheticTask task = parse_task(cfg.get("data.task"));
  const RngStream data_rng = RngStream(static_cast<std::uint64_t>(cfg.get_int("seed"))).fork(0xDA7A);
  RngStream train_rng = data_rng.fork(0), valid_rng = data_rng.fork(1);
  const std::size_t vocab = cfg.get_size("data.synthetic_vocab");
  const std::size_t lo = cfg.get_size("data.min_len"), hi = cfg.get_size("data.max_src_len");
  return {generate_synthetic(task, cfg.get_size("data.train_size"), vocab, lo, hi, train_rng),
          generate_synthetic(task, cfg.get_size("data.valid_size"), vocab, lo, hi, valid_rng)};
}

std::string dataset_tag(const RunConfig& cfg) {
  const std::string train_path = cfg.get("data.train");
  if (!train_path.empty()) return std::filesystem::path(train_path).stem().string();
  return cfg.get("data.task");
}

MetaTrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  MetaTrainSetup setup;
  setup.exploiter = exploiter_config(cfg);
  setup.scheduler = scheduler_config(cfg);
  setup.train = train_config(cfg);
  auto [train, valid] = load_datasets(cfg);
  if (train.empty()) throw ContractError("training dataset is empty");
  setup.train_data = std::move(train);
  setup.valid_data = std::move(valid);
  std::vector<TokenList> corpus;
  for (const auto& p : setup.train_data) {
    corpus.push_back(p.src);
    corpus.push_back(p.tgt);
  }
  setup.vocab = build_vocab(corpus, cfg.get_size("data.min_freq"));
  setup.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  setup.dataset_tag = dataset_tag(cfg);
  setup.run_dir = out_dir;
  setup.resolved_config = cfg.resolved();
  return meta_train(setup);
}

void cmd_make_data(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto [train, valid] = load_datasets(cfg);
  const TokenizeMode mode = parse_tokenize_mode(cfg.get("data.tokenizer"));
  save_jsonl(out_dir / "train.jsonl", train, mode);
  save_jsonl(out_dir / "valid.jsonl", valid, mode);
}

std::vector<SentencePair> read_sources(const std::filesystem::path& path, TokenizeMode mode) {
  std::vector<SentencePair> out;
  if (is_jsonl(path)) {
    for_each_line(path, [&](const std::string& line, std::size_t n) {
      const auto obj = parse_line(path, line, n);
      SentencePair p;
      p.src = tokenize(field(path, obj, "src", n), mode);
      if (obj.contains("trg")) p.tgt = tokenize(field(path, obj, "trg", n), mode);
      p.line = n;
      out.push_back(std::move(p));
    });
  } else {
    for_each_line(path, [&](const std::string& line, std::size_t n) {
      out.push_back(SentencePair{tokenize(line, mode), {}, n});
    });
  }
  return out;
}

std::vector<ScheduledNoise> inference_schedules(const Exploiter& model, const Scheduler* scheduler,
                                                const std::vector<TokenList>& sources) {
  const BaseSchedule base = build_sqrt_schedule(model.config.T, model.config.schedule_s);
  if (scheduler) {
    if (scheduler->config.T != model.config.T) {
      throw ConfigError("scheduler T " + std::to_string(scheduler->config.T) + " does not match exploiter T " +
                        std::to_string(model.config.T));
    }
    return greedy_schedules(*scheduler, sources, base);
  }
  return std::vector<ScheduledNoise>(sources.size(), apply_skipping(MetaInstructions::all(base.T, true), base));
}

std::vector<GenerationRecord> generate_with_mbr(const Exploiter& model,
                                                const std::vector<SentencePair>& sources,
                                                const std::vector<ScheduledNoise>& schedules,
                                                std::size_t mbr, std::uint64_t seed,
                                                std::size_t steps) {
  if (mbr == 0) throw ConfigError("MBR candidate count must be positive");
  if (schedules.size() != sources.size()) throw ContractError("need one schedule per source");
  std::vector<GenerationRecord> records(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    records[i].src = sources[i].src;
    if (!sources[i].tgt.empty()) records[i].ref = sources[i].tgt;
  }
  const RngStream root(seed);
  for (std::size_t k = 0; k < mbr; ++k) {
    const RngStream cand = root.fork(k);
    for (std::size_t begin = 0, chunk = 0; begin < sources.size(); begin += kGenerationChunk, ++chunk) {
      const std::size_t end = std::min(sources.size(), begin + kGenerationChunk);
      std::vector<TokenList> srcs;
      for (std::size_t i = begin; i < end; ++i) srcs.push_back(sources[i].src);
      RngStream rng = cand.fork(chunk);
      auto outs = generate(model, srcs,
                           std::span<const ScheduledNoise>(schedules).subspan(begin, end - begin), rng,
                           GenerateOptions{steps, {}});
      for (std::size_t i = begin; i < end; ++i) records[i].candidates.push_back(std::move(outs[i - begin]));
    }
  }
  for (auto& r : records) r.gen = mbr_select(r.candidates);
  return records;
}

void write_generations(const std::filesystem::path& path, const std::vector<GenerationRecord>& records,
                       TokenizeMode mode) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::json obj;
    obj["src"] = join_tokens(r.src, mode);
    obj["gen"] = join_tokens(r.gen, mode);
    nlohmann::json cands = nlohmann::json::array();
    for (const auto& c : r.candidates) cands.push_back(join_tokens(c, mode));
    obj["candidates"] = cands;
    if (r.ref) obj["trg"] = join_tokens(*r.ref, mode);
    out << obj.dump() << '\n';
  }
}

std::vector<GenerationRecord> read_generations(const std::filesystem::path& path, TokenizeMode mode) {
  std::vector<GenerationRecord> out;
  for_each_line(path, [&](const std::string& line, std::size_t n) {
    const auto obj = parse_line(path, line, n);
    GenerationRecord r;
    r.src = tokenize(field(path, obj, "src", n), mode);
    r.gen = tokenize(field(path, obj, "gen", n), mode);
    if (obj.contains("trg")) r.ref = tokenize(field(path, obj, "trg", n), mode);
    if (auto it = obj.find("candidates"); it != obj.end() && it->is_array()) {
      for (const auto& c : *it) r.candidates.push_back(tokenize(c.get<std::string>(), mode));
    }
    out.push_back(std::move(r));
  });
  return out;
}

std::vector<GenerationRecord> cmd_generate(const GenerateRequest& request) {
  if (request.fixed_sqrt == request.scheduler.has_value()) {
    throw ConfigError("generate needs exactly one of a scheduler checkpoint or --fixed-sqrt");
  }
  const Exploiter model = load_exploiter(request.exploiter);
  std::optional<Scheduler> scheduler;
  if (request.scheduler) scheduler = load_scheduler(*request.scheduler);
  const auto sources = read_sources(request.sources, request.mode);
  const auto schedules = inference_schedules(model, scheduler ? &*scheduler : nullptr, sources_of(sources));
  auto records = generate_with_mbr(model, sources, schedules, request.mbr, request.seed, request.steps);
  write_generations(request.out, records, request.mode);
  return records;
}

std::vector<TokenList> read_hypotheses(const std::filesystem::path& path, TokenizeMode mode) {
  return read_column(path, "gen", mode);
}

std::vector<TokenList> read_references(const std::filesystem::path& path, TokenizeMode mode) {
  return read_column(path, "trg", mode);
}

nlohmann::json report_json(const MetricReport& report) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, value] : report.values) out[name] = value;
  return out;
}

nlohmann::json cmd_evaluate(const std::filesystem::path& gen, const std::filesystem::path& ref,
                            TokenizeMode mode) {
  const auto hyps = read_hypotheses(gen, mode);
  const auto refs = read_references(ref, mode);
  if (hyps.size() != refs.size()) {
    throw ContractError("generation file has " + std::to_string(hyps.size()) + " lines but reference file has " +
                        std::to_string(refs.size()));
  }
  return report_json(evaluate_corpus(hyps, refs));
}

namespace {
nlohmann::json rank_json(const MeanRankResult& ranks) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [method, mr] : ranks.mean_rank) out[method] = mr;
  return out;
}
}  // namespace

nlohmann::json cmd_evaluate_systems(const std::vector<std::pair<std::string, std::filesystem::path>>& systems,
                                    const std::filesystem::path& ref, TokenizeMode mode,
                                    std::ostream* rank_csv) {
  if (systems.empty()) throw ContractError("no systems to evaluate");
  const auto refs = read_references(ref, mode);
  nlohmann::json out;
  RankTable table;
  std::map<std::string, Direction> directions;
  for (const auto& [name, path] : systems) {
    const auto hyps = read_hypotheses(path, mode);
    if (hyps.size() != refs.size()) throw ContractError("system " + name + " is not aligned with the references");
    const MetricReport report = evaluate_corpus(hyps, refs);
    out["systems"][name] = report_json(report);
    for (const auto& [metric, value] : report.values) {
      if (metric == "corpus_bleu") continue;
      table[name][metric] = value;
      directions[metric] = report.directions.at(metric);
    }
  }
  const MeanRankResult ranks = mean_rank(table, directions);
  out["mean_rank"] = rank_json(ranks);
  if (rank_csv) write_rank_csv(*rank_csv, ranks);
  return out;
}

nlohmann::json cmd_rank_table(const std::filesystem::path& table_path, std::ostream* rank_csv) {
  std::ifstream in(table_path);
  if (!in) throw ParseError("cannot open " + table_path.string());
  std::map<std::string, Direction> directions;
  const RankTable table = read_rank_table_csv(in, directions);
  const MeanRankResult ranks = mean_rank(table, directions);
  if (rank_csv) write_rank_csv(*rank_csv, ranks);
  return nlohmann::json{{"mean_rank", rank_json(ranks)}};
}

DifficultyReport analyze_difficulty(const std::vector<GenerationRecord>& items, const Scheduler& scheduler,
                                    const BaseSchedule& base, std::size_t K) {
  if (K == 0) throw ConfigError("difficulty bucket size must be positive");
  if (2 * K > items.size()) {
    throw ConfigError("bucket size " + std::to_string(K) + " needs at least " + std::to_string(2 * K) +
                      " items, got " + std::to_string(items.size()));
  }
  std::vector<double> scores;
  for (const auto& item : items) {
    if (!item.ref) throw ContractError("difficulty analysis needs a reference for every item");
    scores.push_back(bleu(item.gen, {*item.ref}));
  }
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  DifficultyReport report;
  report.hard.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(K));
  report.easy.assign(order.end() - static_cast<std::ptrdiff_t>(K), order.end());
  const auto bucket_mean = [&](const std::vector<std::size_t>& idx, double& mean_bleu) {
    std::vector<TokenList> srcs;
    mean_bleu = 0.0;
    for (std::size_t i : idx) {
      srcs.push_back(items[i].src);
      mean_bleu += scores[i];
    }
    mean_bleu /= static_cast<double>(idx.size());
    std::vector<double> mean(base.T, 0.0);
    for (const auto& s : greedy_schedules(scheduler, srcs, base)) {
      for (std::size_t t = 1; t <= base.T; ++t) mean[t - 1] += s.beta_pointer[t];
    }
    for (auto& m : mean) m /= static_cast<double>(idx.size());
    return mean;
  };
  report.mean_beta_hard = bucket_mean(report.hard, report.hard_bleu);
  report.mean_beta_easy = bucket_mean(report.easy, report.easy_bleu);
  return report;
}

void write_difficulty_csv(std::ostream& out, const DifficultyReport& report) {
  out << "t,mean_beta_hard,mean_beta_easy\n" << std::setprecision(17);
  for (std::size_t t = 0; t < report.mean_beta_hard.size(); ++t) {
    out << t + 1 << ',' << report.mean_beta_hard[t] << ',' << report.mean_beta_easy[t] << '\n';
  }
}

void write_schedule_export(std::ostream& out, const std::vector<ScheduledNoise>& schedules) {
  if (schedules.empty()) throw ContractError("no schedules to export");
  const std::size_t T = schedules.front().T();
  out << "sentence,t,pointer,beta_pointer,alpha_bar_x,beta_eff\n" << std::setprecision(17);
  for (std::size_t i = 0; i < schedules.size(); ++i) {
    const auto& s = schedules[i];
    for (std::size_t t = 1; t <= T; ++t) {
      out << i << ',' << t << ',' << s.pointer[t] << ',' << s.beta_pointer[t] << ',' << s.alpha_bar_x[t] << ','
          << s.beta_eff[t] << '\n';
    }
  }
  const double n = static_cast<double>(schedules.size());
  for (std::size_t t = 1; t <= T; ++t) {
    double pointer = 0, beta = 0, ab = 0, eff = 0;
    for (const auto& s : schedules) {
      pointer += static_cast<double>(s.pointer[t]);
      beta += s.beta_pointer[t];
      ab += s.alpha_bar_x[t];
      eff += s.beta_eff[t];
    }
    out << "mean," << t << ',' << pointer / n << ',' << beta / n << ',' << ab / n << ',' << eff / n << '\n';
  }
}

PlugAndPlayReport plug_and_play(const Scheduler& scheduler, const Exploiter& exploiter,
                                const std::vector<SentencePair>& sources, std::size_t mbr,
                                std::uint64_t seed, std::size_t steps) {
  const std::uint64_t theta_before = exploiter.params.checksum();
  const std::uint64_t psi_before = scheduler.params.checksum();
  const auto srcs = sources_of(sources);
  PlugAndPlayReport report;
  report.scheduled = generate_with_mbr(exploiter, sources, inference_schedules(exploiter, &scheduler, srcs), mbr,
                                       seed, steps);
  report.baseline = generate_with_mbr(exploiter, sources, inference_schedules(exploiter, nullptr, srcs), mbr,
                                      seed, steps);
  if (all_have_refs(report.scheduled)) {
    report.scheduled_metrics = score_records(report.scheduled);
    report.baseline_metrics = score_records(report.baseline);
  }
  report.weights_unchanged =
      exploiter.params.checksum() == theta_before && scheduler.params.checksum() == psi_before;
  return report;
}

void write_plug_and_play_csv(std::ostream& out, const PlugAndPlayReport& report) {
  out << "scheduler,exploiter,bleu,rouge_l,dist_1,self_bleu\n" << std::setprecision(10);
  const auto row = [&](const std::string& name, const std::optional<MetricReport>& m) {
    out << name << ',' << report.exploiter_tag;
    for (const char* key : {"corpus_bleu", "rouge_l", "dist_1", "self_bleu"}) {
      out << ',';
      if (m && m->values.count(key)) out << m->values.at(key);
    }
    out << '\n';
  };
  row("Null", report.baseline_metrics);
  row(report.scheduler_tag.empty() ? "scheduler" : report.scheduler_tag, report.scheduled_metrics);
}

}  // namespace metadiffub
