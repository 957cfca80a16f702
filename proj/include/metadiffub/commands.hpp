#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "metadiffub/config.hpp"
#include "metadiffub/exploiter.hpp"
#include "metadiffub/meta_training.hpp"
#include "metadiffub/metrics.hpp"
#include "metadiffub/scheduler.hpp"
#include "metadiffub/text_data.hpp"

namespace metadiffub {

/// Training and held-out pairs: the configured corpora, or the synthetic
/// task drawn from the seed when no corpus is given.
std::pair<std::vector<SentencePair>, std::vector<SentencePair>> load_datasets(const RunConfig& cfg);
std::string dataset_tag(const RunConfig& cfg);

/// Runs meta-training into `out_dir` (config.resolved, log.jsonl, checkpoints/).
MetaTrainResult cmd_train(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Writes train.jsonl and valid.jsonl for the configured synthetic task.
void cmd_make_data(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Sources from a JSONL corpus (`src`, optional `trg`) or a plain text file
/// with one sentence per line.
std::vector<SentencePair> read_sources(const std::filesystem::path& path, TokenizeMode mode);

struct GenerationRecord {
  TokenList src;
  TokenList gen;
  std::vector<TokenList> candidates;
  std::optional<TokenList> ref;
};

/// Greedy schedules from `scheduler`, or the fixed sqrt schedule when null.
std::vector<ScheduledNoise> inference_schedules(const Exploiter& model, const Scheduler* scheduler,
                                                const std::vector<TokenList>& sources);

/// |S| candidates per source (candidate k draws from RngStream(seed).fork(k)),
/// reduced by MBR.
std::vector<GenerationRecord> generate_with_mbr(const Exploiter& model,
                                                const std::vector<SentencePair>& sources,
                                                const std::vector<ScheduledNoise>& schedules,
                                                std::size_t mbr, std::uint64_t seed,
                                                std::size_t steps);

void write_generations(const std::filesystem::path& path, const std::vector<GenerationRecord>& records,
                       TokenizeMode mode);
std::vector<GenerationRecord> read_generations(const std::filesystem::path& path, TokenizeMode mode);

struct GenerateRequest {
  std::filesystem::path exploiter;
  std::optional<std::filesystem::path> scheduler;
  bool fixed_sqrt = false;
  std::filesystem::path sources;
  std::filesystem::path out;
  std::size_t mbr = 5;
  std::size_t steps = 0;
  std::uint64_t seed = 0;
  TokenizeMode mode = TokenizeMode::whitespace;
};

std::vector<GenerationRecord> cmd_generate(const GenerateRequest& request);

/// Hypotheses from a generation JSONL (`gen`), or plain text lines.
std::vector<TokenList> read_hypotheses(const std::filesystem::path& path, TokenizeMode mode);
/// References from a corpus JSONL (`trg`), or plain text lines.
std::vector<TokenList> read_references(const std::filesystem::path& path, TokenizeMode mode);

nlohmann::json report_json(const MetricReport& report);

/// Single-system metric report.
nlohmann::json cmd_evaluate(const std::filesystem::path& gen, const std::filesystem::path& ref,
                            TokenizeMode mode);
/// Several named systems against shared references, with Mean-Rank.
nlohmann::json cmd_evaluate_systems(const std::vector<std::pair<std::string, std::filesystem::path>>& systems,
                                    const std::filesystem::path& ref, TokenizeMode mode,
                                    std::ostream* rank_csv = nullptr);
/// Mean-Rank over a wide CSV table (method column, then one column per metric).
nlohmann::json cmd_rank_table(const std::filesystem::path& table, std::ostream* rank_csv = nullptr);

struct DifficultyReport {
  std::vector<double> mean_beta_hard;  // t = 1..T
  std::vector<double> mean_beta_easy;
  std::vector<std::size_t> hard;       // item indices
  std::vector<std::size_t> easy;
  double hard_bleu = 0.0;
  double easy_bleu = 0.0;
};

/// Buckets items by sentence BLEU (stable, input order breaks ties) and
/// averages each bucket's greedy beta_pointer per step.
DifficultyReport analyze_difficulty(const std::vector<GenerationRecord>& items, const Scheduler& scheduler,
                                    const BaseSchedule& base, std::size_t K);
void write_difficulty_csv(std::ostream& out, const DifficultyReport& report);

/// Per-sentence greedy schedules, then a `mean` block; columns are the
/// schedule CSV columns with a leading `sentence` column.
void write_schedule_export(std::ostream& out, const std::vector<ScheduledNoise>& schedules);

struct PlugAndPlayReport {
  std::vector<GenerationRecord> scheduled;
  std::vector<GenerationRecord> baseline;
  std::string scheduler_tag;
  std::string exploiter_tag;
  std::optional<MetricReport> scheduled_metrics;
  std::optional<MetricReport> baseline_metrics;
  bool weights_unchanged = false;
};

PlugAndPlayReport plug_and_play(const Scheduler& scheduler, const Exploiter& exploiter,
                                const std::vector<SentencePair>& sources, std::size_t mbr,
                                std::uint64_t seed, std::size_t steps);
/// Rows `Null` (own noise) and the scheduler's dataset tag.
void write_plug_and_play_csv(std::ostream& out, const PlugAndPlayReport& report);

}  // namespace metadiffub
