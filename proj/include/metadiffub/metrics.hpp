#pragma once

#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "metadiffub/text_data.hpp"

namespace metadiffub {

/// Sentence BLEU-4 against one or more references. Clipped n-gram precisions
/// use the maximum reference count; p_1 is unsmoothed and p_2..p_4 use
/// add-one smoothing on numerator and denominator. Brevity penalty uses the
/// closest reference length (shorter wins ties). Empty hypothesis scores 0.
double bleu(const TokenList& hyp, const std::vector<TokenList>& refs);

/// Corpus BLEU with counts pooled across sentences, same smoothing rule.
double corpus_bleu(const std::vector<TokenList>& hyps, const std::vector<TokenList>& refs);

/// Mean over i of bleu(hyp_i, {hyp_j : j != i}). Requires at least 2 hypotheses.
double self_bleu(const std::vector<TokenList>& hyps);

std::size_t lcs_length(const TokenList& a, const TokenList& b);
/// ROUGE-L F1 over the longest common subsequence.
double rouge_l(const TokenList& hyp, const TokenList& ref);

/// Distinct unigrams over total unigrams of a single sentence.
double dist_1(const TokenList& hyp);
double corpus_dist_1(const std::vector<TokenList>& hyps);

enum class Direction { higher_better, lower_better };

struct MetricReport {
  std::map<std::string, double> values;
  std::map<std::string, Direction> directions;
};

/// BLEU (mean sentence), corpus BLEU, ROUGE-L, Dist-1 and Self-BLEU of a
/// generation set against aligned references.
MetricReport evaluate_corpus(const std::vector<TokenList>& hyps, const std::vector<TokenList>& refs);

Direction default_direction(const std::string& metric);

using RankTable = std::map<std::string, std::map<std::string, std::optional<double>>>;

struct RankedEntry {
  std::string method;
  std::string metric;
  double value = 0.0;
  std::size_t rank = 0;
};

struct MeanRankResult {
  std::map<std::string, double> mean_rank;
  std::vector<RankedEntry> entries;
};

/// Ranks methods per metric (1 = best); ties share the minimum rank of the
/// group. Methods lacking a metric are skipped for it and averaged over the
/// metrics they have. Metrics absent from `directions` are higher-better.
MeanRankResult mean_rank(const RankTable& table, const std::map<std::string, Direction>& directions);

void write_rank_csv(std::ostream& out, const MeanRankResult& result);

/// Reads a wide CSV `method,<metric>...`; `-` or an empty cell marks a missing
/// value. A metric header may carry a `:down` or `:up` suffix to set its direction.
RankTable read_rank_table_csv(std::istream& in, std::map<std::string, Direction>& directions);

}  // namespace metadiffub
