#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "metadiffub/errors.hpp"
#include "metadiffub/metrics.hpp"
#include "metadiffub/rng.hpp"

using namespace metadiffub;

namespace {

TokenList toks(const std::string& s) {
  TokenList out;
  std::istringstream in(s);
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

// Exhaustive LCS: the longest subsequence of `a` (by bitmask) that is also a
// subsequence of `b`.
std::size_t brute_lcs(const TokenList& a, const TokenList& b) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    TokenList sub;
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (mask & (1u << i)) sub.push_back(a[i]);
    }
    std::size_t j = 0;
    for (const auto& t : b) {
      if (j < sub.size() && sub[j] == t) ++j;
    }
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

// QQP block of the benchmark table: BLEU, ROUGE-L, BERTScore, Dist-1, Self-BLEU.
RankTable qqp_table() {
  const auto row = [](std::optional<double> b, std::optional<double> r, std::optional<double> bs,
                      std::optional<double> d, std::optional<double> sb) {
    return std::map<std::string, std::optional<double>>{
        {"bleu", b}, {"rouge_l", r}, {"bertscore", bs}, {"dist_1", d}, {"self_bleu", sb}};
  };
  return {
      {"GPT2-base", row(0.1980, 0.5212, 0.8246, 0.9798, 0.5480)},
      {"GPT2-large", row(0.2059, 0.5415, 0.8363, 0.9819, 0.7325)},
      {"LevT", row(0.2268, 0.5795, 0.8344, 0.9790, 0.9995)},
      {"DiffuSeq", row(0.2413, 0.5880, 0.8365, 0.9807, 0.2732)},
      {"SeqDiffuSeq", row(0.2434, std::nullopt, 0.8400, 0.9807, std::nullopt)},
      {"Dinoiser", row(0.1949, 0.5316, 0.8036, 0.9723, 0.8643)},
      {"Meta-DiffuB", row(0.2632, 0.5933, 0.8519, 0.9902, 0.2595)},
  };
}

}  // namespace

TEST(Bleu, Identity) { EXPECT_DOUBLE_EQ(bleu(toks("a b c d e"), {toks("a b c d e")}), 1.0); }

TEST(Bleu, NoOverlap) { EXPECT_EQ(bleu(toks("a b c"), {toks("x y z")}), 0.0); }

TEST(Bleu, HandCountedExample) {
  const double expect = std::pow(0.75 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
  EXPECT_NEAR(bleu(toks("a b c d"), {toks("a b c e")}), expect, 1e-12);
  EXPECT_NEAR(bleu(toks("a b c d"), {toks("a b c e")}), 0.658, 1e-3);
}

TEST(Bleu, BrevityPenalty) {
  // p = (1, 2/2 smoothed, 1/1, 1/1) over a 2-token hypothesis against 4 reference tokens.
  const double expect = std::exp(1.0 - 4.0 / 2.0);
  EXPECT_NEAR(bleu(toks("a b"), {toks("a b c d")}), expect, 1e-12);
}

TEST(Bleu, ClosestReferenceLength) {
  // Lengths 3 and 5 are equally close to 4; the shorter wins, so there is no penalty.
  const double expect = std::pow(0.75 * 0.75 * (2.0 / 3.0) * 0.5, 0.25);
  EXPECT_NEAR(bleu(toks("a b c d"), {toks("a b c"), toks("x x x x x")}), expect, 1e-12);
}

TEST(Bleu, EmptyHypothesisScoresZero) { EXPECT_EQ(bleu({}, {toks("a")}), 0.0); }

TEST(Bleu, PermutationInvariantOverReferences) {
  RngStream rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TokenList> refs;
    for (int r = 0; r < 3; ++r) {
      TokenList ref;
      for (std::size_t i = 0; i < 3 + rng.below(4); ++i) ref.push_back(std::string(1, char('a' + rng.below(5))));
      refs.push_back(ref);
    }
    TokenList hyp;
    for (std::size_t i = 0; i < 2 + rng.below(5); ++i) hyp.push_back(std::string(1, char('a' + rng.below(5))));
    const double base = bleu(hyp, refs);
    std::reverse(refs.begin(), refs.end());
    EXPECT_DOUBLE_EQ(bleu(hyp, refs), base);
    EXPECT_DOUBLE_EQ(bleu(hyp, {hyp}), 1.0);
  }
}

TEST(Bleu, CorpusPoolsCounts) {
  const std::vector<TokenList> hyps = {toks("a b c d"), toks("a b c d")};
  const std::vector<TokenList> refs = {toks("a b c e"), toks("a b c e")};
  // pooled: unigram 6/8, bigram (4+1)/(6+1), trigram (2+1)/(4+1), 4-gram (0+1)/(2+1)
  const double expect = std::pow(6.0 / 8 * 5.0 / 7 * 3.0 / 5 * 1.0 / 3, 0.25);
  EXPECT_NEAR(corpus_bleu(hyps, refs), expect, 1e-12);
}

TEST(SelfBleu, Identical) {
  EXPECT_DOUBLE_EQ(self_bleu({toks("a b c"), toks("a b c"), toks("a b c")}), 1.0);
}

TEST(SelfBleu, Disjoint) { EXPECT_EQ(self_bleu({toks("a b"), toks("c d"), toks("e f")}), 0.0); }

TEST(SelfBleu, HandExample) {
  EXPECT_NEAR(self_bleu({toks("a b c d"), toks("a b c d"), toks("w x y z")}), 2.0 / 3.0, 1e-3);
}

TEST(SelfBleu, NeedsTwo) { EXPECT_THROW(self_bleu({toks("a")}), ContractError); }

TEST(RougeL, Examples) {
  EXPECT_DOUBLE_EQ(rouge_l(toks("a b c"), toks("a b c")), 1.0);
  EXPECT_EQ(rouge_l(toks("a b"), toks("c d")), 0.0);
  // l = 3, P = 1, R = 3/4
  EXPECT_NEAR(rouge_l(toks("a c d"), toks("a b c d")), 2.0 * 0.75 / 1.75, 1e-12);
  EXPECT_NEAR(rouge_l(toks("a c d"), toks("a b c d")), 0.857, 1e-3);
}

TEST(RougeL, LcsMatchesBruteForce) {
  RngStream rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    TokenList a, b;
    for (std::size_t i = 0; i < rng.below(9); ++i) a.push_back(std::string(1, char('a' + rng.below(3))));
    for (std::size_t i = 0; i < rng.below(9); ++i) b.push_back(std::string(1, char('a' + rng.below(3))));
    ASSERT_EQ(lcs_length(a, b), brute_lcs(a, b));
  }
}

TEST(Dist1, Examples) {
  EXPECT_DOUBLE_EQ(dist_1(toks("a b c")), 1.0);
  EXPECT_DOUBLE_EQ(dist_1(toks("a a b b")), 0.5);
  EXPECT_NEAR(dist_1(toks("a a a")), 1.0 / 3.0, 1e-15);
  EXPECT_THROW(dist_1({}), ContractError);
}

TEST(Dist1, CorpusIsMeanOfSentences) {
  EXPECT_DOUBLE_EQ(corpus_dist_1({toks("a b"), toks("a a")}), 0.75);
}

TEST(Report, ContainsMetricsAndDirections) {
  const MetricReport r = evaluate_corpus({toks("a b c"), toks("d e f")}, {toks("a b c"), toks("d e f")});
  EXPECT_DOUBLE_EQ(r.values.at("bleu"), 1.0);
  EXPECT_DOUBLE_EQ(r.values.at("rouge_l"), 1.0);
  EXPECT_TRUE(r.values.count("self_bleu"));
  EXPECT_EQ(r.directions.at("self_bleu"), Direction::lower_better);
  EXPECT_EQ(r.directions.at("bleu"), Direction::higher_better);
  for (const auto& [k, v] : r.values) {
    EXPECT_GE(v, 0.0) << k;
    EXPECT_LE(v, 1.0) << k;
  }
}

TEST(MeanRank, BenchmarkTableColumn) {
  const MeanRankResult r = mean_rank(qqp_table(), {});
  const std::map<std::string, double> printed = {
      {"Meta-DiffuB", 1.00}, {"DiffuSeq", 2.60}, {"SeqDiffuSeq", 2.33}, {"GPT2-large", 3.80},
      {"LevT", 4.80},        {"GPT2-base", 5.20}, {"Dinoiser", 6.20}};
  for (const auto& [method, value] : printed) {
    EXPECT_NEAR(r.mean_rank.at(method), value, 0.005) << method;
  }
}

TEST(MeanRank, TiesTakeMinimumAndMissingAreSkipped) {
  const MeanRankResult r = mean_rank(qqp_table(), {});
  std::map<std::string, std::size_t> seq;
  for (const auto& e : r.entries) {
    if (e.method == "SeqDiffuSeq") seq[e.metric] = e.rank;
  }
  EXPECT_EQ(seq.size(), 3u);
  EXPECT_EQ(seq.at("bleu"), 2u);
  EXPECT_EQ(seq.at("bertscore"), 2u);
  EXPECT_EQ(seq.at("dist_1"), 3u);
  EXPECT_NEAR(r.mean_rank.at("SeqDiffuSeq"), 7.0 / 3.0, 1e-12);
}

TEST(MeanRank, SingleMethod) {
  const MeanRankResult r = mean_rank({{"only", {{"bleu", 0.3}, {"self_bleu", 0.9}}}}, {});
  EXPECT_DOUBLE_EQ(r.mean_rank.at("only"), 1.0);
}

TEST(MeanRank, DominantSystem) {
  const MeanRankResult r = mean_rank(
      {{"good", {{"bleu", 0.5}, {"self_bleu", 0.1}}}, {"bad", {{"bleu", 0.2}, {"self_bleu", 0.8}}}}, {});
  EXPECT_DOUBLE_EQ(r.mean_rank.at("good"), 1.0);
  EXPECT_DOUBLE_EQ(r.mean_rank.at("bad"), 2.0);
}

TEST(MeanRank, MethodWithoutValuesRejected) {
  EXPECT_THROW(mean_rank({{"a", {{"bleu", 0.1}}}, {"b", {{"bleu", std::nullopt}}}}, {}), ContractError);
}

TEST(MeanRank, CsvTableRoundTrip) {
  std::istringstream in(
      "method,bleu,rouge_l,bertscore,dist_1,self_bleu:down\n"
      "GPT2-base,0.1980,0.5212,0.8246,0.9798,0.5480\n"
      "GPT2-large,0.2059,0.5415,0.8363,0.9819,0.7325\n"
      "LevT,0.2268,0.5795,0.8344,0.9790,0.9995\n"
      "DiffuSeq,0.2413,0.5880,0.8365,0.9807,0.2732\n"
      "SeqDiffuSeq,0.2434,-,0.8400,0.9807,-\n"
      "Dinoiser,0.1949,0.5316,0.8036,0.9723,0.8643\n"
      "Meta-DiffuB,0.2632,0.5933,0.8519,0.9902,0.2595\n");
  std::map<std::string, Direction> dirs;
  const RankTable table = read_rank_table_csv(in, dirs);
  EXPECT_EQ(dirs.at("self_bleu"), Direction::lower_better);
  const MeanRankResult r = mean_rank(table, dirs);
  EXPECT_NEAR(r.mean_rank.at("DiffuSeq"), 2.60, 0.005);
  EXPECT_NEAR(r.mean_rank.at("GPT2-base"), 5.20, 0.005);
  std::ostringstream out;
  write_rank_csv(out, r);
  EXPECT_EQ(out.str().substr(0, 24), "method,metric,value,rank");
}

TEST(MeanRank, MalformedCsvRejected) {
  std::istringstream in("method,bleu\nA,0.1,0.2\n");
  std::map<std::string, Direction> dirs;
  EXPECT_THROW(read_rank_table_csv(in, dirs), ParseError);
}
