#include "metadiffub/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "metadiffub/errors.hpp"

namespace metadiffub {

namespace {

constexpr std::size_t kMaxOrder = 4;

using NgramCounts = std::map<TokenList, std::size_t>;

NgramCounts count_ngrams(const TokenList& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    ++counts[TokenList(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                       tokens.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

struct BleuStats {
  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

std::size_t closest_ref_length(std::size_t c, const std::vector<TokenList>& refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto diff = [c](std::size_t len) { return len > c ? len - c : c - len; };
    if (diff(r.size()) < diff(best) || (diff(r.size()) == diff(best) && r.size() < best)) {
      best = r.size();
    }
  }
  return best;
}

BleuStats sentence_stats(const TokenList& hyp, const std::vector<TokenList>& refs) {
  if (refs.empty()) throw ContractError("BLEU needs at least one reference");
  BleuStats s;
  s.hyp_length = hyp.size();
  s.ref_length = closest_ref_length(hyp.size(), refs);
  for (std::size_t n = 1; n <= kMaxOrder; ++n) {
    const NgramCounts cand = count_ngrams(hyp, n);
    NgramCounts max_ref;
    for (const auto& r : refs) {
      for (const auto& [gram, count] : count_ngrams(r, n)) {
        max_ref[gram] = std::max(max_ref[gram], count);
      }
    }
    std::size_t matched = 0;
    for (const auto& [gram, count] : cand) {
      auto it = max_ref.find(gram);
      if (it != max_ref.end()) matched += std::min(count, it->second);
    }
    s.matches[n - 1] = matched;
    s.totals[n - 1] = hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  return s;
}

double score(const BleuStats& s) {
  if (s.hyp_length == 0 || s.totals[0] == 0) return 0.0;
  if (s.matches[0] == 0) return 0.0;
  double log_sum = std::log(static_cast<double>(s.matches[0]) / static_cast<double>(s.totals[0]));
  for (std::size_t n = 1; n < kMaxOrder; ++n) {
    log_sum += std::log((static_cast<double>(s.matches[n]) + 1.0) /
                        (static_cast<double>(s.totals[n]) + 1.0));
  }
  const double c = static_cast<double>(s.hyp_length);
  const double r = static_cast<double>(s.ref_length);
  const double log_bp = std::min(0.0, 1.0 - r / c);
  return std::exp(log_bp + log_sum / static_cast<double>(kMaxOrder));
}

}  // namespace

double bleu(const TokenList& hyp, const std::vector<TokenList>& refs) {
  return score(sentence_stats(hyp, refs));
}

double corpus_bleu(const std::vector<TokenList>& hyps, const std::vector<TokenList>& refs) {
  if (hyps.size() != refs.size()) throw ContractError("corpus BLEU needs aligned hypotheses and references");
  BleuStats total;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const BleuStats s = sentence_stats(hyps[i], {refs[i]});
    for (std::size_t n = 0; n < kMaxOrder; ++n) {
      total.matches[n] += s.matches[n];
      total.totals[n] += s.totals[n];
    }
    total.hyp_length += s.hyp_length;
    total.ref_length += s.ref_length;
  }
  return score(total);
}

double self_bleu(const std::vector<TokenList>& hyps) {
  if (hyps.size() < 2) throw ContractError("Self-BLEU is undefined for fewer than 2 hypotheses");
  double total = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    std::vector<TokenList> others;
    others.reserve(hyps.size() - 1);
    for (std::size_t j = 0; j < hyps.size(); ++j) {
      if (j != i) others.push_back(hyps[j]);
    }
    total += bleu(hyps[i], others);
  }
  return total / static_cast<double>(hyps.size());
}

std::size_t lcs_length(const TokenList& a, const TokenList& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const TokenList& hyp, const TokenList& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  const double l = static_cast<double>(lcs_length(hyp, ref));
  if (l == 0.0) return 0.0;
  const double p = l / static_cast<double>(hyp.size());
  const double r = l / static_cast<double>(ref.size());
  return 2.0 * p * r / (p + r);
}

double dist_1(const TokenList& hyp) {
  if (hyp.empty()) throw ContractError("Dist-1 of an empty sentence");
  TokenList sorted = hyp;
  std::sort(sorted.begin(), sorted.end());
  const auto distinct = std::unique(sorted.begin(), sorted.end()) - sorted.begin();
  return static_cast<double>(distinct) / static_cast<double>(hyp.size());
}

double corpus_dist_1(const std::vector<TokenList>& hyps) {
  double total = 0.0;
  std::size_t counted = 0;
  for (const auto& h : hyps) {
    if (h.empty()) continue;
    total += dist_1(h);
    ++counted;
  }
  if (counted == 0) throw ContractError("Dist-1 of a corpus with no nonempty sentence");
  return total / static_cast<double>(counted);
}

Direction default_direction(const std::string& metric) {
  if (metric == "self_bleu" || metric == "self-bleu" || metric == "Self-BLEU") {
    return Direction::lower_better;
  }
  return Direction::higher_better;
}

MetricReport evaluate_corpus(const std::vector<TokenList>& hyps, const std::vector<TokenList>& refs) {
  if (hyps.size() != refs.size()) throw ContractError("generation and reference counts differ");
  if (hyps.empty()) throw ContractError("nothing to evaluate");
  MetricReport report;
  double b = 0.0, r = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    b += bleu(hyps[i], {refs[i]});
    r += rouge_l(hyps[i], refs[i]);
  }
  const double n = static_cast<double>(hyps.size());
  report.values["bleu"] = b / n;
  report.values["corpus_bleu"] = corpus_bleu(hyps, refs);
  report.values["rouge_l"] = r / n;
  bool any_nonempty = std::any_of(hyps.begin(), hyps.end(), [](const auto& h) { return !h.empty(); });
  report.values["dist_1"] = any_nonempty ? corpus_dist_1(hyps) : 0.0;
  if (hyps.size() >= 2) report.values["self_bleu"] = self_bleu(hyps);
  for (const auto& [name, value] : report.values) report.directions[name] = default_direction(name);
  return report;
}

MeanRankResult mean_rank(const RankTable& table, const std::map<std::string, Direction>& directions) {
  if (table.empty()) throw ContractError("mean rank of an empty table");
  std::map<std::string, std::vector<std::pair<std::string, double>>> by_metric;
  for (const auto& [method, metrics] : table) {
    bool any = false;
    for (const auto& [metric, value] : metrics) {
      if (!value) continue;
      by_metric[metric].emplace_back(method, *value);
      any = true;
    }
    if (!any) throw ContractError("method " + method + " has no metric values");
  }
  MeanRankResult result;
  std::map<std::string, std::pair<double, std::size_t>> totals;
  for (auto& [metric, column] : by_metric) {
    auto dir_it = directions.find(metric);
    const Direction dir = dir_it == directions.end() ? default_direction(metric) : dir_it->second;
    for (const auto& [method, value] : column) {
      std::size_t better = 0;
      for (const auto& [other, other_value] : column) {
        if (dir == Direction::higher_better ? other_value > value : other_value < value) ++better;
      }
      const std::size_t rank = better + 1;
      result.entries.push_back({method, metric, value, rank});
      totals[method].first += static_cast<double>(rank);
      totals[method].second += 1;
    }
  }
  for (const auto& [method, acc] : totals) {
    result.mean_rank[method] = acc.first / static_cast<double>(acc.second);
  }
  return result;
}

void write_rank_csv(std::ostream& out, const MeanRankResult& result) {
  out << "method,metric,value,rank\n";
  out << std::setprecision(10);
  for (const auto& e : result.entries) {
    out << e.method << ',' << e.metric << ',' << e.value << ',' << e.rank << '\n';
  }
  for (const auto& [method, mr] : result.mean_rank) {
    out << method << ",mean_rank," << mr << ",\n";
  }
}

namespace {
std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}
}  // namespace

RankTable read_rank_table_csv(std::istream& in, std::map<std::string, Direction>& directions) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("rank table is empty");
  auto header = split_csv_line(line);
  if (header.size() < 2) throw ParseError("rank table needs a method column and at least one metric");
  std::vector<std::string> metrics;
  for (std::size_t i = 1; i < header.size(); ++i) {
    std::string name = header[i];
    Direction dir = default_direction(name);
    for (const auto& [suffix, d] : {std::pair{":down", Direction::lower_better},
                                    std::pair{":up", Direction::higher_better}}) {
      const std::string s = suffix;
      if (name.size() > s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0) {
        name.resize(name.size() - s.size());
        dir = d;
      }
    }
    directions[name] = dir;
    metrics.push_back(name);
  }
  RankTable table;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError("rank table line " + std::to_string(line_no) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(header.size()));
    }
    auto& row = table[cells[0]];
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      const std::string& cell = cells[i + 1];
      if (cell.empty() || cell == "-") {
        row[metrics[i]] = std::nullopt;
        continue;
      }
      try {
        std::size_t used = 0;
        row[metrics[i]] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw ParseError("rank table line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
  }
  return table;
}

}  // namespace metadiffub
