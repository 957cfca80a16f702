#include "metadiffub/text_data.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <unordered_map>

#include "metadiffub/errors.hpp"

namespace metadiffub {

namespace {
const char* const kReservedNames[Vocab::kReserved] = {"<pad>", "<unk>", "<sep>", "<eos>"};

std::size_t utf8_length(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}
}  // namespace

TokenizeMode parse_tokenize_mode(const std::string& name) {
  if (name == "whitespace") return TokenizeMode::whitespace;
  if (name == "char") return TokenizeMode::character;
  throw ConfigError("unknown tokenizer mode: " + name);
}

TokenList tokenize(const std::string& text, TokenizeMode mode) {
  TokenList out;
  if (mode == TokenizeMode::whitespace) {
    std::string current;
    for (char ch : text) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isspace(c)) {
        if (!current.empty()) out.push_back(std::move(current));
        current.clear();
      } else {
        current.push_back(static_cast<char>(std::tolower(c)));
      }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
  }
  for (std::size_t i = 0; i < text.size();) {
    const auto lead = static_cast<unsigned char>(text[i]);
    const std::size_t n = std::min(utf8_length(lead), text.size() - i);
    if (!(n == 1 && std::isspace(lead))) out.push_back(text.substr(i, n));
    i += n;
  }
  return out;
}

std::string join_tokens(const TokenList& tokens, TokenizeMode mode) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i && mode == TokenizeMode::whitespace) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocab::Vocab() {
  for (std::size_t i = 0; i < kReserved; ++i) {
    id_to_token_.emplace_back(kReservedNames[i]);
    token_to_id_[kReservedNames[i]] = i;
  }
}

Vocab Vocab::from_tokens(const TokenList& tokens) {
  Vocab v;
  for (const auto& t : tokens) {
    if (v.token_to_id_.count(t)) throw ParseError("duplicate or reserved vocabulary token: " + t);
    v.token_to_id_[t] = v.id_to_token_.size();
    v.id_to_token_.push_back(t);
  }
  return v;
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open vocabulary file " + path.string());
  TokenList tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(tokens);
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write vocabulary file " + path.string());
  for (std::size_t i = kReserved; i < size(); ++i) out << id_to_token_[i] << '\n';
}

std::size_t Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id >= id_to_token_.size()) throw IndexError("token id out of range");
  return id_to_token_[id];
}

IdList Vocab::encode(const TokenList& tokens) const {
  IdList ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

TokenList Vocab::decode(const IdList& ids) const {
  TokenList out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

TokenList Vocab::tokens() const {
  return TokenList(id_to_token_.begin() + kReserved, id_to_token_.end());
}

Vocab build_vocab(const std::vector<TokenList>& corpus, std::size_t min_freq) {
  if (min_freq < 1) throw ParameterError("min_freq must be at least 1");
  if (corpus.empty()) throw ParameterError("cannot build a vocabulary from an empty corpus");
  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus) {
    for (const auto& t : sentence) ++counts[t];
  }
  std::vector<std::pair<std::string, std::size_t>> kept;
  for (const auto& [token, count] : counts) {
    if (count >= min_freq && Vocab().id(token) == Vocab::kUnk && token != "<unk>") {
      kept.emplace_back(token, count);
    }
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  TokenList tokens;
  for (auto& [token, count] : kept) tokens.push_back(token);
  Vocab vocab = Vocab::from_tokens(tokens);
  if (vocab.only_reserved()) {
    std::cerr << "warning: every token fell below min_freq=" << min_freq
              << "; vocabulary holds reserved ids only\n";
  }
  return vocab;
}

// ---------------------------------------------------------------------------

std::size_t EncodedBatch::condition_length(std::size_t b) const {
  std::size_t n = 0;
  while (n < length && is_condition(b, n)) ++n;
  return n;
}

void EncodedBatch::append(const EncodedBatch& rows) {
  if (batch == 0 && length == 0) length = rows.length;
  if (rows.length != length) throw ShapeError("cannot append rows of a different length");
  batch += rows.batch;
  ids.insert(ids.end(), rows.ids.begin(), rows.ids.end());
  condition.insert(condition.end(), rows.condition.begin(), rows.condition.end());
  pad.insert(pad.end(), rows.pad.begin(), rows.pad.end());
}

EncodedBatch encode_pair(const SentencePair& pair, const Vocab& vocab, std::size_t max_len) {
  const std::size_t m = pair.src.size(), n = pair.tgt.size();
  if (m == 0 || n == 0) throw ContractError("sentence pair needs nonempty source and target");
  if (m + n + 2 > max_len) {
    throw TruncationError("pair of lengths " + std::to_string(m) + "+" + std::to_string(n) +
                          " does not fit max length " + std::to_string(max_len));
  }
  EncodedBatch row;
  row.batch = 1;
  row.length = max_len;
  row.ids.assign(max_len, Vocab::kPad);
  row.condition.assign(max_len, 0);
  row.pad.assign(max_len, 1);
  std::size_t k = 0;
  for (const auto& t : pair.src) row.ids[k++] = vocab.id(t);
  row.ids[k++] = Vocab::kSep;
  std::fill(row.condition.begin(), row.condition.begin() + static_cast<std::ptrdiff_t>(k), 1);
  for (const auto& t : pair.tgt) row.ids[k++] = vocab.id(t);
  row.ids[k++] = Vocab::kEos;
  std::fill(row.pad.begin(), row.pad.begin() + static_cast<std::ptrdiff_t>(k), 0);
  return row;
}

EncodedBatch encode_batch(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                          std::size_t max_len) {
  EncodedBatch out;
  out.length = max_len;
  for (const auto& p : pairs) out.append(encode_pair(p, vocab, max_len));
  return out;
}

EncodedBatch encode_source(const TokenList& src, const Vocab& vocab, std::size_t max_len) {
  const std::size_t m = src.size();
  if (m == 0) throw ContractError("empty source sentence");
  if (m + 2 > max_len) {
    throw TruncationError("source of length " + std::to_string(m) +
                          " leaves no target room in max length " + std::to_string(max_len));
  }
  EncodedBatch row;
  row.batch = 1;
  row.length = max_len;
  row.ids.assign(max_len, Vocab::kPad);
  row.condition.assign(max_len, 0);
  row.pad.assign(max_len, 0);
  for (std::size_t i = 0; i < m; ++i) row.ids[i] = vocab.id(src[i]);
  row.ids[m] = Vocab::kSep;
  std::fill(row.condition.begin(), row.condition.begin() + static_cast<std::ptrdiff_t>(m + 1), 1);
  return row;
}

SentencePair decode_row(const EncodedBatch& batch, std::size_t row, const Vocab& vocab) {
  SentencePair out;
  const std::size_t cond = batch.condition_length(row);
  for (std::size_t i = 0; i + 1 < cond; ++i) out.src.push_back(vocab.token(batch.at(row, i)));
  for (std::size_t i = cond; i < batch.length; ++i) {
    const std::size_t id = batch.at(row, i);
    if (id == Vocab::kEos) break;
    out.tgt.push_back(vocab.token(id));
  }
  return out;
}

std::vector<SentencePair> load_jsonl(const std::filesystem::path& path, TokenizeMode mode) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open corpus file " + path.string());
  std::vector<SentencePair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
      continue;
    }
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw ParseError(where + ": expected a JSON object");
    for (const char* field : {"src", "trg"}) {
      if (!obj.contains(field) || !obj[field].is_string()) {
        throw ParseError(where + ": missing string field \"" + field + "\"");
      }
    }
    SentencePair pair;
    pair.src = tokenize(obj["src"].get<std::string>(), mode);
    pair.tgt = tokenize(obj["trg"].get<std::string>(), mode);
    pair.line = line_no;
    if (pair.src.empty() || pair.tgt.empty()) {
      throw ParseError(where + ": empty source or target after tokenization");
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void save_jsonl(const std::filesystem::path& path, const std::vector<SentencePair>& pairs,
                TokenizeMode mode) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write corpus file " + path.string());
  for (const auto& p : pairs) {
    nlohmann::json obj = {{"src", join_tokens(p.src, mode)}, {"trg", join_tokens(p.tgt, mode)}};
    out << obj.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------

SyntheticTask parse_task(const std::string& name) {
  if (name == "copy") return SyntheticTask::copy;
  if (name == "reverse") return SyntheticTask::reverse;
  if (name == "sort") return SyntheticTask::sort;
  throw ConfigError("unknown synthetic task: " + name);
}

std::string task_name(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::copy:
      return "copy";
    case SyntheticTask::reverse:
      return "reverse";
    case SyntheticTask::sort:
      return "sort";
  }
  return "copy";
}

std::vector<SentencePair> generate_synthetic(SyntheticTask task, std::size_t count,
                                             std::size_t vocab_size, std::size_t min_len,
                                             std::size_t max_len, RngStream& rng) {
  if (vocab_size < 2) throw ParameterError("synthetic vocabulary needs at least 2 symbols");
  if (min_len < 1 || min_len > max_len) throw ParameterError("invalid synthetic length range");
  std::vector<SentencePair> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t len = min_len + rng.below(max_len - min_len + 1);
    std::vector<std::size_t> symbols(len);
    for (auto& s : symbols) s = rng.below(vocab_size);
    std::vector<std::size_t> target = symbols;
    if (task == SyntheticTask::reverse) std::reverse(target.begin(), target.end());
    if (task == SyntheticTask::sort) std::sort(target.begin(), target.end());
    SentencePair pair;
    for (auto s : symbols) pair.src.push_back("w" + std::to_string(s));
    for (auto s : target) pair.tgt.push_back("w" + std::to_string(s));
    out.push_back(std::move(pair));
  }
  return out;
}

}  // namespace metadiffub
