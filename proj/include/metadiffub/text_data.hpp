#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "metadiffub/rng.hpp"

namespace metadiffub {

using TokenList = std::vector<std::string>;
using IdList = std::vector<std::size_t>;

enum class TokenizeMode { whitespace, character };

TokenizeMode parse_tokenize_mode(const std::string& name);

/// Whitespace mode lowercases and splits on runs of whitespace; character
/// mode yields one token per UTF-8 code point, skipping whitespace.
TokenList tokenize(const std::string& text, TokenizeMode mode);

std::string join_tokens(const TokenList& tokens, TokenizeMode mode = TokenizeMode::whitespace);

class Vocab {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kSep = 2;
  static constexpr std::size_t kEos = 3;
  static constexpr std::size_t kReserved = 4;

  Vocab();
  // `tokens` become ids 4, 5, ... in order; duplicates or reserved names are rejected.
  static Vocab from_tokens(const TokenList& tokens);
  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return id_to_token_.size(); }
  bool only_reserved() const { return size() == kReserved; }
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }
  // UNK for unknown tokens.
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const;
  IdList encode(const TokenList& tokens) const;
  TokenList decode(const IdList& ids) const;
  // Non-reserved tokens in id order.
  TokenList tokens() const;

  bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::map<std::string, std::size_t> token_to_id_;
};

/// Keeps tokens seen at least `min_freq` times, ordered by descending
/// frequency then lexicographically. Throws on an empty corpus.
Vocab build_vocab(const std::vector<TokenList>& corpus, std::size_t min_freq);

struct SentencePair {
  TokenList src;
  TokenList tgt;
  std::size_t line = 0;  // 1-based source line when loaded from a file
};

/// Rows laid out as [src ids, SEP, tgt ids, EOS, PAD...]. The condition block
/// covers src and SEP; everything after it is the target block.
struct EncodedBatch {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::size_t> ids;          // batch x length
  std::vector<std::uint8_t> condition;   // batch x length
  std::vector<std::uint8_t> pad;         // batch x length

  std::size_t at(std::size_t b, std::size_t i) const { return ids[b * length + i]; }
  bool is_condition(std::size_t b, std::size_t i) const { return condition[b * length + i] != 0; }
  bool is_pad(std::size_t b, std::size_t i) const { return pad[b * length + i] != 0; }
  std::size_t condition_length(std::size_t b) const;

  void append(const EncodedBatch& rows);
};

/// Throws TruncationError when the pair does not fit in `max_len`.
EncodedBatch encode_pair(const SentencePair& pair, const Vocab& vocab, std::size_t max_len);
EncodedBatch encode_batch(const std::vector<SentencePair>& pairs, const Vocab& vocab,
                          std::size_t max_len);
/// Source-only row for generation; the target block is all PAD ids.
EncodedBatch encode_source(const TokenList& src, const Vocab& vocab, std::size_t max_len);

/// Recovers (src, tgt) tokens from a row using the condition mask and EOS.
SentencePair decode_row(const EncodedBatch& batch, std::size_t row, const Vocab& vocab);

/// Reads {"src": ..., "trg": ...} objects, one per line; blank lines are skipped.
std::vector<SentencePair> load_jsonl(const std::filesystem::path& path,
                                     TokenizeMode mode = TokenizeMode::whitespace);
void save_jsonl(const std::filesystem::path& path, const std::vector<SentencePair>& pairs,
                TokenizeMode mode = TokenizeMode::whitespace);

enum class SyntheticTask { copy, reverse, sort };

SyntheticTask parse_task(const std::string& name);
std::string task_name(SyntheticTask task);

/// Symbols are "w0".."w{vocab_size-1}"; sort orders by symbol index.
std::vector<SentencePair> generate_synthetic(SyntheticTask task, std::size_t count,
                                             std::size_t vocab_size, std::size_t min_len,
                                             std::size_t max_len, RngStream& rng);

}  // namespace metadiffub
