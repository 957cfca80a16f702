#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "metadiffub/errors.hpp"
#include "metadiffub/text_data.hpp"

using namespace metadiffub;

namespace {

std::filesystem::path temp_file(const std::string& name, const std::string& content) {
  const auto dir = std::filesystem::temp_directory_path() / "metadiffub_text_data";
  std::filesystem::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST(Tokenize, WhitespaceLowercases) {
  EXPECT_EQ(tokenize("Is it possible", TokenizeMode::whitespace), (TokenList{"is", "it", "possible"}));
}

TEST(Tokenize, CollapsesSpaces) {
  EXPECT_EQ(tokenize("a  b", TokenizeMode::whitespace), (TokenList{"a", "b"}));
  EXPECT_TRUE(tokenize("   ", TokenizeMode::whitespace).empty());
}

TEST(Tokenize, Characters) {
  EXPECT_EQ(tokenize("abc", TokenizeMode::character), (TokenList{"a", "b", "c"}));
  EXPECT_EQ(tokenize("h\xC3\xA9", TokenizeMode::character), (TokenList{"h", "\xC3\xA9"}));
}

TEST(Tokenize, ParseMode) {
  EXPECT_EQ(parse_tokenize_mode("char"), TokenizeMode::character);
  EXPECT_THROW(parse_tokenize_mode("bpe"), ConfigError);
}

TEST(Vocab, ReservedIds) {
  Vocab v;
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.token(Vocab::kPad), "<pad>");
  EXPECT_EQ(v.token(Vocab::kUnk), "<unk>");
  EXPECT_EQ(v.token(Vocab::kSep), "<sep>");
  EXPECT_EQ(v.token(Vocab::kEos), "<eos>");
  EXPECT_EQ(v.id("never-seen"), Vocab::kUnk);
}

TEST(Vocab, FrequencyOrder) {
  const Vocab v = build_vocab({{"a", "a", "b"}}, 1);
  EXPECT_EQ(v.id("a"), 4u);
  EXPECT_EQ(v.id("b"), 5u);
}

TEST(Vocab, TiesBreakLexicographically) {
  const Vocab v = build_vocab({{"z", "y", "x"}}, 1);
  EXPECT_EQ(v.id("x"), 4u);
  EXPECT_EQ(v.id("z"), 6u);
}

TEST(Vocab, MinFreqThreshold) {
  const Vocab v = build_vocab({{"a", "a", "b"}}, 2);
  EXPECT_EQ(v.size(), 5u);
  EXPECT_TRUE(v.contains("a"));
  EXPECT_FALSE(v.contains("b"));
}

TEST(Vocab, AllBelowThresholdLeavesReserved) {
  const Vocab v = build_vocab({{"a", "b"}}, 5);
  EXPECT_TRUE(v.only_reserved());
}

TEST(Vocab, EmptyCorpusRejected) { EXPECT_THROW(build_vocab({}, 1), ParameterError); }

TEST(Vocab, Bijection) {
  const Vocab v = build_vocab({{"c", "b", "a", "b"}}, 1);
  for (std::size_t id = 0; id < v.size(); ++id) EXPECT_EQ(v.id(v.token(id)), id);
}

TEST(Vocab, SaveLoadRoundTrip) {
  const Vocab v = build_vocab({{"c", "b", "a", "b"}}, 1);
  const auto path = temp_file("vocab.txt", "");
  v.save(path);
  EXPECT_EQ(Vocab::load(path), v);
}

TEST(Encode, LayoutRule) {
  const Vocab v = Vocab::from_tokens({"a", "b"});
  const EncodedBatch row = encode_pair({{"a"}, {"b"}, 0}, v, 6);
  const std::vector<std::size_t> ids = {v.id("a"), Vocab::kSep, v.id("b"), Vocab::kEos, Vocab::kPad, Vocab::kPad};
  EXPECT_EQ(row.ids, ids);
  EXPECT_EQ(row.condition, (std::vector<std::uint8_t>{1, 1, 0, 0, 0, 0}));
  EXPECT_EQ(row.pad, (std::vector<std::uint8_t>{0, 0, 0, 0, 1, 1}));
  EXPECT_EQ(row.condition_length(0), 2u);
}

TEST(Encode, UnknownTokenBecomesUnk) {
  const Vocab v = Vocab::from_tokens({"a"});
  const EncodedBatch row = encode_pair({{"q"}, {"a"}, 0}, v, 6);
  EXPECT_EQ(row.at(0, 0), Vocab::kUnk);
}

TEST(Encode, ExactFitHasNoPadding) {
  const Vocab v = Vocab::from_tokens({"a", "b"});
  const EncodedBatch row = encode_pair({{"a", "b"}, {"b"}, 0}, v, 5);
  EXPECT_EQ(std::count(row.pad.begin(), row.pad.end(), 1), 0);
}

TEST(Encode, OverflowThrows) {
  const Vocab v = Vocab::from_tokens({"a"});
  EXPECT_THROW(encode_pair({{"a", "a"}, {"a"}, 0}, v, 4), TruncationError);
}

TEST(Encode, EmptySideThrows) {
  const Vocab v = Vocab::from_tokens({"a"});
  EXPECT_THROW(encode_pair({{}, {"a"}, 0}, v, 6), ContractError);
  EXPECT_THROW(encode_pair({{"a"}, {}, 0}, v, 6), ContractError);
}

TEST(Encode, RoundTripAndPrefixProperty) {
  const Vocab v = Vocab::from_tokens({"a", "b", "c", "d"});
  const std::vector<SentencePair> pairs = {
      {{"a", "b"}, {"c"}, 0}, {{"d"}, {"a", "b", "c"}, 0}, {{"c", "c", "c"}, {"d", "d"}, 0}};
  const EncodedBatch batch = encode_batch(pairs, v, 8);
  ASSERT_EQ(batch.batch, 3u);
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const SentencePair back = decode_row(batch, b, v);
    EXPECT_EQ(back.src, pairs[b].src);
    EXPECT_EQ(back.tgt, pairs[b].tgt);
    // condition block, then target block, then padding
    std::size_t i = 0;
    while (i < batch.length && batch.is_condition(b, i)) ++i;
    while (i < batch.length && !batch.is_condition(b, i) && !batch.is_pad(b, i)) ++i;
    while (i < batch.length && batch.is_pad(b, i)) {
      EXPECT_EQ(batch.at(b, i), Vocab::kPad);
      ++i;
    }
    EXPECT_EQ(i, batch.length);
  }
}

TEST(Encode, SourceOnlyRow) {
  const Vocab v = Vocab::from_tokens({"a", "b"});
  const EncodedBatch row = encode_source({"a", "b"}, v, 6);
  EXPECT_EQ(row.condition_length(0), 3u);
  for (std::size_t i = 3; i < 6; ++i) EXPECT_EQ(row.at(0, i), Vocab::kPad);
}

TEST(Jsonl, ParsesPairs) {
  const auto path = temp_file("ok.jsonl", "{\"src\":\"a b\",\"trg\":\"c\"}\n\n{\"src\":\"d\",\"trg\":\"e f\"}\n");
  const auto pairs = load_jsonl(path);
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].src, (TokenList{"a", "b"}));
  EXPECT_EQ(pairs[0].tgt, (TokenList{"c"}));
  EXPECT_EQ(pairs[1].line, 3u);
}

TEST(Jsonl, EmptyFile) { EXPECT_TRUE(load_jsonl(temp_file("empty.jsonl", "")).empty()); }

TEST(Jsonl, MissingTargetNamesLine) {
  const auto path = temp_file("bad.jsonl", "{\"src\":\"a\",\"trg\":\"b\"}\n{\"src\":\"a\"}\n");
  try {
    load_jsonl(path);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos) << e.what();
  }
}

TEST(Jsonl, SaveLoadRoundTrip) {
  const std::vector<SentencePair> pairs = {{{"a", "b"}, {"c"}, 1}, {{"x"}, {"y", "z"}, 2}};
  const auto path = temp_file("round.jsonl", "");
  save_jsonl(path, pairs);
  const auto back = load_jsonl(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].tgt, pairs[1].tgt);
}

TEST(Synthetic, Tasks) {
  RngStream rng(5);
  for (const auto task : {SyntheticTask::copy, SyntheticTask::reverse, SyntheticTask::sort}) {
    const auto pairs = generate_synthetic(task, 50, 16, 3, 8, rng);
    ASSERT_EQ(pairs.size(), 50u);
    for (const auto& p : pairs) {
      ASSERT_GE(p.src.size(), 3u);
      ASSERT_LE(p.src.size(), 8u);
      TokenList expect = p.src;
      if (task == SyntheticTask::reverse) std::reverse(expect.begin(), expect.end());
      if (task == SyntheticTask::sort) {
        // comparison sort on the numeric symbol index
        std::sort(expect.begin(), expect.end(), [](const std::string& a, const std::string& b) {
          return std::stoi(a.substr(1)) < std::stoi(b.substr(1));
        });
      }
      EXPECT_EQ(p.tgt, expect);
    }
  }
}

TEST(Synthetic, SortExample) {
  // w10 sorts after w2 by symbol index, not by string order.
  RngStream rng(0);
  bool seen_multi_digit = false;
  for (const auto& p : generate_synthetic(SyntheticTask::sort, 200, 16, 4, 4, rng)) {
    for (std::size_t i = 1; i < p.tgt.size(); ++i) {
      EXPECT_LE(std::stoi(p.tgt[i - 1].substr(1)), std::stoi(p.tgt[i].substr(1)));
    }
    for (const auto& t : p.tgt) seen_multi_digit = seen_multi_digit || t.size() > 2;
  }
  EXPECT_TRUE(seen_multi_digit);
}

TEST(Synthetic, ParseTask) {
  EXPECT_EQ(parse_task("reverse"), SyntheticTask::reverse);
  EXPECT_EQ(task_name(SyntheticTask::sort), "sort");
  EXPECT_THROW(parse_task("shuffle"), ConfigError);
}
