#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "metadiffub/checkpoint.hpp"
#include "metadiffub/errors.hpp"

using namespace metadiffub;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "metadiffub_checkpoint";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Exploiter small_exploiter() {
  ExploiterConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.dim = 4;
  cfg.T = 6;
  cfg.max_len = 6;
  cfg.lambda = 0.5;
  cfg.schedule_s = 2e-4;
  RngStream rng(3);
  return init_exploiter(cfg, Vocab::from_tokens({"x", "y", "z"}), rng);
}

Scheduler small_scheduler() {
  SchedulerConfig cfg;
  cfg.dim = 4;
  cfg.hidden = 5;
  cfg.T = 6;
  cfg.init_bias = 1.5;
  RngStream rng(4);
  return init_scheduler(cfg, Vocab::from_tokens({"x", "y"}), rng);
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST(Checkpoint, ExploiterRoundTripIsBitExact) {
  const Exploiter m = small_exploiter();
  const auto path = temp_path("exploiter.bin");
  save_exploiter(path, m, "sort-v16");
  std::string tag;
  const Exploiter back = load_exploiter(path, &tag);
  EXPECT_EQ(tag, "sort-v16");
  EXPECT_EQ(back.params, m.params);
  EXPECT_EQ(back.params.checksum(), m.params.checksum());
  EXPECT_EQ(back.vocab, m.vocab);
  EXPECT_EQ(back.config.T, 6u);
  EXPECT_EQ(back.config.lambda, 0.5);
  EXPECT_EQ(back.config.schedule_s, 2e-4);
  // writing the loaded model reproduces the file byte for byte
  const auto again = temp_path("exploiter2.bin");
  save_exploiter(again, back, "sort-v16");
  EXPECT_EQ(read_bytes(path), read_bytes(again));
}

TEST(Checkpoint, SchedulerRoundTripIsBitExact) {
  const Scheduler s = small_scheduler();
  const auto path = temp_path("scheduler.bin");
  save_scheduler(path, s, "copy-v8");
  std::string tag;
  const Scheduler back = load_scheduler(path, &tag);
  EXPECT_EQ(tag, "copy-v8");
  EXPECT_EQ(back.params, s.params);
  EXPECT_EQ(back.vocab, s.vocab);
  EXPECT_EQ(back.config.hidden, 5u);
  EXPECT_EQ(back.config.init_bias, 1.5);
}

TEST(Checkpoint, WrongKindRejected) {
  const auto path = temp_path("kind.bin");
  save_scheduler(path, small_scheduler(), "t");
  EXPECT_THROW(load_exploiter(path), ParseError);
}

TEST(Checkpoint, BadMagicRejected) {
  const auto path = temp_path("magic.bin");
  save_exploiter(path, small_exploiter(), "t");
  std::string bytes = read_bytes(path);
  bytes[0] = 'X';
  write_bytes(path, bytes);
  EXPECT_THROW(read_checkpoint(path), ParseError);
}

TEST(Checkpoint, WrongVersionRejected) {
  const auto path = temp_path("version.bin");
  save_exploiter(path, small_exploiter(), "t");
  std::string bytes = read_bytes(path);
  bytes[4] = static_cast<char>(kCheckpointVersion + 1);
  write_bytes(path, bytes);
  EXPECT_THROW(read_checkpoint(path), ParseError);
}

TEST(Checkpoint, TruncationAndTrailingBytesRejected) {
  const auto path = temp_path("trunc.bin");
  save_exploiter(path, small_exploiter(), "t");
  const std::string bytes = read_bytes(path);
  write_bytes(path, bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(path), ParseError);
  write_bytes(path, bytes + "xx");
  EXPECT_THROW(read_checkpoint(path), ParseError);
}

TEST(Checkpoint, MissingFileRejected) {
  EXPECT_THROW(read_checkpoint(temp_path("does-not-exist.bin")), ParseError);
}
