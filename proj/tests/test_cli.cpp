#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "metadiffub/noise_schedule.hpp"

using namespace metadiffub;
namespace fs = std::filesystem;

namespace {

// Small model so every command finishes in well under a second.
const std::string kTiny =
    " --task sort --set data.synthetic_vocab=6 --set data.min_len=3 --set data.max_src_len=4"
    " --set data.train_size=24 --set data.valid_size=6 --set data.max_len=10"
    " --set model.dim=8 --set model.heads=2 --set model.layers=1 --T 8"
    " --set scheduler.hidden=8 --set train.total_batch=4 --set train.E=2 --set train.period=1"
    " --set train.reward_steps=2";

fs::path work_dir() {
  const fs::path dir = fs::temp_directory_path() / "metadiffub_cli";
  fs::create_directories(dir);
  return dir;
}

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult cli(const std::string& args) {
  const fs::path dir = work_dir();
  const std::string cmd = std::string(METADIFFUB_CLI_PATH) + " " + args + " > " + (dir / "stdout.txt").string() +
                          " 2> " + (dir / "stderr.txt").string();
  CliResult r;
  const int status = std::system(cmd.c_str());
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream o(dir / "stdout.txt"), e(dir / "stderr.txt");
  r.out.assign(std::istreambuf_iterator<char>(o), {});
  r.err.assign(std::istreambuf_iterator<char>(e), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

std::vector<nlohmann::json> jsonl(const fs::path& p) {
  std::vector<nlohmann::json> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

std::vector<std::string> lines(const fs::path& p) {
  std::vector<std::string> out;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// A trained toy run shared by the generation tests.
class CliRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = work_dir() / "shared";
    fs::remove_all(dir_);
    const CliResult r = cli("train" + kTiny + " --epochs 4 --out " + (dir_ / "run").string());
    ASSERT_EQ(r.code, 0) << r.err;
    const CliResult d = cli("make-data" + kTiny + " --out " + (dir_ / "data").string());
    ASSERT_EQ(d.code, 0) << d.err;
  }
  static fs::path exploiter() { return dir_ / "run" / "checkpoints" / "exploiter-4.bin"; }
  static fs::path scheduler() { return dir_ / "run" / "checkpoints" / "scheduler-4.bin"; }
  static fs::path valid() { return dir_ / "data" / "valid.jsonl"; }
  static inline fs::path dir_;
};

}  // namespace

TEST(Cli, TrainZeroEpochsWritesInitialState) {
  const fs::path out = work_dir() / "zero";
  fs::remove_all(out);
  const CliResult r = cli("train" + kTiny + " --epochs 0 --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "config.resolved"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "exploiter-0.bin"));
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "scheduler-0.bin"));
  EXPECT_EQ(std::distance(fs::directory_iterator(out / "checkpoints"), fs::directory_iterator{}), 2);
  EXPECT_NE(slurp(out / "config.resolved").find("diffusion.T=8"), std::string::npos);
}

TEST(Cli, TrainingIsDeterministic) {
  const fs::path a = work_dir() / "det_a", b = work_dir() / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  ASSERT_EQ(cli("train" + kTiny + " --epochs 3 --seed 5 --out " + a.string()).code, 0);
  ASSERT_EQ(cli("train" + kTiny + " --epochs 3 --seed 5 --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a / "log.jsonl"), slurp(b / "log.jsonl"));
  EXPECT_EQ(slurp(a / "checkpoints" / "exploiter-3.bin"), slurp(b / "checkpoints" / "exploiter-3.bin"));
  std::size_t explorations = 0;
  for (const auto& ev : jsonl(a / "log.jsonl")) explorations += ev["event"] == "exploration";
  EXPECT_EQ(explorations, 3u * 2u);
}

TEST(Cli, UnknownConfigKeyRejected) {
  const CliResult r = cli("train --set model.depth=3 --epochs 0 --out " + (work_dir() / "bad").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("error:"), std::string::npos);
  EXPECT_NE(r.err.find("model.depth"), std::string::npos);
}

TEST(Cli, MissingRequiredOptionFails) { EXPECT_NE(cli("generate --src x").code, 0); }

TEST_F(CliRun, GenerateSingleCandidate) {
  const fs::path out = dir_ / "gen1.jsonl";
  const CliResult r = cli("generate" + kTiny + " --mbr 1 --exploiter " + exploiter().string() + " --scheduler " +
                    scheduler().string() + " --src " + valid().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = jsonl(out);
  ASSERT_EQ(rows.size(), 6u);
  for (const auto& row : rows) {
    ASSERT_EQ(row["candidates"].size(), 1u);
    EXPECT_EQ(row["gen"], row["candidates"][0]);
    EXPECT_TRUE(row.contains("trg"));
  }
}

TEST_F(CliRun, GenerateMbrPicksACandidate) {
  const fs::path out = dir_ / "gen3.jsonl";
  const CliResult r = cli("generate" + kTiny + " --mbr 3 --exploiter " + exploiter().string() + " --scheduler " +
                    scheduler().string() + " --src " + valid().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& row : jsonl(out)) {
    ASSERT_EQ(row["candidates"].size(), 3u);
    bool found = false;
    for (const auto& c : row["candidates"]) found = found || c == row["gen"];
    EXPECT_TRUE(found);
  }
}

TEST_F(CliRun, GenerateNeedsExactlyOneNoiseSource) {
  const std::string base = "generate" + kTiny + " --exploiter " + exploiter().string() + " --src " +
                           valid().string() + " --out " + (dir_ / "x.jsonl").string();
  EXPECT_EQ(cli(base).code, 1);
  EXPECT_EQ(cli(base + " --fixed-sqrt --scheduler " + scheduler().string()).code, 1);
}

TEST_F(CliRun, AllTrueSchedulerReproducesFixedSqrtBytes) {
  const fs::path all_true = dir_ / "all_true.bin";
  ASSERT_EQ(cli("init-scheduler --constant true --exploiter " + exploiter().string() + " --out " + all_true.string()).code, 0);
  const fs::path a = dir_ / "scheduled.jsonl", b = dir_ / "fixed.jsonl";
  const std::string common = "generate" + kTiny + " --mbr 3 --seed 7 --exploiter " + exploiter().string() +
                             " --src " + valid().string();
  ASSERT_EQ(cli(common + " --scheduler " + all_true.string() + " --out " + a.string()).code, 0);
  ASSERT_EQ(cli(common + " --fixed-sqrt --out " + b.string()).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_FALSE(slurp(a).empty());
}

TEST_F(CliRun, ExportAllTrueMatchesBaseSchedule) {
  const fs::path all_true = dir_ / "all_true_export.bin";
  ASSERT_EQ(cli("init-scheduler --constant true --exploiter " + exploiter().string() + " --out " + all_true.string()).code, 0);
  const fs::path src = dir_ / "one.txt";
  std::ofstream(src) << "w1 w2 w0\n";
  const fs::path csv = dir_ / "schedule.csv";
  ASSERT_EQ(cli("export-schedule --scheduler " + all_true.string() + " --src " + src.string() + " --out " + csv.string()).code, 0);
  const auto rows = lines(csv);
  ASSERT_EQ(rows.size(), 1u + 8u + 8u);
  EXPECT_EQ(rows[0], "sentence,t,pointer,beta_pointer,alpha_bar_x,beta_eff");
  const BaseSchedule base = build_sqrt_schedule(8);
  for (std::size_t t = 1; t <= 8; ++t) {
    // one sentence: its rows and the mean rows agree
    for (const auto& row : {rows[t], rows[8 + t]}) {
      std::stringstream ss(row);
      std::string sentence, tt, ptr, bp, ab, be;
      std::getline(ss, sentence, ',');
      std::getline(ss, tt, ',');
      std::getline(ss, ptr, ',');
      std::getline(ss, bp, ',');
      std::getline(ss, ab, ',');
      std::getline(ss, be, ',');
      EXPECT_EQ(std::stoul(tt), t);
      EXPECT_NEAR(std::stod(be), base.beta[t], 1e-12);
      EXPECT_NEAR(std::stod(ab), base.alpha_bar[t], 1e-12);
    }
  }
  EXPECT_EQ(rows[9].substr(0, 5), "mean,");
}

TEST_F(CliRun, EvaluateIdentityAndSystems) {
  const fs::path gen = dir_ / "ident.jsonl";
  std::ofstream(gen) << "{\"src\":\"a\",\"gen\":\"a b c d\",\"trg\":\"a b c d\"}\n"
                     << "{\"src\":\"b\",\"gen\":\"x y z w\",\"trg\":\"x y z w\"}\n";
  const fs::path report = dir_ / "ident.json";
  ASSERT_EQ(cli("evaluate --gen " + gen.string() + " --ref " + gen.string() + " --out " + report.string()).code, 0);
  const auto j = nlohmann::json::parse(slurp(report));
  EXPECT_DOUBLE_EQ(j["bleu"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(j["rouge_l"].get<double>(), 1.0);

  const fs::path worse = dir_ / "worse.jsonl";
  std::ofstream(worse) << "{\"gen\":\"a b b b\"}\n{\"gen\":\"x x x x\"}\n";
  const fs::path ranks = dir_ / "ranks.csv";
  const CliResult r = cli("evaluate --system good=" + gen.string() + " --system bad=" + worse.string() + " --ref " +
                    gen.string() + " --rank-csv " + ranks.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto s = nlohmann::json::parse(r.out);
  EXPECT_DOUBLE_EQ(s["mean_rank"]["good"].get<double>(), 1.0);
  // both systems share self-BLEU 0 (disjoint sentences), so bad ties there: (2 + 2 + 2 + 1) / 4
  EXPECT_DOUBLE_EQ(s["mean_rank"]["bad"].get<double>(), 1.75);
  EXPECT_EQ(lines(ranks).front(), "method,metric,value,rank");
}

TEST_F(CliRun, EvaluateRankTable) {
  const fs::path table = dir_ / "table.csv";
  std::ofstream(table) << "method,bleu,rouge_l,bertscore,dist_1,self_bleu:down\n"
                       << "GPT2-base,0.1980,0.5212,0.8246,0.9798,0.5480\n"
                       << "GPT2-large,0.2059,0.5415,0.8363,0.9819,0.7325\n"
                       << "LevT,0.2268,0.5795,0.8344,0.9790,0.9995\n"
                       << "DiffuSeq,0.2413,0.5880,0.8365,0.9807,0.2732\n"
                       << "SeqDiffuSeq,0.2434,-,0.8400,0.9807,-\n"
                       << "Dinoiser,0.1949,0.5316,0.8036,0.9723,0.8643\n"
                       << "Meta-DiffuB,0.2632,0.5933,0.8519,0.9902,0.2595\n";
  const CliResult r = cli("evaluate --table " + table.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out)["mean_rank"];
  EXPECT_NEAR(j["Meta-DiffuB"].get<double>(), 1.00, 0.005);
  EXPECT_NEAR(j["SeqDiffuSeq"].get<double>(), 2.33, 0.005);
  EXPECT_NEAR(j["Dinoiser"].get<double>(), 6.20, 0.005);
}

TEST_F(CliRun, PlugAndPlayReport) {
  const fs::path out = dir_ / "pnp";
  const CliResult r = cli("plug-and-play" + kTiny + " --mbr 1 --scheduler " + scheduler().string() + " --exploiter " +
                    exploiter().string() + " --src " + valid().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("weights unchanged: yes"), std::string::npos);
  const auto rows = lines(out / "report.csv");
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0], "scheduler,exploiter,bleu,rouge_l,dist_1,self_bleu");
  EXPECT_EQ(rows[1].substr(0, 5), "Null,");
  EXPECT_EQ(jsonl(out / "scheduled.jsonl").size(), 6u);
  EXPECT_EQ(jsonl(out / "baseline.jsonl").size(), 6u);
}

TEST_F(CliRun, AnalyzeDifficulty) {
  const fs::path gen = dir_ / "difficulty_gen.jsonl";
  ASSERT_EQ(cli("generate" + kTiny + " --mbr 1 --exploiter " + exploiter().string() + " --scheduler " +
                scheduler().string() + " --src " + valid().string() + " --out " + gen.string())
                .code,
            0);
  const fs::path csv = dir_ / "difficulty.csv";
  const CliResult r = cli("analyze-difficulty --gen " + gen.string() + " --scheduler " + scheduler().string() +
                    " --K 2 --out " + csv.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = lines(csv);
  ASSERT_EQ(rows.size(), 1u + 8u);
  EXPECT_EQ(rows[0], "t,mean_beta_hard,mean_beta_easy");
  EXPECT_EQ(cli("analyze-difficulty --gen " + gen.string() + " --scheduler " + scheduler().string() +
                " --K 4 --out " + csv.string())
                .code,
            1);
}
