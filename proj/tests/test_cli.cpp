#include <gtest/gtest.h>
#include <httplib.h>
#include <sys/wait.h>

#include <chrono>
#include <csignal>
#include <cstdio>
#include <thread>

#include "test_util.hpp"

namespace pvse {
namespace {

using testing::ReadFile;
using testing::TempDir;

struct RunResult {
  int code;
  std::string out;
};

RunResult RunCli(const std::string& args) {
  std::string cmd = std::string(PVSE_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) return {-1, ""};
  std::string out;
  char buf[4096];
  while (std::size_t n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string Q(const fs::path& p) { return "'" + p.string() + "'"; }

std::map<std::string, std::string> Snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = ReadFile(e.path());
  return files;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir;
    ASSERT_EQ(RunCli("synth --out " + Q(Data()) + " --images 64 --tags-per-part 4 --abstract-tags 1 --dim 8").code, 0);
    ASSERT_EQ(RunCli("train --data " + Q(Data()) + " --model " + Q(Model()) + " --epochs 3 --kl 16 --seed 4").code, 0);
  }
  static void TearDownTestSuite() { delete dir_; }
  static fs::path Data() { return *dir_ / "data"; }
  static fs::path Model() { return *dir_ / "model"; }
  static std::string Flags() { return " --data " + Q(Data()) + " --model " + Q(Model()); }
  static TempDir* dir_;
};

TempDir* CliTest::dir_ = nullptr;

TEST(Cli, SynthThenValidate) {
  TempDir dir;
  EXPECT_EQ(RunCli("synth --images 8 --seed 1 --out " + Q(dir / "d")).code, 0);
  EXPECT_EQ(RunCli("validate --data " + Q(dir / "d")).code, 0);
}

TEST(Cli, UsageErrorsExitOne) {
  EXPECT_EQ(RunCli("").code, 1);
  EXPECT_EQ(RunCli("train --no-such-flag").code, 1);
  EXPECT_EQ(RunCli("frobnicate").code, 1);
  EXPECT_EQ(RunCli("train --data x --model y --loss hinge").code, 1);
}

TEST(Cli, DataErrorsExitTwo) {
  TempDir dir;
  EXPECT_EQ(RunCli("validate --data " + Q(dir / "missing")).code, 2);
  EXPECT_EQ(RunCli("eval-tags --data " + Q(dir / "missing") + " --model " + Q(dir / "missing")).code, 2);
}

TEST_F(CliTest, PartsWithoutPositiveTagIsUsageError) {
  EXPECT_EQ(RunCli("retrieve" + Flags() + " --query-image img00000 --parts upper-body").code, 1);
}

TEST_F(CliTest, TrainWritesTraceAndModel) {
  std::string trace = ReadFile(Model() / "trace.csv");
  EXPECT_EQ(trace.substr(0, trace.find('\n')), "epoch,batch,lr,loss");
  EXPECT_TRUE(fs::exists(Model() / "model.json"));
  EXPECT_TRUE(fs::exists(Model() / "weights.bin"));
}

TEST_F(CliTest, TrainIsDeterministic) {
  TempDir other;
  ASSERT_EQ(RunCli("train --data " + Q(Data()) + " --model " + Q(other / "m") + " --epochs 3 --kl 16 --seed 4").code, 0);
  EXPECT_EQ(ReadFile(other / "m" / "weights.bin"), ReadFile(Model() / "weights.bin"));
  EXPECT_EQ(ReadFile(other / "m" / "trace.csv"), ReadFile(Model() / "trace.csv"));
}

TEST_F(CliTest, QueriesDoNotMutateDataset) {
  auto before = Snapshot(Data());
  EXPECT_EQ(RunCli("eval-tags" + Flags() + " --ratio 2 --repeats 2 --m 5").code, 0);
  EXPECT_EQ(RunCli("eval-regions" + Flags()).code, 0);
  EXPECT_EQ(RunCli("retrieve" + Flags() + " --query-image img00000 --pos-tag head-01").code, 0);
  EXPECT_EQ(RunCli("validate" + Flags()).code, 0);
  EXPECT_EQ(Snapshot(Data()), before);
}

TEST_F(CliTest, RetrieveJsonShape) {
  RunResult r = RunCli("retrieve --json" + Flags() + " --query-image img00003 --pos-tag head-01 --parts head --top 3");
  ASSERT_EQ(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["query"], "img00003");
  EXPECT_EQ(j["results"].size(), 3u);
  EXPECT_EQ(RunCli("retrieve" + Flags() + " --query-image img00003 --pos-tag nope").code, 2);
  EXPECT_EQ(RunCli("retrieve" + Flags() + " --query-image img00003 --pos-tag head-01 --parts tail").code, 1);
}

TEST_F(CliTest, EvalOutputsCsvAndJson) {
  RunResult csv = RunCli("eval-tags" + Flags() + " --tags head-00,shoes-01 --ratio 2 --repeats 2 --m 5,10");
  ASSERT_EQ(csv.code, 0);
  EXPECT_EQ(csv.out.substr(0, csv.out.find('\n')), "tag,P@5,P@10,N@5,N@10");
  RunResult js = RunCli("eval-regions --json" + Flags());
  ASSERT_EQ(js.code, 0);
  EXPECT_EQ(nlohmann::json::parse(js.out)["categories"].size(), 4u);
  TempDir out;
  EXPECT_EQ(RunCli("eval-tags" + Flags() + " --ratio 2 --repeats 2 --m 5 --out " + Q(out / "t.csv")).code, 0);
  EXPECT_TRUE(fs::exists(out / "t.csv"));
}

TEST_F(CliTest, AamAndReorder) {
  RunResult aam = RunCli("aam --json" + Flags() + " --image img00001 --tag head-00");
  ASSERT_EQ(aam.code, 0);
  auto j = nlohmann::json::parse(aam.out);
  EXPECT_EQ(j["scores"].size(), 8u);
  RunResult re = RunCli("reorder --json" + Flags() + " --tag head-00 --parts Head");
  ASSERT_EQ(re.code, 0);
  EXPECT_EQ(nlohmann::json::parse(re.out)["results"].size(), 16u);
}

TEST_F(CliTest, AblationRunsEveryVariant) {
  RunResult r = RunCli("ablate-loss --data " + Q(Data()) + " --epochs 1 --kl 8 --ratio 2 --repeats 1 --tags head-00");
  ASSERT_EQ(r.code, 0);
  for (const char* v : {"triplet", "npair", "single_angular", "batch_angular", "npair_angular"})
    EXPECT_NE(r.out.find(std::string("\n") + v + ","), std::string::npos) << v;
}

TEST_F(CliTest, ServeAnswersHttp) {
  const int port = 18000 + static_cast<int>(::getpid() % 1000);
  TempDir run;
  std::string cmd = std::string(PVSE_CLI_PATH) + " serve" + Flags() + " --port " + std::to_string(port) +
                    " --cors http://console.example >/dev/null 2>&1 & echo $! > " + Q(run / "pid");
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  pid_t pid = std::stoi(ReadFile(run / "pid"));

  httplib::Client client("127.0.0.1", port);
  httplib::Result meta;
  for (int attempt = 0; attempt < 100 && !meta; ++attempt) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    meta = client.Get("/api/meta");
  }
  ASSERT_TRUE(meta) << "server did not come up";
  EXPECT_EQ(meta->status, 200);
  EXPECT_EQ(nlohmann::json::parse(meta->body)["image_ids"].size(), 64u);

  nlohmann::json body = {{"query_image_id", "img00002"}, {"pos_tags", {"head-01"}}, {"top_m", 5}};
  auto a = client.Post("/api/retrieve", {{"Origin", "http://console.example"}}, body.dump(), "application/json");
  auto b = client.Post("/api/retrieve", body.dump(), "application/json");
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->status, 200);
  EXPECT_EQ(a->body, b->body);
  EXPECT_EQ(a->get_header_value("Access-Control-Allow-Origin"), "http://console.example");
  EXPECT_FALSE(b->has_header("Access-Control-Allow-Origin"));

  auto missing = client.Get("/api/aam/img00002?tag=nope");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  EXPECT_EQ(nlohmann::json::parse(missing->body)["error"], "unknown_tag");

  ::kill(pid, SIGTERM);
}

}  // namespace
}  // namespace pvse
