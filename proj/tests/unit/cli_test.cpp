#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "medic/data.hpp"
#include "medic/image_io.hpp"

namespace fs = std::filesystem;
using medic::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "medic");
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    root_ = fs::temp_directory_path() /
            ("medic_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(root_);
    fs::create_directories(root_);
  }
  void TearDown() override { fs::remove_all(root_); }
  std::string dir(const std::string& name) const { return (root_ / name).string(); }

  fs::path root_;
};

const std::vector<std::string> kTinyCls = {"--task", "cls", "--model", "medic", "--involutions", "1",
                                           "--data", "synth", "--samples", "40", "--epochs", "2",
                                           "--seed", "0"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(ConfigTextTest, CommentsAndWhitespace) {
  const auto v = medic::cli::parse_config_text("# header\n  epochs = 3  # trailing\n\nlr=0.5\n");
  EXPECT_EQ(v.at("epochs"), "3");
  EXPECT_EQ(v.at("lr"), "0.5");
  EXPECT_EQ(v.size(), 2u);
  EXPECT_EQ(medic::cli::parse_config_text(medic::cli::format_config(v)), v);
}

TEST_F(CliTest, ParamCountPrintsPublishedTotal) {
  const Result r = invoke({"param-count", "--model", "medic-seg", "--involutions", "0"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("total = 6988113"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("enc1_conv1"), std::string::npos);
}

TEST_F(CliTest, GradCheckAllPasses) {
  const Result r = invoke({"grad-check", "--all", "--seeds", "3"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos);
}

TEST_F(CliTest, GradCheckUnknownOpIsConfigError) {
  EXPECT_EQ(invoke({"grad-check", "--op", "nope"}).code, 1);
}

TEST_F(CliTest, TrainWritesRunDirectory) {
  const Result r = invoke(with(with({"train"}, kTinyCls), {"--run-dir", dir("run")}));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"model.ckpt", "history.csv", "metrics.txt", "resolved-config.txt"}) {
    EXPECT_TRUE(fs::exists(root_ / "run" / f)) << f;
  }
  // Header, two train/val row pairs, one test row.
  EXPECT_EQ(count_lines(slurp(root_ / "run" / "history.csv")), 6u);
  EXPECT_NE(r.out.find("epochs = 2"), std::string::npos);
  EXPECT_NE(slurp(root_ / "run" / "resolved-config.txt").find("\ncommand = train\n"), std::string::npos);
}

TEST_F(CliTest, TimestampedRunDirectoriesDoNotCollide) {
  ASSERT_EQ(invoke(with(with({"train"}, kTinyCls), {"--out", dir("runs"), "--tag", "t"})).code, 0);
  ASSERT_EQ(invoke(with(with({"train"}, kTinyCls), {"--out", dir("runs"), "--tag", "t"})).code, 0);
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(root_ / "runs")) n += e.path().filename().string().find("-t") != std::string::npos;
  EXPECT_EQ(n, 2u);
}

TEST_F(CliTest, ResolvedConfigReproducesTheRun) {
  ASSERT_EQ(invoke(with(with({"train"}, kTinyCls), {"--run-dir", dir("a")})).code, 0);
  const Result r = invoke({"train", "--config", dir("a") + "/resolved-config.txt", "--run-dir", dir("b")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(root_ / "a" / "model.ckpt"), slurp(root_ / "b" / "model.ckpt"));
  EXPECT_EQ(slurp(root_ / "a" / "history.csv"), slurp(root_ / "b" / "history.csv"));
}

TEST_F(CliTest, FlagsOverrideConfigFile) {
  std::ofstream(root_ / "c.txt") << "epochs = 5\nsamples = 40\n# comment\nlr = 0.001\n";
  const Result r = invoke({"train", "--config", dir("c.txt"), "--epochs", "1", "--run-dir", dir("run")});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string resolved = slurp(root_ / "run" / "resolved-config.txt");
  EXPECT_NE(resolved.find("epochs = 1\n"), std::string::npos);
  EXPECT_NE(resolved.find("lr = 0.001\n"), std::string::npos);
}

TEST_F(CliTest, ExitCodesPartitionFailures) {
  EXPECT_EQ(invoke({"train", "--lr", "abc"}).code, 1);
  EXPECT_EQ(invoke({"train", "--model", "cnn", "--task", "seg"}).code, 1);
  EXPECT_EQ(invoke({"train", "--frobnicate"}).code, 1);
  std::ofstream(root_ / "bad.txt") << "no_such_key = 1\n";
  EXPECT_EQ(invoke({"train", "--config", dir("bad.txt")}).code, 1);
  EXPECT_EQ(invoke({"train", "--data", "dir:" + dir("missing"), "--out", dir("runs")}).code, 2);
  EXPECT_EQ(invoke({"eval", "--checkpoint", dir("missing.ckpt"), "--out", dir("runs")}).code, 2);
  const Result r = invoke(with(with({"train"}, kTinyCls), {"--lr", "1e300", "--run-dir", dir("nan")}));
  EXPECT_EQ(r.code, 3) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "nan" / "abort.ckpt"));
  EXPECT_EQ(invoke({"--help"}).code, 0);
}

TEST_F(CliTest, EvalReportsMetrics) {
  ASSERT_EQ(invoke(with(with({"train"}, kTinyCls), {"--run-dir", dir("t")})).code, 0);
  const Result r = invoke({"eval", "--checkpoint", dir("t") + "/model.ckpt", "--samples", "40", "--run-dir", dir("e")});
  ASSERT_EQ(r.code, 0) << r.err;
  // Same data, split and model as the training run's test evaluation.
  EXPECT_EQ(slurp(root_ / "e" / "metrics.txt"), slurp(root_ / "t" / "metrics.txt"));
}

TEST_F(CliTest, ExplainWritesOneHeatmap) {
  const auto sample = medic::data::synth_blobs(medic::data::Task::cls, 1, 28, 3)[0];
  medic::io::write_pnm(root_ / "img.ppm", sample.input);
  const Result r = invoke({"explain", "--method", "kernel-map", "--layer", "inv1", "--input", dir("img.ppm"),
                          "--run-dir", dir("x")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(root_ / "x" / "img_inv1_kernel-map.pgm"));
  const Result g = invoke({"explain", "--method", "grad-cam", "--layer", "conv1", "--input", dir("img.ppm"),
                          "--palette", "viridis", "--run-dir", dir("y")});
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_TRUE(fs::exists(root_ / "y" / "img_conv1_grad-cam.ppm"));
  EXPECT_EQ(invoke({"explain", "--layer", "conv1", "--input", dir("img.ppm"), "--run-dir", dir("z")}).code, 1);
}

TEST_F(CliTest, ClassificationAblationTable) {
  const std::vector<std::string> args{"ablate", "--task", "cls", "--samples", "30", "--epochs", "1"};
  ASSERT_EQ(invoke(with(args, {"--run-dir", dir("a")})).code, 0);
  ASSERT_EQ(invoke(with(args, {"--run-dir", dir("b")})).code, 0);
  const std::string csv = slurp(root_ / "a" / "ablation.csv");
  EXPECT_EQ(csv, slurp(root_ / "b" / "ablation.csv"));
  EXPECT_EQ(count_lines(csv), 6u);
  for (const char* row : {"hybrid-1,", "hybrid-2,", "hybrid-3,", "cnn,", "inn,"}) {
    EXPECT_NE(csv.find(row), std::string::npos) << row;
  }
  EXPECT_TRUE(fs::exists(root_ / "a" / "ablation.txt"));
}

TEST_F(CliTest, SegmentationAblationParamsStepByConstantDelta) {
  const Result r = invoke({"ablate", "--task", "seg", "--samples", "12", "--image-size", "32", "--width-divisor", "8",
                          "--epochs", "1", "--run-dir", dir("s")});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(slurp(root_ / "s" / "ablation.csv"));
  std::string line;
  std::getline(csv, line);
  std::vector<std::pair<std::string, long>> rows;
  while (std::getline(csv, line)) {
    const auto a = line.find(','), b = line.find(',', a + 1);
    rows.emplace_back(line.substr(0, a), std::stol(line.substr(a + 1, b - a - 1)));
  }
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[2].first, "hybrid-1");
  EXPECT_EQ(rows[2].second - rows[0].second, 26);
  EXPECT_EQ(rows[3].second - rows[2].second, 26);
  EXPECT_EQ(rows[4].second - rows[3].second, 26);
}
