// Subcommands through the real binary (exit codes, files) and in-process.
#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "app.hpp"
#include "test_support.hpp"
#include "voxdiff/phantom.hpp"
#include "voxdiff/volume.hpp"

using namespace voxdiff;
namespace fs = std::filesystem;

namespace {

const std::string kTinyNet =
    " --set unet.channel_widths=[4,8,8,8] --set unet.time_embed_dim=8 --set unet.groups=4"
    " --set train.checkpoint_every=2 --set train.lr=0.002";

struct Result {
  int code;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Result sh(const std::string& args, const fs::path& scratch) {
  const auto out = scratch / "stdout.txt", err = scratch / "stderr.txt";
  const std::string cmd = std::string(VOXDIFF_BIN) + " " + args + " >" + out.string() + " 2>" + err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

Result in_process(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return files;
}

int csv_rows(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  int n = -1;  // header
  while (std::getline(in, line)) ++n;
  return n;
}

class Cli : public ::testing::Test {
 protected:
  vtest::TempDir tmp{"cli"};
  fs::path p(const std::string& name) const { return tmp.path() / name; }
  std::string q(const std::string& name) const { return p(name).string(); }

  void small_dataset(const std::string& name) {
    ASSERT_EQ(sh("gen-data --out " + q(name) + " --seed 3 --set phantom.counts=[8,8,8]", tmp.path()).code, 0);
  }
};

}  // namespace

TEST_F(Cli, GenDataIsByteDeterministic) {
  ASSERT_EQ(sh("gen-data --out " + q("d1") + " --seed 1", tmp.path()).code, 0);
  ASSERT_EQ(sh("gen-data --out " + q("d2") + " --seed 1", tmp.path()).code, 0);
  const auto a = tree(p("d1")), b = tree(p("d2"));
  EXPECT_EQ(a.size(), 120u * 2 + 2);  // volumes + manifest + run_config
  EXPECT_EQ(a, b);
  EXPECT_TRUE(a.contains("run_config.json"));
  EXPECT_TRUE(a.contains("test/A0000_targ.vvol") || a.contains("train/A0000_targ.vvol") ||
              a.contains("val/A0000_targ.vvol"));
}

TEST_F(Cli, MissingOutIsUsageError) {
  const auto r = sh("gen-data --seed 1", tmp.path());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_NE(r.err.find("--out"), std::string::npos);
  EXPECT_EQ(in_process({}).code, 2);
  EXPECT_EQ(in_process({"frobnicate"}).code, 2);
  EXPECT_EQ(in_process({"--help"}).code, 0);
}

TEST_F(Cli, BadConfigKeysAreUsageErrors) {
  EXPECT_EQ(in_process({"gen-data", "--out", q("x"), "--set", "phantom.nope=1"}).code, 2);
  EXPECT_EQ(in_process({"gen-data", "--out", q("x"), "--set", "phantom.dims=20"}).code, 2);
  std::ofstream(p("bad.json")) << "{ not json";
  EXPECT_EQ(in_process({"gen-data", "--out", q("x"), "--config", q("bad.json")}).code, 2);
}

TEST_F(Cli, ConfigFileAcceptsNestedAndFlatKeys) {
  std::ofstream(p("cfg.json")) << R"({"phantom": {"counts": [8, 9, 10]}, "data.seed": 4})";
  const auto r = in_process({"gen-data", "--out", q("d"), "--config", q("cfg.json")});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_manifest(p("d") / "manifest.csv").size(), 27u);
  EXPECT_NE(slurp(p("d") / "run_config.json").find("\"data.seed\": 4"), std::string::npos);
}

TEST_F(Cli, PaperRatioCounts) {
  const auto r = in_process({"gen-data", "--out", q("d"), "--counts", "paper-ratio", "--total", "90"});
  ASSERT_EQ(r.code, 0) << r.err;
  int n[3] = {};
  for (const auto& e : read_manifest(p("d") / "manifest.csv")) n[group_index(e.group)]++;
  EXPECT_EQ(n[0], 28);
  EXPECT_EQ(n[1], 42);
  EXPECT_EQ(n[2], 20);
  EXPECT_EQ(in_process({"gen-data", "--out", q("e"), "--counts", "paper-ratio"}).code, 2);
}

TEST_F(Cli, TrainWritesCheckpointsAndOneRowPerEpoch) {
  small_dataset("d");
  const auto r = sh("train --data " + q("d") + " --out " + q("run") + " --epochs 3 --seed 1" + kTinyNet, tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(csv_rows(p("run") / "loss.csv"), 3);
  for (const char* d : {"best", "final", "last"}) EXPECT_TRUE(fs::exists(p("run") / d / "params.prm")) << d;
  EXPECT_TRUE(fs::exists(p("run") / "run_config.json"));
}

TEST_F(Cli, TrainIsDeterministicAndResumable) {
  small_dataset("d");
  const std::string base = "train --data " + q("d") + " --seed 1" + kTinyNet;
  ASSERT_EQ(sh(base + " --out " + q("a") + " --epochs 4", tmp.path()).code, 0);
  ASSERT_EQ(sh(base + " --out " + q("b") + " --epochs 4", tmp.path()).code, 0);
  EXPECT_EQ(slurp(p("a") / "loss.csv"), slurp(p("b") / "loss.csv"));
  EXPECT_EQ(slurp(p("a") / "final" / "params.prm"), slurp(p("b") / "final" / "params.prm"));

  ASSERT_EQ(sh(base + " --out " + q("c") + " --epochs 2", tmp.path()).code, 0);
  const auto r = sh(base + " --out " + q("c") + " --epochs 4 --resume " + q("c/final"), tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(p("a") / "loss.csv"), slurp(p("c") / "loss.csv"));
  EXPECT_EQ(slurp(p("a") / "final" / "params.prm"), slurp(p("c") / "final" / "params.prm"));
}

TEST_F(Cli, CorruptOrMismatchedCheckpointExits4) {
  small_dataset("d");
  const std::string base = "train --data " + q("d") + " --seed 1" + kTinyNet;
  ASSERT_EQ(sh(base + " --out " + q("a") + " --epochs 1", tmp.path()).code, 0);
  // Different architecture.
  EXPECT_EQ(sh("train --data " + q("d") + " --out " + q("x") + " --epochs 2 --resume " + q("a/final"), tmp.path()).code, 4);
  // Truncated weights.
  fs::resize_file(p("a/final/params.prm"), 100);
  EXPECT_EQ(sh(base + " --out " + q("y") + " --epochs 2 --resume " + q("a/final"), tmp.path()).code, 4);
  EXPECT_EQ(sh("synthesize --checkpoint " + q("a/final") + " --out " + q("s") + " " + q("d/test"), tmp.path()).code, 4);
}

TEST_F(Cli, DivergentTrainingExits3) {
  small_dataset("d");
  const auto r = sh("train --data " + q("d") + " --out " + q("a") + " --epochs 2 --lr 1e30" + kTinyNet, tmp.path());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("non-finite gradient"), std::string::npos);
}

TEST_F(Cli, SynthesizeNamingDeterminismAndShapeGate) {
  small_dataset("d");
  ASSERT_EQ(sh("train --data " + q("d") + " --out " + q("run") + " --epochs 1 --seed 1" + kTinyNet, tmp.path()).code, 0);
  const auto ckpt = q("run/final");
  const auto tests = read_manifest(p("d") / "manifest.csv");
  std::vector<std::string> inputs;
  for (const auto& e : tests) {
    if (inputs.size() < 3) inputs.push_back(condition_path(p("d"), e).string());
  }
  const std::string files = inputs[0] + " " + inputs[1] + " " + inputs[2];
  ASSERT_EQ(sh("synthesize --T 5 --checkpoint " + ckpt + " --out " + q("s1") + " --seed 9 " + files, tmp.path()).code, 4)
      << "T must match the checkpoint";
  ASSERT_EQ(sh("synthesize --checkpoint " + ckpt + " --out " + q("s1") + " --seed 9 " + files, tmp.path()).code, 0);
  ASSERT_EQ(sh("synthesize --checkpoint " + ckpt + " --out " + q("s2") + " --seed 9 " + files, tmp.path()).code, 0);
  for (const auto& in : inputs) {
    const auto name = fs::path(in).stem().string() + "_synth.vvol";
    ASSERT_TRUE(fs::exists(p("s1") / name)) << name;
    EXPECT_EQ(slurp(p("s1") / name), slurp(p("s2") / name));
    const auto synth = load_volume(p("s1") / name);
    for (float v : synth.data()) ASSERT_TRUE(std::isfinite(v));
  }
  EXPECT_EQ(std::distance(fs::directory_iterator(p("s1")), fs::directory_iterator{}), 4);  // + run_config.json

  save_volume(Volume3D({16, 16, 8}, {}, std::vector<float>(16 * 16 * 8, 0.5f)), p("odd.vvol"));
  EXPECT_EQ(sh("synthesize --checkpoint " + ckpt + " --out " + q("s3") + " " + q("odd.vvol"), tmp.path()).code, 2);
}

TEST_F(Cli, EvaluateSelfComparison) {
  small_dataset("d");
  const auto r = sh("evaluate --ref " + q("d") + " --synth " + q("d") + " --out " + q("ev"), tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("infinite PSNR"), std::string::npos);
  const auto pairs = slurp(p("ev") / "pairs.csv");
  EXPECT_EQ(pairs.substr(0, pairs.find('\n')), "pair_id,group,ssim,psnr");
  std::istringstream rows(pairs);
  std::string line;
  std::getline(rows, line);
  int n = 0;
  while (std::getline(rows, line)) {
    ++n;
    EXPECT_NE(line.find(",1,inf"), std::string::npos) << line;
  }
  EXPECT_EQ(n, 3);  // one test pair per group of 8
  const auto agg = slurp(p("ev") / "aggregate.csv");
  EXPECT_EQ(agg.substr(0, agg.find('\n')), "group,metric,mean,ci95_half,n");
  const auto table = slurp(p("ev") / "table.txt");
  EXPECT_LT(table.find("GroupA"), table.find("GroupB"));
  EXPECT_LT(table.find("GroupB"), table.find("GroupC"));
  EXPECT_TRUE(fs::exists(p("ev") / "run_config.json"));
}

TEST_F(Cli, EvaluateListsUnmatchedIds) {
  small_dataset("d");
  fs::create_directories(p("empty"));
  const auto r = sh("evaluate --ref " + q("d") + " --synth " + q("empty") + " --out " + q("ev"), tmp.path());
  EXPECT_EQ(r.code, 2);
  for (const auto& e : read_manifest(p("d") / "manifest.csv")) {
    if (e.split == Split::Test) EXPECT_NE(r.err.find(e.pair_id), std::string::npos) << e.pair_id;
  }
}

TEST_F(Cli, HeterogeneityMapsAndPgm) {
  ASSERT_EQ(sh("gen-data --out " + q("d") + " --seed 1", tmp.path()).code, 0);
  const auto r = sh("heterogeneity --data " + q("d") + " --out " + q("h"), tmp.path());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* g : {"GroupA", "GroupB", "GroupC"}) {
    EXPECT_TRUE(fs::exists(p("h") / (std::string(g) + "_std.vvol")));
    const auto pgm = slurp(p("h") / (std::string(g) + "_std_mid.pgm"));
    EXPECT_EQ(pgm.substr(0, 3), "P5\n");
    EXPECT_NE(pgm.find("\n255\n"), std::string::npos);
  }
  auto mean = [&](const char* g) {
    const auto v = load_volume(p("h") / (std::string(g) + "_std.vvol"));
    double s = 0;
    for (float x : v.data()) s += x;
    return s / static_cast<double>(v.size());
  };
  EXPECT_GT(mean("GroupC"), mean("GroupA"));
}

TEST_F(Cli, HeterogeneityZeroForIdenticalAnatomy) {
  // Hand-built dataset: every GroupA subject shares one anatomy seed.
  Dataset ds;
  PhantomConfig cfg;
  for (int i = 0; i < 4; ++i) {
    auto pair = generate_pair(GroupLabel::A, 4242, cfg);
    pair.pair_id = "A000" + std::to_string(i);
    ds.manifest.push_back({pair.pair_id, GroupLabel::A, Split::Train, 4242});
    ds.pairs.push_back(std::move(pair));
  }
  write_dataset(ds, p("d"));
  ASSERT_EQ(sh("heterogeneity --data " + q("d") + " --group GroupA --out " + q("h"), tmp.path()).code, 0);
  const auto map = load_volume(p("h") / "GroupA_std.vvol");
  for (float v : map.data()) ASSERT_EQ(v, 0.0f);
  EXPECT_EQ(sh("heterogeneity --data " + q("d") + " --group GroupB --out " + q("h2"), tmp.path()).code, 2);
}
