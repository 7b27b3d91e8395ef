#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <limits>

#include "test_support.hpp"
#include "voxdiff/error.hpp"
#include "voxdiff/trainer.hpp"

using namespace voxdiff;

namespace {

UNetConfig tiny_net() {
  UNetConfig c;
  c.channel_widths = {4, 8, 8, 8};
  c.time_embed_dim = 8;
  c.groups = 4;
  return c;
}

struct Splits {
  std::vector<PairedSample> train, val, test;
};

Splits phantom_splits(int per_group, std::uint64_t seed) {
  PhantomConfig pc;
  pc.counts = {per_group, per_group, per_group};
  const auto ds = generate_dataset(pc, seed);
  Splits s;
  for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
    const auto sp = ds.manifest[i].split;
    (sp == Split::Train ? s.train : sp == Split::Val ? s.val : s.test).push_back(ds.pairs[i]);
  }
  return s;
}

TrainConfig small_cfg(int epochs) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 4;
  c.adam.lr = 2e-3;
  c.seed = 11;
  c.checkpoint_every = 2;
  return c;
}

std::vector<EpochRecord> run(const Splits& s, const TrainConfig& cfg, const NoiseSchedule& sched) {
  SeededRng init(5);
  UNet<float> net(tiny_net(), init);
  TrainState st;
  train(net, s.train, s.val, sched, cfg, st);
  return st.history;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.patch = {16, 16, 24};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(TrainConfig::paper_scale().epochs, 2500);
  EXPECT_EQ(TrainConfig::paper_scale().patch, (Dims3{64, 64, 64}));
}

TEST(Train, EmptyDatasetAndOversizedPatchRejected) {
  const auto s = phantom_splits(8, 1);
  const auto sched = make_linear_schedule({});
  SeededRng init(1);
  UNet<float> net(tiny_net(), init);
  TrainState st;
  EXPECT_THROW(train(net, {}, s.val, sched, small_cfg(1), st), ConfigError);
  auto big = small_cfg(1);
  big.patch = {32, 32, 32};
  EXPECT_THROW(train(net, s.train, s.val, sched, big, st), ConfigError);
  auto zero = small_cfg(1);
  zero.epochs = 0;
  EXPECT_THROW(train(net, s.train, s.val, sched, zero, st), ConfigError);
}

TEST(ValidationGrid, QuarterPoints) {
  EXPECT_EQ(validation_steps(50), (std::vector<int>{1, 12, 25, 37, 50}));
  EXPECT_EQ(validation_steps(1000), (std::vector<int>{1, 250, 500, 750, 1000}));
  EXPECT_EQ(validation_steps(2), (std::vector<int>{1, 2}));
}

TEST(Train, SameSeedSameHistory) {
  const auto s = phantom_splits(8, 2);
  const auto sched = make_linear_schedule({});
  const auto cfg = small_cfg(3);
  const auto a = run(s, cfg, sched);
  const auto b = run(s, cfg, sched);
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a[0].val_loss.has_value());
  EXPECT_TRUE(a[1].val_loss.has_value());
  EXPECT_TRUE(a[2].val_loss.has_value());  // final epoch
}

TEST(Train, ResumeReproducesUninterruptedRun) {
  const auto s = phantom_splits(8, 3);
  const auto sched = make_linear_schedule({});
  const auto straight = run(s, small_cfg(4), sched);

  vtest::TempDir tmp("resume");
  {
    SeededRng init(5);
    UNet<float> net(tiny_net(), init);
    TrainState st;
    TrainOptions o;
    o.out_dir = tmp.path();
    train(net, s.train, s.val, sched, small_cfg(2), st, o);
  }
  SeededRng other(99);  // weights come from the checkpoint
  UNet<float> net(tiny_net(), other);
  auto st = load_checkpoint(tmp.path() / "final", net, sched);
  EXPECT_EQ(st.epoch, 2);
  train(net, s.train, s.val, sched, small_cfg(4), st);
  EXPECT_EQ(st.history, straight);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto s = phantom_splits(8, 4);
  const auto sched = make_linear_schedule({});
  SeededRng init(5);
  UNet<float> net(tiny_net(), init);
  TrainState st;
  train(net, s.train, s.val, sched, small_cfg(2), st);

  vtest::TempDir tmp("ckpt");
  save_checkpoint(tmp.path(), net, sched, st);
  SeededRng other(6);
  UNet<float> copy(tiny_net(), other);
  const auto back = load_checkpoint(tmp.path(), copy, sched);
  for (const auto& [name, e] : net.params().entries()) {
    const auto& v = copy.params().get(name)->value;
    ASSERT_EQ(std::memcmp(v.data(), e.var->value.data(), v.size() * sizeof(float)), 0) << name;
  }
  EXPECT_EQ(back.optimizer, st.optimizer);
  EXPECT_EQ(back.history, st.history);
  EXPECT_EQ(back.epoch, st.epoch);
  EXPECT_EQ(back.initial_val, st.initial_val);
  EXPECT_EQ(back.best_val, st.best_val);
  EXPECT_EQ(back.best_epoch, st.best_epoch);
  EXPECT_EQ(checkpoint_schedule_length(tmp.path()), 50);
}

TEST(Checkpoint, MismatchesAreRejected) {
  const auto sched = make_linear_schedule({});
  SeededRng init(1);
  UNet<float> net(tiny_net(), init);
  vtest::TempDir tmp("mismatch");
  save_checkpoint(tmp.path(), net, sched, TrainState{});

  SeededRng r2(1);
  auto wider = build_unet({}, r2);
  EXPECT_THROW(load_checkpoint(tmp.path(), wider, sched), CheckpointMismatch);
  EXPECT_THROW(load_checkpoint(tmp.path(), net, make_linear_schedule({40, 1e-4, 0.02})), CheckpointMismatch);

  // Truncated weights file.
  const auto prm = tmp.path() / "params.prm";
  const auto size = std::filesystem::file_size(prm);
  std::filesystem::resize_file(prm, size / 2);
  EXPECT_THROW(load_checkpoint(tmp.path(), net, sched), CheckpointMismatch);

  EXPECT_THROW(load_checkpoint(tmp.path() / "missing", net, sched), CheckpointMismatch);
}

TEST(Checkpoint, UnknownStateVersionRejected) {
  const auto sched = make_linear_schedule({});
  SeededRng init(1);
  UNet<float> net(tiny_net(), init);
  vtest::TempDir tmp("version");
  save_checkpoint(tmp.path(), net, sched, TrainState{});
  std::ofstream(tmp.path() / "trainer_state.txt") << "version=2\nT=50\nepoch=0\n";
  EXPECT_THROW(load_checkpoint(tmp.path(), net, sched), CheckpointMismatch);
}

TEST(Train, OutputDirectoryLayout) {
  const auto s = phantom_splits(8, 5);
  const auto sched = make_linear_schedule({});
  SeededRng init(5);
  UNet<float> net(tiny_net(), init);
  TrainState st;
  vtest::TempDir tmp("layout");
  TrainOptions o;
  o.out_dir = tmp.path();
  train(net, s.train, s.val, sched, small_cfg(3), st, o);
  for (const char* d : {"best", "last", "final"}) {
    for (const char* f : {"unet.cfg", "params.prm", "optimizer.prm", "trainer_state.txt"}) {
      EXPECT_TRUE(std::filesystem::exists(tmp.path() / d / f)) << d << "/" << f;
    }
  }
  std::ifstream csv(tmp.path() / "loss.csv");
  std::string line;
  std::getline(csv, line);
  EXPECT_EQ(line, "epoch,train_loss,val_loss");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  EXPECT_EQ(rows, 3);
}

TEST(Train, IdentityTaskHalvesValidationLoss) {
  // Targets replaced by their own conditions.
  auto s = phantom_splits(8, 6);
  for (auto* split : {&s.train, &s.val}) {
    for (auto& p : *split) p.target = p.condition;
  }
  const auto sched = make_linear_schedule({});
  SeededRng init(5);
  auto net = build_unet({}, init);
  TrainState st;
  auto cfg = small_cfg(20);
  cfg.checkpoint_every = 5;
  train(net, s.train, s.val, sched, cfg, st);
  ASSERT_TRUE(st.initial_val && st.history.back().val_loss);
  EXPECT_LT(*st.history.back().val_loss, 0.5 * *st.initial_val);
}

TEST(Train, NonFiniteGradientRetriesOnceThenAborts) {
  auto s = phantom_splits(8, 7);
  const auto sched = make_linear_schedule({});
  SeededRng init(5);
  UNet<float> net(tiny_net(), init);
  // A NaN weight poisons every gradient, so the clipped retry fails too.
  net.params().get("head.conv.bias")->value[0] = std::numeric_limits<float>::quiet_NaN();
  TrainState st;
  std::vector<std::string> logs;
  TrainOptions o;
  o.log = [&](const std::string& m) { logs.push_back(m); };
  EXPECT_THROW(train(net, s.train, s.val, sched, small_cfg(2), st, o), NonFiniteGradient);
  EXPECT_TRUE(st.clipping);
  bool saw_retry = false;
  for (const auto& m : logs) saw_retry |= m.find("retrying") != std::string::npos;
  EXPECT_TRUE(saw_retry);
}
