#include <gtest/gtest.h>

#include <cstring>

#include "test_support.hpp"
#include "voxdiff/error.hpp"
#include "voxdiff/params.hpp"

using namespace voxdiff;

namespace {

std::vector<ParamRecord> sample_records() {
  return {{"b.weight", {2, 3}, {1, 2, 3, 4, 5, 6}}, {"a.bias", {2}, {-0.5f, 0.25f}}, {"c", {}, {42.0f}}};
}

}  // namespace

TEST(Prm, RoundTripSortsByName) {
  const auto bytes = encode_prm(sample_records());
  EXPECT_EQ(std::memcmp(bytes.data(), "PRM1", 4), 0);
  const auto back = decode_prm(bytes);
  ASSERT_EQ(back.size(), 3u);
  EXPECT_EQ(back[0].name, "a.bias");
  EXPECT_EQ(back[1].name, "b.weight");
  EXPECT_EQ(back[1].dims, (std::vector<std::uint32_t>{2, 3}));
  EXPECT_EQ(back[1].values, (std::vector<float>{1, 2, 3, 4, 5, 6}));
  EXPECT_EQ(back[2].values, std::vector<float>{42.0f});
}

TEST(Prm, DecodeErrors) {
  auto good = encode_prm(sample_records());
  auto bad = good;
  bad[1] = std::byte{'X'};
  EXPECT_THROW(decode_prm(bad), BadMagic);
  auto cut = good;
  cut.resize(cut.size() - 2);
  EXPECT_THROW(decode_prm(cut), TruncatedPayload);
  auto extra = good;
  extra.push_back(std::byte{0});
  EXPECT_THROW(decode_prm(extra), DimMismatch);
}

TEST(Prm, EncodeRejectsInconsistentDims) {
  EXPECT_THROW(encode_prm({{"x", {2, 2}, {1, 2, 3}}}), ShapeError);
}

TEST(ParameterStore, DuplicateNameRejected) {
  ParameterStore<float> store;
  store.add("w", {1, 2}, {2}, {1.0f, 2.0f});
  EXPECT_THROW(store.add("w", {1, 2}, {2}, {1.0f, 2.0f}), ConfigError);
  EXPECT_THROW(static_cast<void>(store.get("missing")), ConfigError);
  EXPECT_EQ(store.scalar_count(), 2u);
}

TEST(ParameterStore, SaveLoadRoundTripIsBitExact) {
  SeededRng rng(1);
  ParameterStore<float> a, b;
  for (auto* s : {&a, &b}) {
    s->add("layer.weight", {3, 2}, {3, 2}, std::vector<float>(6, 0.0f));
    s->add("layer.bias", {1, 3}, {3}, std::vector<float>(3, 0.0f));
  }
  for (const auto& [name, e] : a.entries()) {
    for (auto& v : e.var->value) v = static_cast<float>(rng.normal());
  }
  vtest::TempDir tmp("prm");
  a.save(tmp.path() / "p.prm");
  b.load(tmp.path() / "p.prm");
  for (const auto& [name, e] : a.entries()) {
    const auto& other = b.get(name)->value;
    EXPECT_EQ(std::memcmp(other.data(), e.var->value.data(), other.size() * sizeof(float)), 0) << name;
  }
}

TEST(ParameterStore, MismatchedRecordsThrowCheckpointMismatch) {
  ParameterStore<float> s;
  s.add("w", {1, 2}, {2}, {0.0f, 0.0f});
  EXPECT_THROW(s.assign_from({{"w", {3}, {1, 2, 3}}}), CheckpointMismatch);
  EXPECT_THROW(s.assign_from({{"v", {2}, {1, 2}}}), CheckpointMismatch);
  EXPECT_THROW(s.assign_from({}), CheckpointMismatch);
  EXPECT_THROW(s.assign_from({{"w", {2}, {1, 2}}, {"x", {1}, {1}}}), CheckpointMismatch);
  s.assign_from({{"w", {2}, {1, 2}}});
  EXPECT_EQ(s.get("w")->value, (std::vector<float>{1, 2}));
}
