#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <map>

#include "cvlp/errors.hpp"
#include "cvlp/memory.hpp"
#include "test_paths.hpp"

using namespace cvlp;
using memory::MemoryBuffer;

namespace {

std::vector<stream::PairSample> items(std::size_t n) {
  std::vector<stream::PairSample> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i].image_feat = {static_cast<double>(i), 0.5};
    v[i].tokens = {1, 2};
    v[i].sample_id = i;
  }
  return v;
}

}  // namespace

TEST(Reservoir, UnderCapacityKeepsAll) {
  MemoryBuffer buf(10, 1);
  buf.offer_all(items(7));
  EXPECT_EQ(buf.size(), 7u);
  EXPECT_EQ(buf.seen_count(), 7u);
}

TEST(Reservoir, NeverExceedsCapacity) {
  MemoryBuffer buf(10, 2);
  buf.offer_all(items(10000));
  EXPECT_EQ(buf.size(), 10u);
  EXPECT_EQ(buf.seen_count(), 10000u);
}

TEST(Reservoir, ZeroCapacityRejected) { EXPECT_THROW(MemoryBuffer(0, 1), ConfigError); }

// 5 sigma of Binomial(20000, 0.2) / 20000 is 0.0141; the bound is 0.015.
TEST(Reservoir, UniformInclusion) {
  const auto stream = items(100);
  std::vector<int> hits(100, 0);
  const int trials = 20000;
  for (int t = 0; t < trials; ++t) {
    MemoryBuffer buf(20, static_cast<std::uint64_t>(t));
    buf.offer_all(stream);
    for (const auto& s : buf.items()) ++hits[s.sample_id];
  }
  for (std::size_t i = 0; i < 100; ++i) {
    EXPECT_NEAR(hits[i] / static_cast<double>(trials), 0.2, 0.015) << "item " << i;
  }
}

TEST(SampleBatch, SingleItemRepeats) {
  MemoryBuffer buf(5, 3);
  buf.offer(items(1)[0]);
  std::mt19937_64 rng(1);
  const auto b = buf.sample_batch(5, rng);
  ASSERT_EQ(b.size(), 5u);
  for (const auto& s : b) EXPECT_EQ(s.sample_id, 0u);
}

TEST(SampleBatch, SeededDeterminism) {
  MemoryBuffer buf(10, 4);
  buf.offer_all(items(10));
  std::mt19937_64 a(9), b(9);
  EXPECT_EQ(buf.sample_batch(8, a), buf.sample_batch(8, b));
}

TEST(SampleBatch, UniformDraws) {
  MemoryBuffer buf(10, 5);
  buf.offer_all(items(10));
  std::mt19937_64 rng(6);
  std::map<std::uint64_t, int> counts;
  for (const auto& s : buf.sample_batch(10000, rng)) ++counts[s.sample_id];
  for (auto [id, n] : counts) EXPECT_NEAR(n / 10000.0, 0.1, 0.015) << id;
}

TEST(SampleBatch, EmptyBufferRejected) {
  MemoryBuffer buf(5, 7);
  std::mt19937_64 rng(1);
  EXPECT_THROW(buf.sample_batch(2, rng), ContractError);
}

TEST(MixedBatch, ReplayShares) {
  MemoryBuffer buf(10, 8);
  const auto fresh = items(8);
  std::mt19937_64 rng(2);
  // Empty memory: everything fresh whatever rho is.
  EXPECT_EQ(memory::replay_count(buf, 8, 0.5), 0u);
  EXPECT_EQ(memory::mixed_batch(fresh, buf, 8, 0.5, rng).size(), 8u);

  buf.offer_all(items(10));
  EXPECT_EQ(memory::replay_count(buf, 8, 0.0), 0u);
  EXPECT_EQ(memory::mixed_batch(fresh, buf, 8, 0.0, rng), fresh);
  EXPECT_EQ(memory::replay_count(buf, 8, 1.0), 8u);
  EXPECT_EQ(memory::mixed_batch({}, buf, 8, 1.0, rng).size(), 8u);

  const std::span<const stream::PairSample> half(fresh.data(), 4);
  const auto mixed = memory::mixed_batch(half, buf, 8, 0.5, rng);
  ASSERT_EQ(mixed.size(), 8u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(mixed[i], fresh[i]);
  EXPECT_THROW(memory::mixed_batch(fresh, buf, 8, 0.5, rng), ContractError);
}

TEST(MixedBatch, InvalidFractionRejected) {
  MemoryBuffer buf(4, 1);
  EXPECT_THROW(memory::replay_count(buf, 8, 1.5), ConfigError);
}

TEST(BufferIo, RoundTripKeepsRngState) {
  MemoryBuffer buf(5, 10);
  const auto all = items(30);
  buf.offer_all(std::span(all).first(12));
  const auto file = tsupport::scratch_dir("buffer_rt") / "b.bin";
  buf.save(file);
  auto back = MemoryBuffer::load(file);
  EXPECT_EQ(back, buf);
  buf.offer_all(std::span(all).subspan(12));
  back.offer_all(std::span(all).subspan(12));
  EXPECT_EQ(back, buf);
}

TEST(BufferIo, CorruptRejected) {
  MemoryBuffer buf(5, 10);
  buf.offer_all(items(5));
  const auto file = tsupport::scratch_dir("buffer_bad") / "b.bin";
  buf.save(file);
  std::filesystem::resize_file(file, std::filesystem::file_size(file) - 3);
  EXPECT_THROW(MemoryBuffer::load(file), FormatError);
}
