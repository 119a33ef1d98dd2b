#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "cvlp/errors.hpp"
#include "cvlp/stream.hpp"
#include "test_paths.hpp"

using namespace cvlp;
using namespace cvlp::stream;

TEST(Generator, ZeroNoiseImagesEqualPrototype) {
  GeneratorSpec spec;
  spec.noise_std = 0.0;
  const auto protos = class_prototypes(spec);
  for (const auto& s : generate_dataset(spec, 50)) {
    ASSERT_EQ(s.image_feat.size(), protos[s.class_id].size());
    for (std::size_t d = 0; d < s.image_feat.size(); ++d) {
      EXPECT_DOUBLE_EQ(s.image_feat[d], protos[s.class_id][d]);
    }
  }
}

TEST(Generator, PrototypesAreUnitNorm) {
  GeneratorSpec spec;
  for (const auto& p : class_prototypes(spec)) {
    double n = 0;
    for (double x : p) n += x * x;
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(Generator, SameSeedSameData) {
  GeneratorSpec spec;
  spec.seed = 42;
  EXPECT_EQ(generate_dataset(spec, 100), generate_dataset(spec, 100));
  auto other = spec;
  other.seed = 43;
  EXPECT_NE(generate_dataset(spec, 100), generate_dataset(other, 100));
}

TEST(Generator, StreamsAreIndependentButShareWorld) {
  GeneratorSpec spec;
  const auto a = generate_dataset(spec, 20, 0);
  const auto b = generate_dataset(spec, 20, 1);
  EXPECT_NE(a, b);
  EXPECT_EQ(b.front().sample_id, 1ULL << 32);
  EXPECT_EQ(a.back().sample_id, 19u);
}

TEST(Generator, ContentTokensStayInOwnPool) {
  GeneratorSpec spec;
  for (const auto& s : generate_dataset(spec, 500)) {
    EXPECT_GE(static_cast<std::int32_t>(s.tokens.size()), spec.min_len);
    EXPECT_LE(static_cast<std::int32_t>(s.tokens.size()), spec.max_len);
    for (auto t : s.tokens) {
      EXPECT_NE(t, GeneratorSpec::pad_token);
      if (t <= spec.shared_tokens) continue;
      EXPECT_GE(t, spec.content_token(s.class_id, 0));
      EXPECT_LE(t, spec.content_token(s.class_id, spec.tokens_per_class - 1));
    }
  }
}

TEST(Generator, BalancedHasEqualCounts) {
  GeneratorSpec spec;
  const auto d = generate_balanced(spec, 7, 2);
  std::map<int, int> counts;
  for (const auto& s : d) ++counts[s.class_id];
  ASSERT_EQ(counts.size(), 8u);
  for (auto [c, n] : counts) EXPECT_EQ(n, 7);
}

TEST(Generator, FewerSamplesThanClassesRejected) {
  GeneratorSpec spec;
  EXPECT_THROW(generate_dataset(spec, 7), ConfigError);
}

TEST(Generator, InvalidSpecRejected) {
  GeneratorSpec spec;
  spec.vocab_size = 10;  // too small for the token pools
  EXPECT_THROW(spec.validate(), ConfigError);
  spec = {};
  spec.min_len = 5;
  spec.max_len = 3;
  EXPECT_THROW(spec.validate(), ConfigError);
}

TEST(ClassSplit, ContiguousPartition) {
  GeneratorSpec spec;
  const auto d = generate_dataset(spec, 400);
  const auto chunks = split_class_incremental(d, 8, 4);
  ASSERT_EQ(chunks.size(), 4u);
  std::size_t total = 0;
  for (std::uint32_t t = 0; t < 4; ++t) {
    EXPECT_EQ(chunks[t].step_index, t);
    const std::set<int> want{static_cast<int>(2 * t), static_cast<int>(2 * t + 1)};
    for (const auto& s : chunks[t].samples) EXPECT_TRUE(want.count(s.class_id));
    total += chunks[t].samples.size();
  }
  EXPECT_EQ(total, d.size());
  EXPECT_EQ(class_partition(8, 4, 2), (std::vector<std::int32_t>{4, 5}));
  EXPECT_EQ(class_partition(10, 3, 2), (std::vector<std::int32_t>{6, 7, 8, 9}));
}

TEST(ClassSplit, SingleStepIsWholeDataset) {
  GeneratorSpec spec;
  const auto d = generate_dataset(spec, 50);
  const auto chunks = split_class_incremental(d, 8, 1);
  ASSERT_EQ(chunks.size(), 1u);
  EXPECT_EQ(chunks[0].samples, d);
}

TEST(InstanceSplit, BalancedPermutation) {
  GeneratorSpec spec;
  spec.num_classes = 10;
  spec.vocab_size = 200;
  const auto d = generate_dataset(spec, 10000);
  const auto chunks = split_instance_incremental(d, 3, 5);
  std::set<std::uint64_t> ids;
  std::size_t lo = d.size(), hi = 0;
  for (const auto& c : chunks) {
    lo = std::min(lo, c.samples.size());
    hi = std::max(hi, c.samples.size());
    for (const auto& s : c.samples) EXPECT_TRUE(ids.insert(s.sample_id).second);
  }
  EXPECT_LE(hi - lo, 1u);
  EXPECT_EQ(ids.size(), d.size());

  // Per-chunk class frequencies against the global ones: 5 sigma of the
  // hypergeometric-free binomial approximation.
  std::map<int, double> global;
  for (const auto& s : d) global[s.class_id] += 1.0 / static_cast<double>(d.size());
  for (const auto& c : chunks) {
    std::map<int, double> local;
    const double n = static_cast<double>(c.samples.size());
    for (const auto& s : c.samples) local[s.class_id] += 1.0 / n;
    for (auto [cls, p] : global) {
      EXPECT_NEAR(local[cls], p, 5.0 * std::sqrt(p * (1 - p) / n)) << "class " << cls;
    }
  }
}

TEST(InstanceSplit, SeededAndDeterministic) {
  GeneratorSpec spec;
  const auto d = generate_dataset(spec, 101);
  EXPECT_EQ(split_instance_incremental(d, 4, 9), split_instance_incremental(d, 4, 9));
  EXPECT_NE(split_instance_incremental(d, 4, 9), split_instance_incremental(d, 4, 10));
}

TEST(ChunkIo, RoundTrip) {
  GeneratorSpec spec;
  const PairChunk chunk{3, generate_dataset(spec, 8)};
  const auto file = tsupport::scratch_dir("chunk_rt") / "c.bin";
  save_chunk(chunk, file);
  EXPECT_EQ(load_chunk(file), chunk);
}

TEST(ChunkIo, ManifestRoundTripAndEmptyRejected) {
  GeneratorSpec spec;
  const auto d = generate_dataset(spec, 80);
  const auto chunks = split_class_incremental(d, 8, 4);
  const auto dir = tsupport::scratch_dir("chunks_rt") / "nested" / "out";
  const auto manifest = save_chunks(chunks, dir);
  EXPECT_EQ(load_chunks(manifest), chunks);
  EXPECT_THROW(save_chunks(std::span<const PairChunk>{}, dir), ContractError);
}

TEST(ChunkIo, VersionMismatchRejected) {
  GeneratorSpec spec;
  const auto file = tsupport::scratch_dir("chunk_ver") / "c.bin";
  save_chunk({0, generate_dataset(spec, 8)}, file);
  {
    std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(4);
    f.put(static_cast<char>(99));
  }
  EXPECT_THROW(load_chunk(file), FormatError);
}

TEST(ChunkIo, TruncatedFileReportsOffset) {
  GeneratorSpec spec;
  const auto file = tsupport::scratch_dir("chunk_trunc") / "c.bin";
  save_chunk({0, generate_dataset(spec, 8)}, file);
  std::filesystem::resize_file(file, std::filesystem::file_size(file) - 5);
  try {
    load_chunk(file);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
}

TEST(ChunkIo, BadMagicRejected) {
  const auto file = tsupport::scratch_dir("chunk_magic") / "c.bin";
  std::ofstream(file, std::ios::binary) << "NOPE\x01garbage";
  EXPECT_THROW(load_chunk(file), FormatError);
}
