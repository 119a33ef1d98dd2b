#pragma once

// Synthetic image-text pair streams and their continual-learning splits.
//
// Each class c owns a fixed random unit prototype in image-feature space and
// a private pool of "content" tokens; all classes share a pool of
// "function-word" tokens. Token id 0 is reserved for padding.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cvlp/binary_io.hpp"

namespace cvlp::stream {

struct PairSample {
  std::vector<double> image_feat;
  std::vector<std::int32_t> tokens;
  std::int32_t class_id = 0;
  std::uint64_t sample_id = 0;

  bool operator==(const PairSample&) const = default;
};

struct PairChunk {
  std::uint32_t step_index = 0;
  std::vector<PairSample> samples;

  bool operator==(const PairChunk&) const = default;
};

struct GeneratorSpec {
  std::int32_t num_classes = 8;
  std::int32_t d_img = 32;
  std::int32_t vocab_size = 200;
  std::int32_t tokens_per_class = 12;
  std::int32_t shared_tokens = 20;
  double shared_fraction = 0.3;  // probability that a caption token is shared
  double noise_std = 0.3;        // per-dimension image noise
  std::int32_t min_len = 4;
  std::int32_t max_len = 10;
  std::uint64_t seed = 0;

  static constexpr std::int32_t pad_token = 0;
  std::int32_t shared_token(std::int32_t i) const { return 1 + i; }
  std::int32_t content_token(std::int32_t cls, std::int32_t i) const {
    return 1 + shared_tokens + cls * tokens_per_class + i;
  }
  // Throws ConfigError on inconsistent settings.
  void validate() const;
};

// Unit-norm class prototypes; a pure function of (spec.seed, num_classes, d_img).
std::vector<std::vector<double>> class_prototypes(const GeneratorSpec& spec);

// n samples with uniformly drawn classes. `stream` selects an independent
// sample stream over the same prototypes and token pools, so held-out sets
// use stream >= 1. Sample ids are (stream << 32) | index.
std::vector<PairSample> generate_dataset(const GeneratorSpec& spec, std::size_t n,
                                         std::uint32_t stream = 0);

// per_class samples of every class, interleaved in class order.
std::vector<PairSample> generate_balanced(const GeneratorSpec& spec, std::size_t per_class,
                                          std::uint32_t stream);

// Contiguous class partition: chunk t holds classes [t*C/T, (t+1)*C/T) with the
// last chunk taking any remainder. Sample order is preserved.
std::vector<PairChunk> split_class_incremental(std::span<const PairSample> samples,
                                               std::int32_t num_classes, std::uint32_t num_steps);

// Class ids owned by chunk t of a class-incremental split.
std::vector<std::int32_t> class_partition(std::int32_t num_classes, std::uint32_t num_steps,
                                          std::uint32_t t);

// Seeded permutation cut into T consecutive slices whose sizes differ by <= 1.
std::vector<PairChunk> split_instance_incremental(std::span<const PairSample> samples,
                                                  std::uint32_t num_steps, std::uint64_t seed);

// Binary sample codec shared with the memory checkpoint.
void write_sample(io::ByteWriter& w, const PairSample& s);
PairSample read_sample(io::ByteReader& r, std::uint32_t d_img);

void save_chunk(const PairChunk& chunk, const std::filesystem::path& file);
PairChunk load_chunk(const std::filesystem::path& file);

// Writes chunk_NNN.bin files plus manifest.txt (one file name per line, step
// order) into dir, creating it if needed. Returns the manifest path.
std::filesystem::path save_chunks(std::span<const PairChunk> chunks,
                                  const std::filesystem::path& dir);
std::vector<PairChunk> load_chunks(const std::filesystem::path& manifest);

}  // namespace cvlp::stream
