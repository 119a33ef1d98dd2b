#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "cvlp/stream.hpp"

namespace cvlp::memory {

// Fixed-capacity replay store kept as a uniform sample of everything offered
// (Algorithm R).
class MemoryBuffer {
 public:
  MemoryBuffer(std::size_t capacity, std::uint64_t seed);

  // Appends while under capacity; afterwards the n-th offered sample (1-based)
  // replaces a uniform slot with probability capacity / n.
  void offer(const stream::PairSample& sample);
  void offer_all(std::span<const stream::PairSample> samples);

  // b draws uniformly with replacement. Throws ContractError when empty.
  std::vector<stream::PairSample> sample_batch(std::size_t b, std::mt19937_64& rng) const;

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }
  std::uint64_t seen_count() const noexcept { return seen_; }
  const std::vector<stream::PairSample>& items() const noexcept { return items_; }

  void save(const std::filesystem::path& file) const;
  static MemoryBuffer load(const std::filesystem::path& file);

  bool operator==(const MemoryBuffer& other) const;

 private:
  std::size_t capacity_;
  std::vector<stream::PairSample> items_;
  std::uint64_t seen_ = 0;
  std::mt19937_64 rng_;
};

// The replay share of a batch: floor(rho * B), or 0 while memory is empty.
std::size_t replay_count(const MemoryBuffer& buffer, std::size_t batch, double replay_fraction);

// Concatenates the fresh samples with replay_count draws from memory. `fresh`
// holds at most B - replay_count samples (fewer only for an epoch's last batch).
std::vector<stream::PairSample> mixed_batch(std::span<const stream::PairSample> fresh,
                                            const MemoryBuffer& buffer, std::size_t batch,
                                            double replay_fraction, std::mt19937_64& rng);

}  // namespace cvlp::memory
