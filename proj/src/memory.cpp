#include "cvlp/memory.hpp"

#include <cmath>
#include <sstream>

#include "cvlp/binary_io.hpp"
#include "cvlp/errors.hpp"

namespace cvlp::memory {

namespace {
constexpr char kBufferMagic[] = "CVLB";
constexpr std::uint8_t kBufferVersion = 1;
}  // namespace

MemoryBuffer::MemoryBuffer(std::size_t capacity, std::uint64_t seed)
    : capacity_(capacity), rng_(seed) {
  if (capacity == 0) throw ConfigError("memory capacity must be positive");
  items_.reserve(capacity);
}

void MemoryBuffer::offer(const stream::PairSample& sample) {
  ++seen_;
  if (items_.size() < capacity_) {
    items_.push_back(sample);
    return;
  }
  // Slot j in [0, seen) is kept iff j < capacity: probability capacity / seen.
  std::uniform_int_distribution<std::uint64_t> slot(0, seen_ - 1);
  const std::uint64_t j = slot(rng_);
  if (j < capacity_) items_[j] = sample;
}

void MemoryBuffer::offer_all(std::span<const stream::PairSample> samples) {
  for (const auto& s : samples) offer(s);
}

std::vector<stream::PairSample> MemoryBuffer::sample_batch(std::size_t b,
                                                          std::mt19937_64& rng) const {
  if (items_.empty()) throw ContractError("cannot sample from an empty memory buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<stream::PairSample> out;
  out.reserve(b);
  for (std::size_t i = 0; i < b; ++i) out.push_back(items_[pick(rng)]);
  return out;
}

bool MemoryBuffer::operator==(const MemoryBuffer& other) const {
  return capacity_ == other.capacity_ && seen_ == other.seen_ && items_ == other.items_ &&
         rng_ == other.rng_;
}

void MemoryBuffer::save(const std::filesystem::path& file) const {
  io::ByteWriter w;
  w.magic(kBufferMagic, kBufferVersion);
  w.u64(capacity_);
  w.u64(seen_);
  std::ostringstream state;
  state << rng_;
  w.str(state.str());
  const std::uint32_t d_img =
      items_.empty() ? 0 : static_cast<std::uint32_t>(items_.front().image_feat.size());
  w.u32(d_img);
  w.u64(items_.size());
  for (const auto& s : items_) stream::write_sample(w, s);
  w.write_file(file);
}

MemoryBuffer MemoryBuffer::load(const std::filesystem::path& file) {
  auto r = io::ByteReader::from_file(file);
  r.expect_magic(kBufferMagic, kBufferVersion);
  const auto cap_at = r.offset();
  const std::uint64_t capacity = r.u64();
  if (capacity == 0) throw FormatError("zero capacity", cap_at);
  MemoryBuffer buf(capacity, 0);
  buf.seen_ = r.u64();
  const auto rng_at = r.offset();
  std::istringstream state(r.str());
  state >> buf.rng_;
  if (!state) throw FormatError("unreadable RNG state", rng_at);
  const std::uint32_t d_img = r.u32();
  const auto n_at = r.offset();
  const std::uint64_t n = r.u64();
  if (n > capacity || n > buf.seen_) throw FormatError("item count exceeds capacity", n_at);
  r.require(n, 16 + 8ULL * d_img, "memory items");
  for (std::uint64_t i = 0; i < n; ++i) buf.items_.push_back(stream::read_sample(r, d_img));
  r.expect_end();
  return buf;
}

std::size_t replay_count(const MemoryBuffer& buffer, std::size_t batch, double replay_fraction) {
  if (replay_fraction < 0.0 || replay_fraction > 1.0) {
    throw ConfigError("replay fraction must lie in [0, 1]");
  }
  if (buffer.empty()) return 0;
  return static_cast<std::size_t>(std::floor(replay_fraction * static_cast<double>(batch)));
}

std::vector<stream::PairSample> mixed_batch(std::span<const stream::PairSample> fresh,
                                            const MemoryBuffer& buffer, std::size_t batch,
                                            double replay_fraction, std::mt19937_64& rng) {
  const std::size_t from_memory = replay_count(buffer, batch, replay_fraction);
  if (fresh.size() + from_memory > batch || fresh.size() + from_memory == 0) {
    throw ContractError("mixed batch of " + std::to_string(batch) + " takes at most " +
                        std::to_string(batch - from_memory) + " fresh samples, got " +
                        std::to_string(fresh.size()));
  }
  std::vector<stream::PairSample> out(fresh.begin(), fresh.end());
  if (from_memory > 0) {
    auto replay = buffer.sample_batch(from_memory, rng);
    out.insert(out.end(), std::make_move_iterator(replay.begin()),
               std::make_move_iterator(replay.end()));
  }
  return out;
}

}  // namespace cvlp::memory
