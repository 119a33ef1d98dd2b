#include "cvlp/stream.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "cvlp/errors.hpp"

namespace cvlp::stream {

namespace {

constexpr char kChunkMagic[] = "CVLC";
constexpr std::uint8_t kChunkVersion = 1;

std::mt19937_64 seeded(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    static_cast<std::uint32_t>(c)};
  return std::mt19937_64(seq);
}

PairSample draw_sample(const GeneratorSpec& spec, const std::vector<std::vector<double>>& protos,
                       std::int32_t cls, std::mt19937_64& rng) {
  PairSample s;
  s.class_id = cls;
  std::normal_distribution<double> noise(0.0, 1.0);
  s.image_feat.resize(static_cast<std::size_t>(spec.d_img));
  for (std::size_t d = 0; d < s.image_feat.size(); ++d) {
    s.image_feat[d] = protos[static_cast<std::size_t>(cls)][d] + spec.noise_std * noise(rng);
  }
  std::uniform_int_distribution<std::int32_t> len(spec.min_len, spec.max_len);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::int32_t> shared(0, spec.shared_tokens - 1);
  std::uniform_int_distribution<std::int32_t> content(0, spec.tokens_per_class - 1);
  const std::int32_t n = len(rng);
  s.tokens.reserve(static_cast<std::size_t>(n));
  for (std::int32_t i = 0; i < n; ++i) {
    const bool is_shared = spec.shared_tokens > 0 && coin(rng) < spec.shared_fraction;
    s.tokens.push_back(is_shared ? spec.shared_token(shared(rng))
                                 : spec.content_token(cls, content(rng)));
  }
  return s;
}

}  // namespace

void GeneratorSpec::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (d_img < 1) throw ConfigError("d_img must be >= 1");
  if (tokens_per_class < 1) throw ConfigError("tokens_per_class must be >= 1");
  if (shared_tokens < 0) throw ConfigError("shared_tokens must be >= 0");
  if (shared_fraction < 0.0 || shared_fraction > 1.0) {
    throw ConfigError("shared_fraction must lie in [0, 1]");
  }
  if (noise_std < 0.0) throw ConfigError("noise_std must be non-negative");
  if (min_len < 1 || max_len < min_len) throw ConfigError("need 1 <= min_len <= max_len");
  const std::int64_t needed = 1 + static_cast<std::int64_t>(tokens_per_class) * num_classes +
                              shared_tokens;
  if (needed > vocab_size) {
    throw ConfigError("token pools need " + std::to_string(needed) +
                      " ids (pad + shared + content) but vocab_size is " +
                      std::to_string(vocab_size));
  }
}

std::vector<std::vector<double>> class_prototypes(const GeneratorSpec& spec) {
  spec.validate();
  auto rng = seeded(spec.seed, 0x70726f746fULL, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> protos(static_cast<std::size_t>(spec.num_classes));
  for (auto& p : protos) {
    p.resize(static_cast<std::size_t>(spec.d_img));
    double norm = 0.0;
    for (double& x : p) {
      x = normal(rng);
      norm += x * x;
    }
    norm = std::sqrt(norm);
    for (double& x : p) x /= norm;
  }
  return protos;
}

std::vector<PairSample> generate_dataset(const GeneratorSpec& spec, std::size_t n,
                                         std::uint32_t stream) {
  spec.validate();
  if (n < static_cast<std::size_t>(spec.num_classes)) {
    throw ConfigError("dataset size " + std::to_string(n) + " is below the class count " +
                      std::to_string(spec.num_classes));
  }
  const auto protos = class_prototypes(spec);
  auto rng = seeded(spec.seed, stream, 1);
  std::uniform_int_distribution<std::int32_t> cls(0, spec.num_classes - 1);
  std::vector<PairSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(draw_sample(spec, protos, cls(rng), rng));
    out.back().sample_id = (static_cast<std::uint64_t>(stream) << 32) | i;
  }
  return out;
}

std::vector<PairSample> generate_balanced(const GeneratorSpec& spec, std::size_t per_class,
                                          std::uint32_t stream) {
  spec.validate();
  const auto protos = class_prototypes(spec);
  auto rng = seeded(spec.seed, stream, 2);
  std::vector<PairSample> out;
  out.reserve(per_class * static_cast<std::size_t>(spec.num_classes));
  for (std::size_t k = 0; k < per_class; ++k) {
    for (std::int32_t c = 0; c < spec.num_classes; ++c) {
      out.push_back(draw_sample(spec, protos, c, rng));
      out.back().sample_id = (static_cast<std::uint64_t>(stream) << 32) | (out.size() - 1);
    }
  }
  return out;
}

std::vector<std::int32_t> class_partition(std::int32_t num_classes, std::uint32_t num_steps,
                                          std::uint32_t t) {
  if (num_steps == 0) throw ConfigError("number of steps must be >= 1");
  if (static_cast<std::int64_t>(num_steps) > num_classes) {
    throw ConfigError("cannot split " + std::to_string(num_classes) + " classes into " +
                      std::to_string(num_steps) + " class-incremental steps");
  }
  if (t >= num_steps) throw ContractError("step index out of range");
  const std::int32_t per = num_classes / static_cast<std::int32_t>(num_steps);
  const std::int32_t lo = static_cast<std::int32_t>(t) * per;
  const std::int32_t hi = t + 1 == num_steps ? num_classes : lo + per;
  std::vector<std::int32_t> ids(static_cast<std::size_t>(hi - lo));
  std::iota(ids.begin(), ids.end(), lo);
  return ids;
}

std::vector<PairChunk> split_class_incremental(std::span<const PairSample> samples,
                                               std::int32_t num_classes, std::uint32_t num_steps) {
  if (num_steps == 0) throw ConfigError("number of steps must be >= 1");
  std::vector<std::uint32_t> owner(static_cast<std::size_t>(std::max(num_classes, 0)));
  for (std::uint32_t t = 0; t < num_steps; ++t) {
    for (std::int32_t c : class_partition(num_classes, num_steps, t)) {
      owner[static_cast<std::size_t>(c)] = t;
    }
  }
  std::vector<PairChunk> chunks(num_steps);
  for (std::uint32_t t = 0; t < num_steps; ++t) chunks[t].step_index = t;
  for (const auto& s : samples) {
    if (s.class_id < 0 || s.class_id >= num_classes) {
      throw ContractError("sample class " + std::to_string(s.class_id) + " outside [0, " +
                          std::to_string(num_classes) + ")");
    }
    chunks[owner[static_cast<std::size_t>(s.class_id)]].samples.push_back(s);
  }
  for (const auto& c : chunks) {
    if (c.samples.empty()) {
      throw ContractError("class-incremental chunk " + std::to_string(c.step_index) +
                          " received no samples");
    }
  }
  return chunks;
}

std::vector<PairChunk> split_instance_incremental(std::span<const PairSample> samples,
                                                  std::uint32_t num_steps, std::uint64_t seed) {
  if (num_steps == 0) throw ConfigError("number of steps must be >= 1");
  if (samples.size() < num_steps) {
    throw ContractError("need at least one sample per step (" + std::to_string(samples.size()) +
                        " < " + std::to_string(num_steps) + ")");
  }
  std::vector<std::size_t> perm(samples.size());
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = seeded(seed, 0x73706c6974ULL, 3);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<PairChunk> chunks(num_steps);
  const std::size_t base = samples.size() / num_steps;
  const std::size_t extra = samples.size() % num_steps;
  std::size_t pos = 0;
  for (std::uint32_t t = 0; t < num_steps; ++t) {
    chunks[t].step_index = t;
    const std::size_t len = base + (t < extra ? 1 : 0);
    for (std::size_t i = 0; i < len; ++i) chunks[t].samples.push_back(samples[perm[pos++]]);
  }
  return chunks;
}

void write_sample(io::ByteWriter& w, const PairSample& s) {
  w.u64(s.sample_id);
  w.i32(s.class_id);
  w.u32(static_cast<std::uint32_t>(s.tokens.size()));
  for (auto t : s.tokens) w.i32(t);
  for (double x : s.image_feat) w.f64(x);
}

PairSample read_sample(io::ByteReader& r, std::uint32_t d_img) {
  PairSample s;
  s.sample_id = r.u64();
  s.class_id = r.i32();
  const std::uint32_t ntok = r.u32();
  r.require(ntok, 4, "token list");
  s.tokens.resize(ntok);
  for (auto& t : s.tokens) t = r.i32();
  r.require(d_img, 8, "image feature");
  s.image_feat.resize(d_img);
  for (double& x : s.image_feat) x = r.f64();
  return s;
}

void save_chunk(const PairChunk& chunk, const std::filesystem::path& file) {
  if (chunk.samples.empty()) throw ContractError("refusing to save an empty chunk");
  const std::size_t d_img = chunk.samples.front().image_feat.size();
  io::ByteWriter w;
  w.magic(kChunkMagic, kChunkVersion);
  w.u32(chunk.step_index);
  w.u32(static_cast<std::uint32_t>(chunk.samples.size()));
  w.u32(static_cast<std::uint32_t>(d_img));
  for (const auto& s : chunk.samples) {
    if (s.image_feat.size() != d_img) throw DimensionError("chunk mixes image feature widths");
    write_sample(w, s);
  }
  w.write_file(file);
}

PairChunk load_chunk(const std::filesystem::path& file) {
  auto r = io::ByteReader::from_file(file);
  r.expect_magic(kChunkMagic, kChunkVersion);
  PairChunk chunk;
  chunk.step_index = r.u32();
  const std::uint64_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  const std::uint32_t d_img = r.u32();
  if (count == 0) throw FormatError("chunk holds no samples", count_at);
  if (d_img == 0) throw FormatError("zero image feature width", count_at + 4);
  // Each sample needs at least id + class + token count + features.
  r.require(count, 16 + 8ULL * d_img, "sample table");
  chunk.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) chunk.samples.push_back(read_sample(r, d_img));
  r.expect_end();
  return chunk;
}

std::filesystem::path save_chunks(std::span<const PairChunk> chunks,
                                  const std::filesystem::path& dir) {
  if (chunks.empty()) throw ContractError("refusing to save an empty chunk list");
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.txt";
  std::ofstream out(manifest, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + manifest.string());
  for (std::size_t t = 0; t < chunks.size(); ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "chunk_%03zu.bin", t);
    save_chunk(chunks[t], dir / name);
    out << name << '\n';
  }
  return manifest;
}

std::vector<PairChunk> load_chunks(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest.string());
  std::vector<PairChunk> chunks;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    chunks.push_back(load_chunk(manifest.parent_path() / line));
  }
  if (chunks.empty()) throw ContractError("manifest " + manifest.string() + " lists no chunks");
  return chunks;
}

}  // namespace cvlp::stream
