#include "cvlp/binary_io.hpp"

#include <fstream>
#include <iterator>

namespace cvlp::io {

void ByteWriter::magic(std::string_view four_cc, std::uint8_t version) {
  if (four_cc.size() != 4) throw ContractError("magic must be 4 bytes");
  for (char c : four_cc) bytes_.push_back(static_cast<std::uint8_t>(c));
  u8(version);
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

void ByteWriter::write_file(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes_.data()),
            static_cast<std::streamsize>(bytes_.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

ByteReader ByteReader::from_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return ByteReader(std::move(bytes));
}

void ByteReader::expect_magic(std::string_view four_cc, std::uint8_t version) {
  if (remaining() < 5) throw FormatError("file too short for header", pos_);
  for (std::size_t i = 0; i < 4; ++i) {
    if (bytes_[pos_ + i] != static_cast<std::uint8_t>(four_cc[i])) {
      throw FormatError("bad magic, expected '" + std::string(four_cc) + "'", pos_ + i);
    }
  }
  pos_ += 4;
  const std::uint8_t v = u8();
  if (v != version) {
    throw FormatError("unsupported version " + std::to_string(v) + ", expected " +
                          std::to_string(version),
                      pos_ - 1);
  }
}

std::string ByteReader::str() {
  const std::uint32_t n = u32();
  require(n, 1, "string");
  std::string s(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
  pos_ += n;
  return s;
}

void ByteReader::require(std::uint64_t count, std::uint64_t item_bytes,
                         std::string_view what) const {
  if (item_bytes != 0 && count > remaining() / item_bytes) {
    throw FormatError("truncated " + std::string(what), pos_);
  }
}

void ByteReader::expect_end() const {
  if (remaining() != 0) throw FormatError("trailing bytes after payload", pos_);
}

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::uint64_t>(n)) throw FormatError("unexpected end of file", pos_);
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += static_cast<std::uint64_t>(n);
  return v;
}

}  // namespace cvlp::io
