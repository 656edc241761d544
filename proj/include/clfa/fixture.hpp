#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clfa/data.hpp"

namespace clfa::io {

// Little-endian primitive framing shared by fixtures and checkpoints.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  void raw(std::span<const std::uint8_t> data) { bytes_.insert(bytes_.end(), data.begin(), data.end()); }
  void text(const std::string& s);  // u32 length + bytes
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class TruncatedError;

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string text();
  std::span<const std::uint8_t> take(std::size_t n);
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

class FileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------ fixtures

class FixtureError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class BadMagicError : public FixtureError {
 public:
  using FixtureError::FixtureError;
};
class VersionError : public FixtureError {
 public:
  using FixtureError::FixtureError;
};
class TruncatedError : public FixtureError {
 public:
  using FixtureError::FixtureError;
};
class NonFiniteError : public FixtureError {
 public:
  using FixtureError::FixtureError;
};
class WidthError : public FixtureError {
 public:
  using FixtureError::FixtureError;
};

inline constexpr std::uint8_t kFixtureVersion = 0x01;
inline constexpr std::uint8_t kFlagRawInputs = 0x01;

struct RawInputs {
  std::vector<std::uint32_t> tokens;
  data::Image image;
};

struct FixtureRecord {
  std::uint64_t id = 0;
  std::vector<double> text;   // teacher text embedding, d_C
  std::vector<double> image;  // teacher image embedding, d_C
  std::optional<RawInputs> raw;
};

/// In-memory form of the binary fixture:
///   "CLFA" | u8 version | u32 N | u32 d_C | u8 flags
///   N × ( u64 id | d_C f32 text | d_C f32 image
///         [ u32 n_tokens | n_tokens u32 | u32 H | u32 W | u32 C | H·W·C f32 ] )
/// All integers little-endian; the raw block is present iff flags bit 0 is set.
struct FixtureFile {
  std::uint32_t width = 0;
  bool has_raw = false;
  std::vector<FixtureRecord> records;
};

std::vector<std::uint8_t> encode_fixture(const FixtureFile& fixture);
FixtureFile decode_fixture(std::span<const std::uint8_t> bytes);
void write_fixture(const std::filesystem::path& path, const FixtureFile& fixture);
FixtureFile read_fixture(const std::filesystem::path& path);

using EmbeddingPair = std::pair<std::vector<double>, std::vector<double>>;  // (text, image)

/// Fixture for `samples` with the given teacher embeddings (one pair per sample).
FixtureFile make_fixture(const std::vector<data::Sample>& samples, const std::vector<EmbeddingPair>& embeddings,
                         bool include_raw);

}  // namespace clfa::io
