#include "clfa/fixture.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace clfa::io {

namespace {
constexpr char kMagic[4] = {'C', 'L', 'F', 'A'};

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw NonFiniteError(std::string("fixture: non-finite value in ") + what);
}
}  // namespace

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::text(const std::string& s) {
  u32(static_cast<std::uint32_t>(s.size()));
  bytes_.insert(bytes_.end(), s.begin(), s.end());
}

std::span<const std::uint8_t> ByteReader::take(std::size_t n) {
  if (remaining() < n) {
    throw TruncatedError("truncated payload: need " + std::to_string(n) + " bytes at offset " +
                         std::to_string(pos_) + ", have " + std::to_string(remaining()));
  }
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return take(1)[0]; }

std::uint32_t ByteReader::u32() {
  auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::text() {
  const auto n = u32();
  auto b = take(n);
  return std::string(b.begin(), b.end());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("failed writing " + path.string());
}

std::vector<std::uint8_t> encode_fixture(const FixtureFile& fixture) {
  ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u8(kFixtureVersion);
  w.u32(static_cast<std::uint32_t>(fixture.records.size()));
  w.u32(fixture.width);
  w.u8(fixture.has_raw ? kFlagRawInputs : 0);
  for (const auto& r : fixture.records) {
    if (r.text.size() != fixture.width || r.image.size() != fixture.width) {
      throw WidthError("fixture record " + std::to_string(r.id) + " embedding widths (" +
                       std::to_string(r.text.size()) + ", " + std::to_string(r.image.size()) +
                       ") differ from declared " + std::to_string(fixture.width));
    }
    w.u64(r.id);
    for (double v : r.text) {
      require_finite(v, "text embedding");
      w.f32(static_cast<float>(v));
    }
    for (double v : r.image) {
      require_finite(v, "image embedding");
      w.f32(static_cast<float>(v));
    }
    if (fixture.has_raw) {
      if (!r.raw) throw FixtureError("fixture flags raw inputs but record " + std::to_string(r.id) + " has none");
      const auto& raw = *r.raw;
      w.u32(static_cast<std::uint32_t>(raw.tokens.size()));
      for (auto t : raw.tokens) w.u32(t);
      w.u32(static_cast<std::uint32_t>(raw.image.height));
      w.u32(static_cast<std::uint32_t>(raw.image.width));
      w.u32(static_cast<std::uint32_t>(raw.image.channels));
      if (raw.image.pixels.size() != raw.image.height * raw.image.width * raw.image.channels) {
        throw WidthError("fixture record " + std::to_string(r.id) + " pixel count does not match H*W*C");
      }
      for (double v : raw.image.pixels) {
        require_finite(v, "pixels");
        w.f32(static_cast<float>(v));
      }
    }
  }
  return w.bytes();
}

FixtureFile decode_fixture(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw BadMagicError("fixture: bad magic (expected \"CLFA\")");
  }
  r.take(4);
  const auto version = r.u8();
  if (version != kFixtureVersion) {
    throw VersionError("fixture: unsupported version " + std::to_string(version));
  }
  FixtureFile f;
  const auto count = r.u32();
  f.width = r.u32();
  const auto flags = r.u8();
  f.has_raw = (flags & kFlagRawInputs) != 0;
  // Each record needs at least its id and embeddings; reject impossible counts
  // before reserving memory.
  const std::size_t min_record = 8 + 8 * static_cast<std::size_t>(f.width);
  if (min_record * count > r.remaining()) {
    throw TruncatedError("fixture: declares " + std::to_string(count) + " records of width " +
                         std::to_string(f.width) + " but only " + std::to_string(r.remaining()) +
                         " payload bytes remain");
  }
  f.records.reserve(count);
  auto read_f32 = [&](const char* what) {
    const double v = r.f32();
    require_finite(v, what);
    return v;
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    FixtureRecord rec;
    rec.id = r.u64();
    rec.text.resize(f.width);
    rec.image.resize(f.width);
    for (auto& v : rec.text) v = read_f32("text embedding");
    for (auto& v : rec.image) v = read_f32("image embedding");
    if (f.has_raw) {
      RawInputs raw;
      const auto n_tokens = r.u32();
      if (static_cast<std::size_t>(n_tokens) * 4 > r.remaining()) throw TruncatedError("fixture: truncated tokens");
      raw.tokens.resize(n_tokens);
      for (auto& t : raw.tokens) t = r.u32();
      raw.image.height = r.u32();
      raw.image.width = r.u32();
      raw.image.channels = r.u32();
      const std::size_t n_pixels = raw.image.height * raw.image.width * raw.image.channels;
      if (n_pixels * 4 > r.remaining()) throw TruncatedError("fixture: truncated pixels");
      raw.image.pixels.resize(n_pixels);
      for (auto& v : raw.image.pixels) v = read_f32("pixels");
      rec.raw = std::move(raw);
    }
    f.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) {
    throw FixtureError("fixture: " + std::to_string(r.remaining()) + " trailing bytes after declared records");
  }
  return f;
}

void write_fixture(const std::filesystem::path& path, const FixtureFile& fixture) {
  write_file(path, encode_fixture(fixture));
}

FixtureFile read_fixture(const std::filesystem::path& path) { return decode_fixture(read_file(path)); }

FixtureFile make_fixture(const std::vector<data::Sample>& samples, const std::vector<EmbeddingPair>& embeddings,
                         bool include_raw) {
  if (samples.size() != embeddings.size()) throw WidthError("make_fixture: one embedding pair per sample required");
  FixtureFile f;
  f.has_raw = include_raw;
  f.width = embeddings.empty() ? 0 : static_cast<std::uint32_t>(embeddings.front().first.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& [text, image] = embeddings[i];
    if (text.size() != f.width || image.size() != f.width) {
      throw WidthError("make_fixture: embedding widths must all equal " + std::to_string(f.width));
    }
    FixtureRecord rec{samples[i].id, text, image, std::nullopt};
    if (include_raw) rec.raw = RawInputs{samples[i].tokens, samples[i].image};
    f.records.push_back(std::move(rec));
  }
  return f;
}

}  // namespace clfa::io
