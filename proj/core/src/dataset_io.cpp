#include "contmask/dataset_io.hpp"

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <limits>

namespace contmask {

namespace le {
void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

void Reader::need(std::size_t n) const {
  if (bytes_.size() - pos_ < n) throw FormatError("truncated record");
}
std::uint8_t Reader::u8() {
  need(1);
  return bytes_[pos_++];
}
std::uint16_t Reader::u16() {
  need(2);
  const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}
std::uint32_t Reader::u32() {
  need(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 4;
  return v;
}
double Reader::f64() {
  need(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
  pos_ += 8;
  return std::bit_cast<double>(v);
}
void Reader::expect(const char (&magic)[4]) {
  need(4);
  for (int i = 0; i < 4; ++i) {
    if (bytes_[pos_ + i] != static_cast<std::uint8_t>(magic[i])) throw FormatError("bad magic");
  }
  pos_ += 4;
}
}  // namespace le

std::vector<std::uint32_t> rle_encode(const BinaryMask& mask) {
  std::vector<std::uint32_t> runs;
  std::uint8_t current = 0;
  std::uint32_t length = 0;
  for (auto b : mask.bits) {
    const std::uint8_t v = b ? 1 : 0;
    if (v != current) {
      runs.push_back(length);
      current = v;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

BinaryMask rle_decode(const std::vector<std::uint32_t>& runs, int height, int width) {
  BinaryMask mask(height, width);
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (auto len : runs) {
    if (len > mask.size() - pos) throw FormatError("run-length code overflows the mask");
    std::fill_n(mask.bits.begin() + static_cast<std::ptrdiff_t>(pos), len, value);
    pos += len;
    value ^= 1;
  }
  if (pos != mask.size()) throw FormatError("run-length code does not cover the mask");
  return mask;
}

void append_record(std::vector<std::uint8_t>& out, const SceneSample& sample) {
  const auto& img = sample.image;
  constexpr auto kMax = std::numeric_limits<std::uint16_t>::max();
  if (img.channels > kMax || img.height > kMax || img.width > kMax || sample.segments.size() > kMax) {
    throw FormatError("sample dimensions exceed the u16 record header");
  }
  out.insert(out.end(), std::begin(kDatasetMagic), std::end(kDatasetMagic));
  le::put_u16(out, kDatasetVersion);
  le::put_u16(out, static_cast<std::uint16_t>(img.channels));
  le::put_u16(out, static_cast<std::uint16_t>(img.height));
  le::put_u16(out, static_cast<std::uint16_t>(img.width));
  le::put_u16(out, static_cast<std::uint16_t>(sample.segments.size()));
  for (double v : img.data) le::put_f64(out, v);
  for (const auto& seg : sample.segments) {
    if (seg.class_id < 0 || seg.class_id > kMax) throw FormatError("class id exceeds u16");
    le::put_u16(out, static_cast<std::uint16_t>(seg.class_id));
    const auto runs = rle_encode(seg.mask);
    le::put_u32(out, static_cast<std::uint32_t>(runs.size()));
    for (auto r : runs) le::put_u32(out, r);
  }
}

std::vector<std::uint8_t> encode_records(const std::vector<SceneSample>& samples) {
  std::vector<std::uint8_t> out;
  for (const auto& s : samples) append_record(out, s);
  return out;
}

std::vector<SceneSample> decode_records(const std::vector<std::uint8_t>& bytes) {
  std::vector<SceneSample> out;
  le::Reader in(bytes);
  while (!in.done()) {
    in.expect(kDatasetMagic);
    if (const auto version = in.u16(); version != kDatasetVersion) {
      throw FormatError("unsupported dataset version " + std::to_string(version));
    }
    const int c = in.u16(), h = in.u16(), w = in.u16();
    const int nseg = in.u16();
    SceneSample s;
    s.image = Image(c, h, w);
    for (auto& v : s.image.data) v = in.f64();
    for (int k = 0; k < nseg; ++k) {
      GtSegment seg;
      seg.class_id = in.u16();
      std::vector<std::uint32_t> runs(in.u32());
      for (auto& r : runs) r = in.u32();
      seg.mask = rle_decode(runs, h, w);
      s.segments.push_back(std::move(seg));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << text;
}

void write_container(const std::filesystem::path& path, const std::vector<SceneSample>& samples) {
  write_file(path, encode_records(samples));
}

std::vector<SceneSample> read_container(const std::filesystem::path& path) {
  return decode_records(read_file(path));
}

}  // namespace contmask
