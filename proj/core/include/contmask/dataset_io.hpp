#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "contmask/synthdata.hpp"

namespace contmask {

inline constexpr char kDatasetMagic[4] = {'C', 'M', 'F', 'D'};
inline constexpr std::uint16_t kDatasetVersion = 1;

/// Run-length code of a mask in row-major order: alternating run lengths,
/// starting with a (possibly empty) run of zeros.
std::vector<std::uint32_t> rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const std::vector<std::uint32_t>& runs, int height, int width);

/// One record: magic, version u16, C/H/W u16, segment count u16, the image as
/// little-endian f64, then per segment a class id u16, a u32 run count and
/// the u32 runs. Records are concatenated in a container file.
void append_record(std::vector<std::uint8_t>& out, const SceneSample& sample);
std::vector<std::uint8_t> encode_records(const std::vector<SceneSample>& samples);
/// Sample seeds are not part of the record; they live in the manifest.
std::vector<SceneSample> decode_records(const std::vector<std::uint8_t>& bytes);

void write_container(const std::filesystem::path& path, const std::vector<SceneSample>& samples);
std::vector<SceneSample> read_container(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Little-endian byte helpers shared by the binary formats.
namespace le {
void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v);
void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v);
void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f64(std::vector<std::uint8_t>& out, double v);

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}
  bool done() const { return pos_ == bytes_.size(); }
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  double f64();
  void expect(const char (&magic)[4]);

 private:
  void need(std::size_t n) const;
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};
}  // namespace le

}  // namespace contmask
