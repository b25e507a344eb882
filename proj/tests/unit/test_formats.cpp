#include <gtest/gtest.h>

#include <filesystem>

#include "contmask/checkpoint.hpp"
#include "contmask/dataset_io.hpp"

namespace contmask {
namespace {

BinaryMask random_mask(Rng& rng, int h, int w, double density) {
  BinaryMask m(h, w);
  for (auto& b : m.bits) b = rng.bernoulli(density);
  return m;
}

TEST(Rle, KnownRuns) {
  BinaryMask m(2, 3);
  m.at(0, 1) = 1;
  m.at(0, 2) = 1;
  m.at(1, 0) = 1;
  EXPECT_EQ(rle_encode(m), (std::vector<std::uint32_t>{1, 3, 2}));
  BinaryMask starts_set(1, 2);
  starts_set.at(0, 0) = 1;
  EXPECT_EQ(rle_encode(starts_set), (std::vector<std::uint32_t>{0, 1, 1}));
}

TEST(Rle, RoundTrip) {
  Rng rng(3);
  for (int k = 0; k < 200; ++k) {
    const int h = rng.uniform_int(1, 12), w = rng.uniform_int(1, 12);
    const auto m = random_mask(rng, h, w, rng.uniform());
    EXPECT_EQ(rle_decode(rle_encode(m), h, w), m);
  }
}

TEST(Rle, RejectsWrongLength) {
  EXPECT_THROW(rle_decode({3, 2}, 2, 3), FormatError);
}

TEST(Container, RoundTrip) {
  const auto palette = make_palette(4, 2, 3, 1);
  DatasetSpec spec;
  spec.samples_per_class = 3;
  auto data = build_dataset(palette, spec, 8);
  for (auto& s : data) s.seed = 0;  // seeds are kept in the manifest only
  const auto bytes = encode_records(data);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CMFD");
  EXPECT_EQ(decode_records(bytes), data);

  const auto path = std::filesystem::temp_directory_path() / "contmask_roundtrip.cmfd";
  write_container(path, data);
  EXPECT_EQ(read_container(path), data);
  std::filesystem::remove(path);
}

TEST(Container, HeaderLayout) {
  SceneSample s;
  s.image = Image(1, 1, 2);
  s.image.data = {0.25, -1.0};
  s.segments.push_back({7, BinaryMask(1, 2)});
  s.segments[0].mask.at(0, 1) = 1;
  const auto bytes = encode_records({s});
  // magic, version, C, H, W, count
  const std::vector<std::uint8_t> head{'C', 'M', 'F', 'D', 1, 0, 1, 0, 1, 0, 2, 0, 1, 0};
  ASSERT_GE(bytes.size(), head.size());
  EXPECT_TRUE(std::equal(head.begin(), head.end(), bytes.begin()));
  // 0.25 as little-endian f64 is 00 .. 00 d0 3f.
  EXPECT_EQ(bytes[14 + 6], 0xd0);
  EXPECT_EQ(bytes[14 + 7], 0x3f);
}

TEST(Container, RejectsCorruption) {
  SceneSample s;
  s.image = Image(1, 2, 2);
  s.segments.push_back({1, BinaryMask(2, 2)});
  s.segments[0].mask.at(1, 1) = 1;
  auto bytes = encode_records({s});

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_records(bad_magic), FormatError);

  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  EXPECT_THROW(decode_records(truncated), FormatError);

  auto bad_version = bytes;
  bad_version[4] = 9;
  EXPECT_THROW(decode_records(bad_version), FormatError);

  EXPECT_THROW(read_container("/nonexistent/contmask.cmfd"), FormatError);
}

ModelParams small_params(int classes, std::uint64_t seed) {
  ModelConfig mc;
  mc.height = 8;
  mc.width = 8;
  mc.queries = 4;
  mc.dim = 8;
  mc.backbone_hidden = 4;
  mc.ffn_hidden = 6;
  Rng rng(seed);
  return init_params(mc, classes, rng, 0.3);
}

void expect_params_equal(const ModelParams& a, const ModelParams& b) {
  EXPECT_EQ(a.config, b.config);
  std::vector<std::pair<std::string, Matrix>> ta, tb;
  a.visit([&](const char* n, const auto& t) { ta.emplace_back(n, Matrix(t)); });
  b.visit([&](const char* n, const auto& t) { tb.emplace_back(n, Matrix(t)); });
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(ta[i].first, tb[i].first);
    ASSERT_EQ(ta[i].second.rows(), tb[i].second.rows());
    ASSERT_EQ(ta[i].second.cols(), tb[i].second.cols());
    EXPECT_TRUE((ta[i].second.array() == tb[i].second.array()).all()) << ta[i].first;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto p = small_params(5, 2);
  const auto bytes = serialize_params(p);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "CMFK");
  expect_params_equal(deserialize_params(bytes), p);

  const auto path = std::filesystem::temp_directory_path() / "contmask_roundtrip.cmfk";
  save_checkpoint(path, p);
  expect_params_equal(load_checkpoint(path), p);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsCorruption) {
  auto bytes = serialize_params(small_params(3, 1));
  auto bad = bytes;
  bad[3] = 'D';
  EXPECT_THROW(deserialize_params(bad), FormatError);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(deserialize_params(bytes), FormatError);
}

}  // namespace
}  // namespace contmask
