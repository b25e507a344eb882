#include "contmask/checkpoint.hpp"

#include <iterator>
#include <map>
#include <string>

#include "contmask/dataset_io.hpp"

namespace contmask {
namespace {

constexpr const char* kMetaName = "meta.config";

struct RawTensor {
  std::vector<std::uint32_t> dims;
  std::vector<double> values;
};

void put_tensor(std::vector<std::uint8_t>& out, const std::string& name,
                const std::vector<std::uint32_t>& dims, const double* data, std::size_t count) {
  le::put_u16(out, static_cast<std::uint16_t>(name.size()));
  out.insert(out.end(), name.begin(), name.end());
  le::put_u8(out, static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) le::put_u32(out, d);
  for (std::size_t i = 0; i < count; ++i) le::put_f64(out, data[i]);
}

std::vector<double> config_values(const ModelConfig& c) {
  return {static_cast<double>(c.channels),        static_cast<double>(c.height),
          static_cast<double>(c.width),           static_cast<double>(c.queries),
          static_cast<double>(c.dim),             static_cast<double>(c.backbone_hidden),
          static_cast<double>(c.ffn_hidden),
          c.mask_activation == MaskActivation::softmax ? 0.0 : 1.0};
}

}  // namespace

std::vector<std::uint8_t> serialize_params(const ModelParams& params) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  le::put_u16(out, kCheckpointVersion);
  std::uint32_t count = 1;
  params.visit([&](const char*, const auto&) { ++count; });
  le::put_u32(out, count);

  const auto meta = config_values(params.config);
  put_tensor(out, kMetaName, {static_cast<std::uint32_t>(meta.size())}, meta.data(), meta.size());
  params.visit([&](const char* name, const auto& t) {
    std::vector<std::uint32_t> dims;
    if (t.ColsAtCompileTime == 1) {
      dims = {static_cast<std::uint32_t>(t.rows())};
    } else {
      dims = {static_cast<std::uint32_t>(t.rows()), static_cast<std::uint32_t>(t.cols())};
    }
    put_tensor(out, name, dims, t.data(), static_cast<std::size_t>(t.size()));
  });
  return out;
}

ModelParams deserialize_params(const std::vector<std::uint8_t>& bytes) {
  le::Reader in(bytes);
  in.expect(kCheckpointMagic);
  if (const auto v = in.u16(); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  const auto count = in.u32();
  std::map<std::string, RawTensor> table;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto len = in.u16();
    std::string name;
    for (std::uint16_t i = 0; i < len; ++i) name.push_back(static_cast<char>(in.u8()));
    RawTensor t;
    const auto rank = in.u8();
    std::size_t n = 1;
    for (std::uint8_t r = 0; r < rank; ++r) {
      t.dims.push_back(in.u32());
      n *= t.dims.back();
    }
    t.values.resize(n);
    for (auto& v : t.values) v = in.f64();
    if (!table.emplace(name, std::move(t)).second) throw FormatError("duplicate tensor " + name);
  }
  if (!in.done()) throw FormatError("trailing bytes in checkpoint");

  const auto meta_it = table.find(kMetaName);
  if (meta_it == table.end() || meta_it->second.values.size() != 8) {
    throw FormatError("checkpoint lacks model config");
  }
  const auto& m = meta_it->second.values;
  ModelParams p;
  p.config.channels = static_cast<int>(m[0]);
  p.config.height = static_cast<int>(m[1]);
  p.config.width = static_cast<int>(m[2]);
  p.config.queries = static_cast<int>(m[3]);
  p.config.dim = static_cast<int>(m[4]);
  p.config.backbone_hidden = static_cast<int>(m[5]);
  p.config.ffn_hidden = static_cast<int>(m[6]);
  p.config.mask_activation = m[7] == 0.0 ? MaskActivation::softmax : MaskActivation::sigmoid;

  p.visit([&](const char* name, auto& t) {
    const auto it = table.find(name);
    if (it == table.end()) throw FormatError(std::string("checkpoint lacks tensor ") + name);
    const auto& raw = it->second;
    const bool is_vector = t.ColsAtCompileTime == 1;
    if (raw.dims.size() != (is_vector ? 1u : 2u)) {
      throw FormatError(std::string("wrong rank for tensor ") + name);
    }
    if (is_vector) {
      t.resize(raw.dims[0], 1);
    } else {
      t.resize(raw.dims[0], raw.dims[1]);
    }
    std::copy(raw.values.begin(), raw.values.end(), t.data());
  });
  if (p.cls_w.rows() != p.cls_b.rows() || p.queries.rows() != p.config.queries) {
    throw FormatError("inconsistent tensor shapes in checkpoint");
  }
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const ModelParams& params) {
  write_file(path, serialize_params(params));
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  return deserialize_params(read_file(path));
}

}  // namespace contmask
