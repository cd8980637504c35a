#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "urcsa/network.hpp"

// Binary parameter file, all integers little-endian:
//
//   magic        8 bytes  "URCSACKP"
//   version      u32      kCheckpointVersion
//   config_len   u32
//   config       config_len bytes of key=value text
//   config_hash  u64      FNV-1a of the config bytes
//   count        u32      number of entries
//   entries      count x { u32 name_len, name bytes, u32 ndim, ndim x u32 dims,
//                          prod(dims) x f32 }
//
// Models store ModelConfig::to_text() as the config; other parameter files
// (e.g. feature extractor weights) store their own description.
namespace urcsa {

inline constexpr char kCheckpointMagic[8] = {'U', 'R', 'C', 'S', 'A', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<CheckpointEntry> entries;
};

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  std::string take() { return std::move(bytes_); }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  const char* take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw TruncatedError("parameter file truncated at byte " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32() {
    const auto* p = reinterpret_cast<const unsigned char*>(take(4));
    return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | std::uint64_t(u32()) << 32;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.config_text.size()));
  w.raw(ckpt.config_text.data(), ckpt.config_text.size());
  w.u64(fnv1a64(ckpt.config_text));
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (numel(e.shape) != e.values.size()) throw ShapeError("entry '" + e.name + "' shape/value count mismatch");
    w.u32(static_cast<std::uint32_t>(e.name.size()));
    w.raw(e.name.data(), e.name.size());
    w.u32(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.u32(static_cast<std::uint32_t>(d));
    for (float v : e.values) w.f32(v);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (bytes.size() < sizeof kCheckpointMagic ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw FormatError("not a parameter file (bad magic)");
  }
  r.take(sizeof kCheckpointMagic);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw VersionError("unsupported parameter file version " + std::to_string(version) + " (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  Checkpoint ckpt;
  const std::uint32_t config_len = r.u32();
  ckpt.config_text.assign(r.take(config_len), config_len);
  if (r.u64() != fnv1a64(ckpt.config_text)) throw ConfigMismatchError("config hash does not match stored config");
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint32_t name_len = r.u32();
    e.name.assign(r.take(name_len), name_len);
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw FormatError("entry '" + e.name + "' has implausible rank " + std::to_string(ndim));
    for (std::uint32_t d = 0; d < ndim; ++d) e.shape.push_back(r.u32());
    const std::size_t n = numel(e.shape);
    if (n * sizeof(float) > bytes.size()) throw TruncatedError("entry '" + e.name + "' larger than file");
    e.values.resize(n);
    for (auto& v : e.values) v = r.f32();
    ckpt.entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last entry");
  return ckpt;
}

inline void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileNotFoundError("cannot open parameter file '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <typename T>
Checkpoint make_checkpoint(const ParameterSet<T>& params, std::string config_text) {
  Checkpoint ckpt;
  ckpt.config_text = std::move(config_text);
  for (const auto& p : params.params()) {
    CheckpointEntry e{p.name, p.value.shape(), {}};
    e.values.reserve(p.value.numel());
    for (T v : p.value.data()) e.values.push_back(static_cast<float>(v));
    ckpt.entries.push_back(std::move(e));
  }
  return ckpt;
}

// Copies entries into an existing parameter set. Names, order and shapes must
// match exactly.
template <typename T>
void apply_checkpoint(ParameterSet<T>& params, const Checkpoint& ckpt) {
  auto& list = params.params();
  if (list.size() != ckpt.entries.size()) {
    throw ShapeError("parameter file has " + std::to_string(ckpt.entries.size()) + " entries, model has " +
                     std::to_string(list.size()));
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    const auto& e = ckpt.entries[i];
    if (e.name != list[i].name || e.shape != list[i].value.shape()) {
      throw ShapeError("entry " + std::to_string(i) + " '" + e.name + "' " + to_string(e.shape) +
                       " does not match parameter '" + list[i].name + "' " + to_string(list[i].value.shape()));
    }
  }
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto dst = list[i].value.mutable_data();
    const auto& src = ckpt.entries[i].values;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
  }
}

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path) {
  write_checkpoint(make_checkpoint(model.params(), model.config().to_text()), path);
}

// Loads into an already constructed model; any shape difference (for example
// a different base_channels) is a ShapeError.
template <typename T>
void load_checkpoint_into(Model<T>& model, const std::filesystem::path& path) {
  apply_checkpoint(model.params(), read_checkpoint(path));
}

// Builds the model described by the stored config and loads its parameters.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(ckpt.config_text);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config invalid: ") + e.what());
  }
  Model<T> model(cfg);
  apply_checkpoint(model.params(), ckpt);
  return model;
}

}  // namespace urcsa
