#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "scsp/data.hpp"
#include "scsp/errors.hpp"
#include "scsp/nn.hpp"

// Checkpoint container, all integers little-endian:
//
//   "SCSPCKPT"                       8-byte magic
//   u32 version (= 1)
//   u64 rng_seed, u64 epoch
//   u32 input h, w, c
//   u32 n_specs, then per spec:
//       u8 kind, u8 prunable, u16 name length, name bytes,
//       u32 kernel, c_in, c_out, stride, padding, window, fan_in, fan_out
//   u32 n_masks, then per mask:
//       u32 layer_id, u32 length, ceil(length / 8) bytes of active bits
//       (bit i of byte i / 8, LSB first),
//       u32 n, n x u32 last pruned group ids,
//       u32 n, n x u32 last pruned filter ids
//   per parameterized layer in spec order:
//       u64 n, n x f64 weights; u64 n, n x f64 biases
//   "SCSPEND!"                       8-byte trailer

namespace scsp {

inline constexpr char kCheckpointMagic[8] = {'S', 'C', 'S', 'P', 'C', 'K', 'P', 'T'};
inline constexpr char kCheckpointTrailer[8] = {'S', 'C', 'S', 'P', 'E', 'N', 'D', '!'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(v);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  const std::vector<std::uint8_t>& bytes() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw LengthError("checkpoint: truncated at byte " + std::to_string(pos_));
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, b_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    std::make_unsigned_t<T> u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      u |= static_cast<std::make_unsigned_t<T>>(static_cast<std::make_unsigned_t<T>>(b_[pos_ + i]) << (8 * i));
    pos_ += sizeof(T);
    return static_cast<T>(u);
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::size_t remaining() const { return b_.size() - pos_; }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const NetworkState& s) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic, 8);
  w.le<std::uint32_t>(kCheckpointVersion);
  w.le<std::uint64_t>(s.rng_seed);
  w.le<std::uint64_t>(s.epoch);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.input.h));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.input.w));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.input.c));
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.specs.size()));
  for (const auto& sp : s.specs) {
    w.le<std::uint8_t>(static_cast<std::uint8_t>(sp.kind));
    w.le<std::uint8_t>(sp.prunable ? 1 : 0);
    w.le<std::uint16_t>(static_cast<std::uint16_t>(sp.name.size()));
    w.raw(sp.name.data(), sp.name.size());
    for (std::size_t v : {sp.kernel, sp.c_in, sp.c_out, sp.stride, sp.padding, sp.window, sp.fan_in, sp.fan_out})
      w.le<std::uint32_t>(static_cast<std::uint32_t>(v));
  }
  w.le<std::uint32_t>(static_cast<std::uint32_t>(s.masks.size()));
  for (const auto& m : s.masks) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(m.layer_id));
    w.le<std::uint32_t>(static_cast<std::uint32_t>(m.active.size()));
    std::vector<std::uint8_t> bits((m.active.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < m.active.size(); ++i)
      if (m.active[i]) bits[i / 8] = static_cast<std::uint8_t>(bits[i / 8] | (1u << (i % 8)));
    w.raw(bits.data(), bits.size());
    for (const auto* list : {&m.last_pruned_groups, &m.last_pruned_filters}) {
      w.le<std::uint32_t>(static_cast<std::uint32_t>(list->size()));
      for (std::size_t v : *list) w.le<std::uint32_t>(static_cast<std::uint32_t>(v));
    }
  }
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    if (!s.specs[i].has_params()) continue;
    w.le<std::uint64_t>(s.weights[i].numel());
    for (double v : s.weights[i].data) w.f64(v);
    w.le<std::uint64_t>(s.biases[i].size());
    for (double v : s.biases[i]) w.f64(v);
  }
  w.raw(kCheckpointTrailer, 8);
  return w.bytes();
}

/// Decodes a checkpoint. When `expected` is non-empty the stored
/// architecture must match it exactly. Nothing is returned on failure.
inline NetworkState decode_checkpoint(std::span<const std::uint8_t> bytes,
                                      const std::vector<LayerSpec>& expected = {}) {
  detail::ByteReader r(bytes);
  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw VersionError("checkpoint: bad magic");
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) throw VersionError("checkpoint: unsupported version " + std::to_string(version));

  NetworkState s;
  s.rng_seed = r.le<std::uint64_t>();
  s.epoch = r.le<std::uint64_t>();
  s.input.h = r.le<std::uint32_t>();
  s.input.w = r.le<std::uint32_t>();
  s.input.c = r.le<std::uint32_t>();
  const auto n_specs = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_specs; ++i) {
    LayerSpec sp;
    const auto kind = r.le<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(LayerKind::softmax_xent)) throw VersionError("checkpoint: unknown layer kind");
    sp.kind = static_cast<LayerKind>(kind);
    sp.prunable = r.le<std::uint8_t>() != 0;
    sp.name.resize(r.le<std::uint16_t>());
    r.raw(sp.name.data(), sp.name.size());
    for (std::size_t* f : {&sp.kernel, &sp.c_in, &sp.c_out, &sp.stride, &sp.padding, &sp.window, &sp.fan_in, &sp.fan_out})
      *f = r.le<std::uint32_t>();
    s.specs.push_back(std::move(sp));
  }
  if (!expected.empty() && s.specs != expected) throw VersionError("checkpoint: architecture mismatch");
  try {
    shape_chain(s.specs, s.input);
  } catch (const DimensionError& e) {
    throw VersionError(std::string("checkpoint: inconsistent architecture: ") + e.what());
  }

  const auto n_masks = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_masks; ++i) {
    PruneMask m;
    m.layer_id = r.le<std::uint32_t>();
    const auto len = r.le<std::uint32_t>();
    if (m.layer_id >= s.specs.size() || !s.specs[m.layer_id].has_params() || len != s.specs[m.layer_id].n_filters())
      throw VersionError("checkpoint: mask does not match architecture");
    std::vector<std::uint8_t> bits((len + 7) / 8);
    r.raw(bits.data(), bits.size());
    m.active.resize(len);
    for (std::size_t k = 0; k < len; ++k) m.active[k] = (bits[k / 8] >> (k % 8)) & 1u;
    for (auto* list : {&m.last_pruned_groups, &m.last_pruned_filters}) {
      const auto n = r.le<std::uint32_t>();
      r.need(std::size_t{n} * 4);
      for (std::uint32_t k = 0; k < n; ++k) list->push_back(r.le<std::uint32_t>());
    }
    s.masks.push_back(std::move(m));
  }

  s.weights.resize(s.specs.size());
  s.biases.resize(s.specs.size());
  for (std::size_t i = 0; i < s.specs.size(); ++i) {
    const auto& sp = s.specs[i];
    if (!sp.has_params()) continue;
    Tensor w(sp.weight_shape());
    if (r.le<std::uint64_t>() != w.numel()) throw VersionError("checkpoint: weight count mismatch for " + sp.name);
    r.need(w.numel() * 8);
    for (double& v : w.data) v = r.f64();
    const auto nb = r.le<std::uint64_t>();
    if (nb != sp.n_filters()) throw VersionError("checkpoint: bias count mismatch for " + sp.name);
    r.need(nb * 8);
    std::vector<double> b(nb);
    for (double& v : b) v = r.f64();
    s.weights[i] = std::move(w);
    s.biases[i] = std::move(b);
  }
  char trailer[8];
  r.raw(trailer, 8);
  if (std::memcmp(trailer, kCheckpointTrailer, 8) != 0) throw VersionError("checkpoint: bad trailer");
  if (r.remaining() != 0) throw LengthError("checkpoint: trailing bytes");
  return s;
}

inline void save_checkpoint(const NetworkState& s, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(s);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write checkpoint " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("failed writing checkpoint " + path.string());
}

inline NetworkState load_checkpoint(const std::filesystem::path& path, const std::vector<LayerSpec>& expected = {}) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes, expected);
}

}  // namespace scsp
