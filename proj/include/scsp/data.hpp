#pragma once

#include <zlib.h>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "scsp/errors.hpp"
#include "scsp/rng.hpp"

namespace scsp {

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxImages {
  std::size_t count = 0, rows = 0, cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols
};

// Images stay as bytes; pixel(i, p) is the normalized value byte / 255.
struct Dataset {
  std::size_t rows = 28, cols = 28;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return rows * cols; }
  double pixel(std::size_t i, std::size_t p) const { return pixels[i * image_size() + p] / 255.0; }

  // First n samples (or all when n is 0 or exceeds the size).
  Dataset head(std::size_t n) const {
    if (n == 0 || n >= size()) return *this;
    Dataset d{rows, cols, {}, {}};
    d.pixels.assign(pixels.begin(), pixels.begin() + static_cast<std::ptrdiff_t>(n * image_size()));
    d.labels.assign(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n));
    return d;
  }
};

namespace detail {

inline std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::vector<std::uint8_t> gunzip(std::span<const std::uint8_t> in) {
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("gunzip: inflateInit2 failed");
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  std::vector<std::uint8_t> out;
  std::uint8_t buf[1 << 16];
  int rc = Z_OK;
  while (rc != Z_STREAM_END) {
    zs.next_out = buf;
    zs.avail_out = sizeof(buf);
    rc = inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw FormatError("gunzip: corrupt or truncated gzip stream");
    }
    out.insert(out.end(), buf, buf + (sizeof(buf) - zs.avail_out));
    if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
      inflateEnd(&zs);
      throw LengthError("gunzip: truncated gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

}  // namespace detail

/// Reads a whole file; gzip-compressed content is inflated transparently.
inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return detail::gunzip(bytes);
  return bytes;
}

inline IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16) throw LengthError("idx images: header truncated");
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxImageMagic) throw FormatError("idx images: bad magic " + std::to_string(magic));
  IdxImages img;
  img.count = detail::read_be32(bytes, 4);
  img.rows = detail::read_be32(bytes, 8);
  img.cols = detail::read_be32(bytes, 12);
  const std::size_t payload = img.count * img.rows * img.cols;
  if (bytes.size() - 16 < payload)
    throw LengthError("idx images: payload has " + std::to_string(bytes.size() - 16) + " bytes, expected " +
                      std::to_string(payload));
  img.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
  return img;
}

inline std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes, int n_classes = 10) {
  if (bytes.size() < 8) throw LengthError("idx labels: header truncated");
  const std::uint32_t magic = detail::read_be32(bytes, 0);
  if (magic != kIdxLabelMagic) throw FormatError("idx labels: bad magic " + std::to_string(magic));
  const std::size_t n = detail::read_be32(bytes, 4);
  if (bytes.size() - 8 < n) throw LengthError("idx labels: payload truncated");
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = bytes[8 + i];
    if (labels[i] >= n_classes) throw DataError("idx labels: label " + std::to_string(labels[i]) + " out of range");
  }
  return labels;
}

inline std::vector<std::uint8_t> encode_idx_images(const IdxImages& img) {
  std::vector<std::uint8_t> out;
  detail::write_be32(out, kIdxImageMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(img.count));
  detail::write_be32(out, static_cast<std::uint32_t>(img.rows));
  detail::write_be32(out, static_cast<std::uint32_t>(img.cols));
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

inline std::vector<std::uint8_t> encode_idx_labels(std::span<const int> labels) {
  std::vector<std::uint8_t> out;
  detail::write_be32(out, kIdxLabelMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (int l : labels) out.push_back(static_cast<std::uint8_t>(l));
  return out;
}

inline Dataset make_dataset(IdxImages img, std::vector<int> labels) {
  if (img.count != labels.size())
    throw DataError("dataset: " + std::to_string(img.count) + " images but " + std::to_string(labels.size()) +
                    " labels");
  return Dataset{img.rows, img.cols, std::move(img.pixels), std::move(labels)};
}

/// Loads an image/label IDX pair, keeping the first `limit` samples (0 = all).
inline Dataset load_idx_dataset(const std::filesystem::path& images, const std::filesystem::path& labels,
                                std::size_t limit = 0) {
  return make_dataset(parse_idx_images(read_file_bytes(images)), parse_idx_labels(read_file_bytes(labels)))
      .head(limit);
}

/// Batch index lists for one epoch. The permutation depends only on
/// (seed, epoch); the last partial batch is kept.
inline std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch, bool shuffle_samples = true) {
  if (batch_size == 0) throw ParameterError("batches: batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle_samples) {
    Rng rng(derive_seed(seed, 0xba7c0000ULL + epoch));
    shuffle(order, rng);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
  return out;
}

inline std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                                     std::uint64_t epoch, bool shuffle_samples = true) {
  return batches(ds.size(), batch_size, seed, epoch, shuffle_samples);
}

}  // namespace scsp
