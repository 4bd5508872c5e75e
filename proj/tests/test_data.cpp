#include <gtest/gtest.h>

#include <zlib.h>

#include <filesystem>
#include <fstream>

#include "scsp/data.hpp"

namespace scsp {
namespace {

std::vector<std::uint8_t> gzip(const std::vector<std::uint8_t>& in) {
  z_stream zs{};
  EXPECT_EQ(deflateInit2(&zs, 6, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY), Z_OK);
  std::vector<std::uint8_t> out(deflateBound(&zs, in.size()) + 32);
  zs.next_in = const_cast<Bytef*>(in.data());
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(out.size());
  EXPECT_EQ(deflate(&zs, Z_FINISH), Z_STREAM_END);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

IdxImages sample_images() {
  IdxImages img{.count = 3, .rows = 2, .cols = 2};
  img.pixels = {0, 255, 1, 2, 3, 4, 5, 6, 7, 8, 9, 128};
  return img;
}

TEST(Idx, RoundTrip) {
  const auto img = sample_images();
  const auto bytes = encode_idx_images(img);
  EXPECT_EQ(bytes.size(), 16u + 12u);
  EXPECT_EQ(bytes[3], 0x03);
  const auto back = parse_idx_images(bytes);
  EXPECT_EQ(back.count, 3u);
  EXPECT_EQ(back.rows, 2u);
  EXPECT_EQ(back.pixels, img.pixels);

  const std::vector<int> labels{0, 9, 4};
  EXPECT_EQ(parse_idx_labels(encode_idx_labels(labels)), labels);
}

TEST(Idx, HeaderErrors) {
  auto bytes = encode_idx_images(sample_images());
  EXPECT_THROW(parse_idx_images(std::span(bytes).first(10)), LengthError);
  EXPECT_THROW(parse_idx_images(std::span(bytes).first(20)), LengthError);
  bytes[3] = 0x01;
  EXPECT_THROW(parse_idx_images(bytes), FormatError);

  auto lab = encode_idx_labels(std::vector<int>{1, 2});
  EXPECT_THROW(parse_idx_labels(std::span(lab).first(9)), LengthError);
  lab[9] = 10;
  EXPECT_THROW(parse_idx_labels(lab), DataError);
  lab[3] = 0x03;
  EXPECT_THROW(parse_idx_labels(lab), FormatError);
}

TEST(Idx, GzipFilesAreInflated) {
  const auto dir = std::filesystem::temp_directory_path() / "scsp_test_data";
  std::filesystem::create_directories(dir);
  const auto raw = encode_idx_images(sample_images());
  const auto gz = gzip(raw);
  ASSERT_EQ(gz[0], 0x1f);
  {
    std::ofstream f(dir / "img.gz", std::ios::binary);
    f.write(reinterpret_cast<const char*>(gz.data()), static_cast<std::streamsize>(gz.size()));
    std::ofstream g(dir / "lab", std::ios::binary);
    const auto lab = encode_idx_labels(std::vector<int>{1, 2, 3});
    g.write(reinterpret_cast<const char*>(lab.data()), static_cast<std::streamsize>(lab.size()));
  }
  EXPECT_EQ(read_file_bytes(dir / "img.gz"), raw);
  const auto ds = load_idx_dataset(dir / "img.gz", dir / "lab", 2);
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_DOUBLE_EQ(ds.pixel(0, 1), 1.0);
  EXPECT_EQ(ds.labels, (std::vector<int>{1, 2}));
  EXPECT_THROW(read_file_bytes(dir / "missing"), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Idx, CorruptGzipRejected) {
  auto gz = gzip(encode_idx_images(sample_images()));
  gz.resize(gz.size() / 2);
  EXPECT_ANY_THROW(detail::gunzip(gz));
}

TEST(Dataset, CountMismatch) {
  EXPECT_THROW(make_dataset(sample_images(), {1, 2}), DataError);
}

TEST(Batches, SizesAndCoverage) {
  const auto b = batches(10, 4, 1, 0);
  ASSERT_EQ(b.size(), 3u);
  EXPECT_EQ(b[0].size(), 4u);
  EXPECT_EQ(b[1].size(), 4u);
  EXPECT_EQ(b[2].size(), 2u);
  std::vector<std::size_t> all;
  for (const auto& x : b) all.insert(all.end(), x.begin(), x.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(all[i], i);
  EXPECT_THROW(batches(10, 0, 1, 0), ParameterError);
}

TEST(Batches, PermutationDependsOnSeedAndEpoch) {
  EXPECT_EQ(batches(100, 10, 5, 2), batches(100, 10, 5, 2));
  EXPECT_NE(batches(100, 10, 5, 2), batches(100, 10, 5, 3));
  EXPECT_NE(batches(100, 10, 5, 2), batches(100, 10, 6, 2));
  const auto plain = batches(5, 2, 5, 2, false);
  EXPECT_EQ(plain, (std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}, {4}}));
}

TEST(Mnist, FilesParseWhenPresent) {
  const std::filesystem::path dir = SCSP_MNIST_DIR;
  if (!std::filesystem::exists(dir / "t10k-images-idx3-ubyte")) GTEST_SKIP() << "MNIST not found in " << dir;
  const auto ds = load_idx_dataset(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte");
  EXPECT_EQ(ds.size(), 10000u);
  EXPECT_EQ(ds.rows, 28u);
  EXPECT_EQ(ds.labels[0], 7);
}

}  // namespace
}  // namespace scsp
