#include <gtest/gtest.h>
#include <zlib.h>

#include <Eigen/LU>

#include <cstring>
#include <fstream>

#include "deepbet/error.hpp"
#include "deepbet/geometry.hpp"
#include "deepbet/network.hpp"
#include "deepbet/nifti.hpp"
#include "deepbet/weights_io.hpp"
#include "support.hpp"

namespace deepbet {
namespace {

// Byte-level header writer independent of the library encoder.
struct RawHeader {
  std::vector<std::byte> bytes = std::vector<std::byte>(352, std::byte{0});

  template <typename T>
  void put(std::size_t offset, T v) {
    std::memcpy(bytes.data() + offset, &v, sizeof v);
  }

  RawHeader(std::array<std::int16_t, 3> dims, std::int16_t datatype, std::int16_t bitpix) {
    put<std::int32_t>(0, 348);
    put<std::int16_t>(40, 3);
    for (int i = 0; i < 3; ++i) put<std::int16_t>(42 + 2 * i, dims[i]);
    for (int i = 3; i < 7; ++i) put<std::int16_t>(42 + 2 * i, 1);
    put<std::int16_t>(70, datatype);
    put<std::int16_t>(72, bitpix);
    put<float>(76, 1.0f);
    for (int i = 1; i < 4; ++i) put<float>(76 + 4 * i, 1.0f);
    put<float>(108, 352.0f);
    std::memcpy(bytes.data() + 344, "n+1\0", 4);
  }

  template <typename T>
  void payload(const std::vector<T>& values) {
    const auto* p = reinterpret_cast<const std::byte*>(values.data());
    bytes.insert(bytes.end(), p, p + values.size() * sizeof(T));
  }
};

void write_bytes(const std::filesystem::path& p, std::span<const std::byte> b) {
  std::ofstream f(p, std::ios::binary);
  f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

std::vector<std::byte> gzip(std::span<const std::byte> in) {
  z_stream zs{};
  deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY);
  std::vector<std::byte> out(deflateBound(&zs, in.size()) + 32);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<std::byte*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  deflate(&zs, Z_FINISH);
  out.resize(zs.total_out);
  deflateEnd(&zs);
  return out;
}

void expect_same(const Volume& a, const Volume& b) {
  EXPECT_EQ(a.dims(), b.dims());
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data().data(), b.data().data(), sizeof(float) * a.data().size()));
  EXPECT_TRUE(a.affine().isApprox(b.affine(), 1e-6));
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.spacing()[i], b.spacing()[i], 1e-6);
}

Volume oblique_volume() {
  Affine a = Affine::Identity();
  a.topLeftCorner<3, 3>() << 0.0, -1.5, 0.0, 1.2, 0.0, 0.0, 0.0, 0.0, 2.0;
  a.block<3, 1>(0, 3) << 10.0, -20.0, 5.5;
  const Volume r = test::random_volume({7, 5, 4}, 3, -100.0, 300.0);
  return Volume(r.dims(), std::vector<float>(r.data().begin(), r.data().end()), {1.2, 1.5, 2.0}, a);
}

TEST(Nifti, HandBuiltInt16HeaderWithScaling) {
  RawHeader h({2, 3, 4}, 4, 16);
  h.put<float>(112, 2.0f);  // scl_slope
  h.put<float>(116, 1.0f);  // scl_inter
  h.put<std::int16_t>(254, 1);
  const float srow[3][4] = {{0, 0, 3, -1}, {0, 2, 0, 4}, {-1, 0, 0, 7}};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) h.put<float>(280 + 16 * r + 4 * c, srow[r][c]);
  std::vector<std::int16_t> raw(24);
  for (int i = 0; i < 24; ++i) raw[i] = static_cast<std::int16_t>(i * 7 - 50);
  h.payload(raw);

  const Volume v = parse_nifti(h.bytes);
  EXPECT_EQ(v.dims(), (Dims{2, 3, 4}));
  EXPECT_EQ(v.dtype(), DType::kI16);
  for (int i = 0; i < 24; ++i) EXPECT_FLOAT_EQ(v.data()[i], raw[i] * 2.0f + 1.0f);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(v.affine()(r, c), srow[r][c]);
  // x fastest
  EXPECT_FLOAT_EQ(v.at(1, 2, 3), raw[1 + 2 * (2 + 3 * 3)] * 2.0f + 1.0f);
}

TEST(Nifti, QformUsedWhenNoSform) {
  RawHeader h({2, 2, 2}, 16, 32);
  h.put<float>(80, 2.0f);
  h.put<float>(84, 3.0f);
  h.put<float>(88, 4.0f);
  h.put<std::int16_t>(252, 1);
  h.put<float>(268, 5.0f);
  h.put<float>(272, 6.0f);
  h.put<float>(276, 7.0f);
  h.payload(std::vector<float>(8, 1.0f));
  const Volume v = parse_nifti(h.bytes);
  Affine want = Affine::Identity();
  want.diagonal().head<3>() << 2.0, 3.0, 4.0;
  want.block<3, 1>(0, 3) << 5.0, 6.0, 7.0;
  EXPECT_TRUE(v.affine().isApprox(want, 1e-12));
}

TEST(Nifti, Float32RoundTripIsBitExact) {
  const Volume v = oblique_volume();
  expect_same(v, parse_nifti(encode_nifti(v, DType::kF32)));
}

TEST(Nifti, IntegerRoundTrips) {
  std::vector<float> u8(60);
  std::vector<float> i16(60);
  for (int i = 0; i < 60; ++i) {
    u8[i] = static_cast<float>((i * 37) % 256);
    i16[i] = static_cast<float>(i * 997 - 30000);
  }
  const Volume a({3, 4, 5}, u8, {1, 1, 1}, Affine::Identity(), DType::kU8);
  const Volume b({3, 4, 5}, i16, {1, 1, 1}, Affine::Identity(), DType::kI16);
  expect_same(a, parse_nifti(encode_nifti(a, DType::kU8)));
  expect_same(b, parse_nifti(encode_nifti(b, DType::kI16)));
}

TEST(Nifti, IntegerOverflowIsReported) {
  const Volume v = test::filled({2, 2, 2}, 300.0f);
  try {
    encode_nifti(v, DType::kU8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kRangeOverflow);
  }
}

TEST(Nifti, GzipFilesRoundTripAndAreDetectedByContent) {
  const auto dir = test::scratch_dir("nifti_gz");
  const Volume v = oblique_volume();
  write_nifti(v, dir / "a.nii.gz", DType::kF32);
  const auto raw = read_file_bytes(dir / "a.nii.gz");
  expect_same(v, read_nifti(dir / "a.nii.gz"));

  std::ifstream f(dir / "a.nii.gz", std::ios::binary);
  unsigned char magic[2];
  f.read(reinterpret_cast<char*>(magic), 2);
  EXPECT_EQ(magic[0], 0x1F);
  EXPECT_EQ(magic[1], 0x8B);

  // gzip content under a plain .nii name
  write_bytes(dir / "b.nii", gzip(encode_nifti(v, DType::kF32)));
  expect_same(v, read_nifti(dir / "b.nii"));

  write_nifti(v, dir / "c.nii", DType::kF32);
  EXPECT_EQ(std::filesystem::file_size(dir / "c.nii"), 352u + 4u * static_cast<std::uint64_t>(v.size()));
  expect_same(v, read_nifti(dir / "c.nii"));
}

TEST(Nifti, FileBytesRoundTrip) {
  const auto dir = test::scratch_dir("nifti_bytes");
  const Volume v = oblique_volume();
  const auto enc = encode_nifti(v, DType::kF32);
  write_nifti(v, dir / "x.nii", DType::kF32);
  EXPECT_EQ(read_file_bytes(dir / "x.nii"), enc);
  write_nifti(v, dir / "x.nii.gz", DType::kF32);
  EXPECT_EQ(read_file_bytes(dir / "x.nii.gz"), enc);
}

TEST(Nifti, MalformedInputs) {
  auto code_of = [](const std::vector<std::byte>& b) {
    try {
      parse_nifti(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  RawHeader ok({2, 2, 2}, 16, 32);
  ok.payload(std::vector<float>(8, 0.5f));
  ASSERT_NO_THROW(parse_nifti(ok.bytes));

  auto truncated = ok.bytes;
  truncated.resize(truncated.size() - 1);
  EXPECT_EQ(code_of(truncated), ErrorCode::kTruncatedData);

  auto short_header = ok.bytes;
  short_header.resize(100);
  EXPECT_EQ(code_of(short_header), ErrorCode::kCorruptHeader);

  RawHeader bad_magic = ok;
  std::memcpy(bad_magic.bytes.data() + 344, "ni1\0", 4);
  EXPECT_EQ(code_of(bad_magic.bytes), ErrorCode::kCorruptHeader);

  RawHeader big_endian = ok;
  big_endian.put<std::int32_t>(0, 0x5C010000);
  EXPECT_EQ(code_of(big_endian.bytes), ErrorCode::kCorruptHeader);

  RawHeader f64({2, 2, 2}, 64, 64);
  f64.payload(std::vector<double>(8, 0.5));
  EXPECT_EQ(code_of(f64.bytes), ErrorCode::kUnsupportedDtype);

  RawHeader bitpix = ok;
  bitpix.put<std::int16_t>(72, 16);
  EXPECT_EQ(code_of(bitpix.bytes), ErrorCode::kCorruptHeader);

  RawHeader four_d = ok;
  four_d.put<std::int16_t>(40, 4);
  four_d.put<std::int16_t>(48, 2);
  EXPECT_EQ(code_of(four_d.bytes), ErrorCode::kCorruptHeader);
}

TEST(Nifti, MissingFile) {
  try {
    read_nifti("/nonexistent/deepbet.nii");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIoFailure);
  }
}

TEST(Volume, ConstructorInvariants) {
  EXPECT_THROW(Volume({0, 1, 1}, {}, {1, 1, 1}, Affine::Identity()), Error);
  EXPECT_THROW(Volume({2, 2, 2}, std::vector<float>(7), {1, 1, 1}, Affine::Identity()), Error);
  EXPECT_THROW(Volume({1, 1, 1}, {0.0f}, {0, 1, 1}, Affine::Identity()), Error);
  Affine singular = Affine::Identity();
  singular(2, 2) = 0.0;
  try {
    Volume({1, 1, 1}, {0.0f}, {1, 1, 1}, singular);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateAffine);
  }
}

TEST(Geometry, OrientationRoundTripKeepsWorldCoordinates) {
  const Volume v = oblique_volume();
  const Orientation o = ras_orientation(v.affine());
  const Volume c = apply_orientation(v, o);
  const Volume back = apply_orientation(c, o.inverse());
  expect_same(v, back);
  // canonical axes point to +R, +A, +S
  for (int a = 0; a < 3; ++a) {
    Eigen::Vector3d col = c.affine().block<3, 1>(0, a);
    Eigen::Index dominant;
    col.cwiseAbs().maxCoeff(&dominant);
    EXPECT_EQ(dominant, a);
    EXPECT_GT(col(a), 0.0);
  }
  // every voxel keeps its world position
  for (std::int64_t z = 0; z < c.dims()[2]; ++z)
    for (std::int64_t y = 0; y < c.dims()[1]; ++y)
      for (std::int64_t x = 0; x < c.dims()[0]; ++x) {
        const Eigen::Vector3d w = c.world(x, y, z);
        const Eigen::Vector4d idx = v.affine().inverse() * Eigen::Vector4d(w.x(), w.y(), w.z(), 1.0);
        EXPECT_FLOAT_EQ(c.at(x, y, z), v.at(std::lround(idx.x()), std::lround(idx.y()), std::lround(idx.z())));
      }
}

TEST(Geometry, ResampleKeepsConstantsAndWorldExtent) {
  const Volume v = test::filled({6, 8, 10}, 3.5f);
  const Volume r = resample(v, {12, 4, 5});
  for (float x : r.data()) EXPECT_FLOAT_EQ(x, 3.5f);
  // the outer corner of the grid (-0.5 in index space) maps to the same world point
  const Eigen::Vector3d a = v.world(-0.5, -0.5, -0.5);
  const Eigen::Vector3d b = r.world(-0.5, -0.5, -0.5);
  EXPECT_TRUE(a.isApprox(b, 1e-12));
  EXPECT_TRUE(v.world(5.5, 7.5, 9.5).isApprox(r.world(11.5, 3.5, 4.5), 1e-12));
}

TEST(Geometry, ResampleIdentityAndLinearRamp) {
  std::vector<float> ramp(16 * 4 * 4);
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 16; ++x) ramp[x + 16 * (y + 4 * z)] = static_cast<float>(x);
  const Volume v({16, 4, 4}, ramp, {1, 1, 1}, Affine::Identity());
  expect_same(v, resample(v, v.dims()));
  const Volume r = resample(v, {8, 4, 4});
  // output j samples input (j + 0.5) * 2 - 0.5
  for (int j = 0; j < 8; ++j) EXPECT_NEAR(r.at(j, 1, 1), 2.0 * j + 0.5, 1e-5);
}

TEST(Geometry, CropEmbedRoundTrip) {
  const Volume v = test::random_volume({10, 9, 8}, 5);
  const BoundingBox b{{2, 1, 3}, {7, 9, 5}};
  const Volume c = crop(v, b);
  EXPECT_EQ(c.dims(), (Dims{5, 8, 2}));
  EXPECT_FLOAT_EQ(c.at(0, 0, 0), v.at(2, 1, 3));
  EXPECT_TRUE(c.world(0, 0, 0).isApprox(v.world(2, 1, 3)));
  const Volume e = embed(c, b, v.dims());
  for (std::int64_t z = 0; z < 8; ++z)
    for (std::int64_t y = 0; y < 9; ++y)
      for (std::int64_t x = 0; x < 10; ++x)
        EXPECT_FLOAT_EQ(e.at(x, y, z), b.contains(x, y, z) ? v.at(x, y, z) : 0.0f);
  EXPECT_THROW(crop(v, BoundingBox{{0, 0, 0}, {11, 1, 1}}), Error);
  EXPECT_THROW(crop(v, BoundingBox{{3, 0, 0}, {3, 1, 1}}), Error);
}

NetworkWeights small_weights() {
  NetworkWeights w;
  w.tensors.push_back({"a.weight", {2, 3}, {1.0f, -2.5f, 3.25f, 1e-30f, -0.0f, 7.0f}});
  w.tensors.push_back({"b.bias", {1}, {std::numeric_limits<float>::denorm_min()}});
  w.metadata["rank"] = "3d";
  w.metadata["note"] = "x y";
  return w;
}

TEST(Weights, LayoutMatchesHandDecoding) {
  const auto bytes = encode_weights(small_weights());
  std::size_t pos = 0;
  auto take = [&](std::size_t n) {
    std::vector<std::byte> out(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                               bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
    pos += n;
    return out;
  };
  auto u32 = [&] {
    std::uint32_t v;
    std::memcpy(&v, take(4).data(), 4);
    return v;
  };
  auto u16 = [&] {
    std::uint16_t v;
    std::memcpy(&v, take(2).data(), 2);
    return v;
  };
  auto u8 = [&] { return std::to_integer<std::uint8_t>(take(1)[0]); };
  const auto magic = take(4);
  EXPECT_EQ(std::memcmp(magic.data(), "DBW1", 4), 0);
  EXPECT_EQ(u32(), 2u);
  EXPECT_EQ(u16(), 8u);
  const auto name = take(8);
  EXPECT_EQ(std::string(reinterpret_cast<const char*>(name.data()), 8), "a.weight");
  EXPECT_EQ(u8(), 0u);
  EXPECT_EQ(u8(), 2u);
  EXPECT_EQ(u32(), 2u);
  EXPECT_EQ(u32(), 3u);
  float first;
  std::memcpy(&first, take(24).data(), 4);
  EXPECT_EQ(first, 1.0f);
  EXPECT_EQ(u16(), 6u);
  take(6);
  EXPECT_EQ(u8(), 0u);
  EXPECT_EQ(u8(), 1u);
  EXPECT_EQ(u32(), 1u);
  take(4);
  const std::uint32_t meta_len = u32();
  const auto meta = take(meta_len);
  EXPECT_EQ(std::string(reinterpret_cast<const char*>(meta.data()), meta_len), "note=x y\nrank=3d\n");
  EXPECT_EQ(pos, bytes.size());
}

TEST(Weights, RoundTripIsBitExact) {
  const auto w = small_weights();
  const auto back = decode_weights(encode_weights(w));
  EXPECT_EQ(back, w);
  EXPECT_EQ(encode_weights(back), encode_weights(w));

  Rng rng(4);
  const auto net = build_linknet(NetworkConfig::linknet_3d(4), rng);
  const auto dir = test::scratch_dir("weights");
  save_weights(net, dir / "n.dbw");
  EXPECT_EQ(load_weights(dir / "n.dbw"), net);
  save_weights(net, dir / "n.dbw.gz");
  EXPECT_EQ(load_weights(dir / "n.dbw.gz"), net);
}

TEST(Weights, CorruptFilesAreRejected) {
  const auto good = encode_weights(small_weights());
  auto code_of = [](std::vector<std::byte> b) {
    try {
      decode_weights(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvalidArgument;
  };
  auto truncated = good;
  truncated.resize(good.size() - 3);
  EXPECT_EQ(code_of(truncated), ErrorCode::kTruncatedData);
  auto trailing = good;
  trailing.push_back(std::byte{0});
  EXPECT_EQ(code_of(trailing), ErrorCode::kCorruptHeader);
  auto magic = good;
  magic[3] = std::byte{'2'};
  EXPECT_EQ(code_of(magic), ErrorCode::kCorruptHeader);
  auto dtype = good;
  dtype[4 + 4 + 2 + 8] = std::byte{1};
  EXPECT_EQ(code_of(dtype), ErrorCode::kUnsupportedDtype);

  NetworkWeights dup = small_weights();
  dup.tensors[1].name = "a.weight";
  dup.tensors[1] = dup.tensors[0];
  EXPECT_EQ(code_of(encode_weights(dup)), ErrorCode::kCorruptHeader);
}

TEST(Weights, SetsMergeAndSplit) {
  WeightsSet set;
  set["stage1"] = small_weights();
  set["axial"] = small_weights();
  set["axial"].tensors[0].values[0] = 9.0f;
  const auto merged = merge_weights(set);
  EXPECT_NE(merged.find("stage1/a.weight"), nullptr);
  EXPECT_EQ(merged.metadata.at("axial/rank"), "3d");
  EXPECT_EQ(split_weights(merged), set);

  const auto dir = test::scratch_dir("weights_set");
  save_weights_set(set, dir / "s.dbw");
  EXPECT_EQ(load_weights_set(dir / "s.dbw"), set);
  EXPECT_THROW(merge_weights(WeightsSet{{"a/b", small_weights()}}), Error);
}

}  // namespace
}  // namespace deepbet
