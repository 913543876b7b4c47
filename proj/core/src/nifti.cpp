#include "deepbet/nifti.hpp"

#include <Eigen/LU>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>

#include <zlib.h>

namespace deepbet {
namespace {

static_assert(std::endian::native == std::endian::little,
              "NIfTI I/O assumes a little-endian host");

constexpr std::size_t kHeaderSize = 348;
constexpr std::size_t kVoxOffset = 352;

constexpr std::int16_t kNiftiUint8 = 2;
constexpr std::int16_t kNiftiInt16 = 4;
constexpr std::int16_t kNiftiFloat32 = 16;

template <typename T>
T load(std::span<const std::byte> b, std::size_t offset) {
  T v;
  std::memcpy(&v, b.data() + offset, sizeof(T));
  return v;
}

template <typename T>
void store(std::vector<std::byte>& b, std::size_t offset, T v) {
  std::memcpy(b.data() + offset, &v, sizeof(T));
}

// Field offsets inside the 348-byte header.
namespace off {
constexpr std::size_t sizeof_hdr = 0;
constexpr std::size_t dim = 40;
constexpr std::size_t datatype = 70;
constexpr std::size_t bitpix = 72;
constexpr std::size_t pixdim = 76;
constexpr std::size_t vox_offset = 108;
constexpr std::size_t scl_slope = 112;
constexpr std::size_t scl_inter = 116;
constexpr std::size_t xyzt_units = 123;
constexpr std::size_t descrip = 148;
constexpr std::size_t qform_code = 252;
constexpr std::size_t sform_code = 254;
constexpr std::size_t quatern_b = 256;
constexpr std::size_t qoffset_x = 268;
constexpr std::size_t srow_x = 280;
constexpr std::size_t magic = 344;
}  // namespace off

bool affine_usable(const Affine& a) {
  if (!a.allFinite()) return false;
  return std::abs(a.topLeftCorner<3, 3>().determinant()) > 1e-12;
}

Affine qform_affine(std::span<const std::byte> h, const Spacing& pix, double qfac) {
  const double b = load<float>(h, off::quatern_b);
  const double c = load<float>(h, off::quatern_b + 4);
  const double d = load<float>(h, off::quatern_b + 8);
  double a = 1.0 - (b * b + c * c + d * d);
  a = a > 0.0 ? std::sqrt(a) : 0.0;
  Eigen::Matrix3d r;
  r << a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c),
      2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
      2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - c * c - b * b;
  Affine m = Affine::Identity();
  m.topLeftCorner<3, 3>() = r * Eigen::Vector3d(pix[0], pix[1], qfac * pix[2]).asDiagonal();
  for (int i = 0; i < 3; ++i) m(i, 3) = load<float>(h, off::qoffset_x + 4 * i);
  return m;
}

Affine sform_affine(std::span<const std::byte> h) {
  Affine m = Affine::Identity();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) m(r, c) = load<float>(h, off::srow_x + 16 * r + 4 * c);
  }
  return m;
}

struct DTypeInfo {
  std::int16_t code;
  std::int16_t bitpix;
};

DTypeInfo info_of(DType t) {
  switch (t) {
    case DType::kU8: return {kNiftiUint8, 8};
    case DType::kI16: return {kNiftiInt16, 16};
    case DType::kF32: return {kNiftiFloat32, 32};
  }
  throw Error(ErrorCode::kUnsupportedDtype, "unknown dtype tag");
}

bool has_suffix(const std::filesystem::path& p, std::string_view suffix) {
  const std::string s = p.string();
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Volume parse_nifti(std::span<const std::byte> h) {
  if (h.size() < kHeaderSize) {
    throw Error(ErrorCode::kCorruptHeader, "file shorter than the 348-byte header");
  }
  if (load<std::int32_t>(h, off::sizeof_hdr) != 348) {
    throw Error(ErrorCode::kCorruptHeader, "sizeof_hdr != 348 (not little-endian NIfTI-1?)");
  }
  const char* magic = reinterpret_cast<const char*>(h.data() + off::magic);
  if (std::memcmp(magic, "n+1\0", 4) != 0) {
    throw Error(ErrorCode::kCorruptHeader, "missing single-file NIfTI-1 magic \"n+1\"");
  }

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(h, off::dim + 2 * i);
  if (dim[0] < 1 || dim[0] > 7) throw Error(ErrorCode::kCorruptHeader, "dim[0] out of range");
  Dims dims{1, 1, 1};
  for (int i = 1; i <= dim[0]; ++i) {
    if (dim[i] < 1) throw Error(ErrorCode::kCorruptHeader, "non-positive dimension");
    if (i <= 3) {
      dims[i - 1] = dim[i];
    } else if (dim[i] != 1) {
      throw Error(ErrorCode::kCorruptHeader, "only 3D volumes are supported");
    }
  }

  const auto datatype = load<std::int16_t>(h, off::datatype);
  DType dtype;
  std::size_t bytes_per_voxel;
  switch (datatype) {
    case kNiftiUint8: dtype = DType::kU8; bytes_per_voxel = 1; break;
    case kNiftiInt16: dtype = DType::kI16; bytes_per_voxel = 2; break;
    case kNiftiFloat32: dtype = DType::kF32; bytes_per_voxel = 4; break;
    default:
      throw Error(ErrorCode::kUnsupportedDtype, "datatype code " + std::to_string(datatype));
  }
  if (load<std::int16_t>(h, off::bitpix) != static_cast<std::int16_t>(8 * bytes_per_voxel)) {
    throw Error(ErrorCode::kCorruptHeader, "bitpix inconsistent with datatype");
  }

  const float vox_offset_f = load<float>(h, off::vox_offset);
  if (!(vox_offset_f >= static_cast<float>(kHeaderSize))) {
    throw Error(ErrorCode::kCorruptHeader, "vox_offset before end of header");
  }
  const auto vox_offset = static_cast<std::size_t>(vox_offset_f);
  const auto n = static_cast<std::size_t>(voxel_count(dims));
  if (h.size() < vox_offset + n * bytes_per_voxel) {
    throw Error(ErrorCode::kTruncatedData, "expected " + std::to_string(n * bytes_per_voxel) +
                                               " payload bytes, file has " +
                                               std::to_string(h.size() - std::min(h.size(), vox_offset)));
  }

  Spacing pix{};
  for (int i = 0; i < 3; ++i) pix[i] = std::abs(load<float>(h, off::pixdim + 4 * (i + 1)));
  const double qfac = load<float>(h, off::pixdim) < 0.0f ? -1.0 : 1.0;
  bool pix_ok = true;
  for (double p : pix) pix_ok = pix_ok && p > 0.0 && std::isfinite(p);
  const Spacing pix_safe = pix_ok ? pix : Spacing{1.0, 1.0, 1.0};

  Affine affine;
  const auto sform_code = load<std::int16_t>(h, off::sform_code);
  const auto qform_code = load<std::int16_t>(h, off::qform_code);
  Affine s = sform_affine(h);
  Affine q = qform_affine(h, pix_safe, qfac);
  if (sform_code > 0 && affine_usable(s)) {
    affine = s;
  } else if (qform_code > 0 && affine_usable(q)) {
    affine = q;
  } else {
    affine = diagonal_affine(pix_safe);
  }
  const Spacing spacing = pix_ok ? pix : spacing_from_affine(affine);

  double slope = load<float>(h, off::scl_slope);
  double inter = load<float>(h, off::scl_inter);
  if (slope == 0.0 || !std::isfinite(slope)) {
    slope = 1.0;
    inter = 0.0;
  }
  if (!std::isfinite(inter)) inter = 0.0;
  const bool scaled = !(slope == 1.0 && inter == 0.0);

  std::vector<float> data(n);
  const std::byte* p = h.data() + vox_offset;
  switch (dtype) {
    case DType::kU8:
      for (std::size_t i = 0; i < n; ++i) {
        data[i] = static_cast<float>(std::to_integer<std::uint8_t>(p[i]) * slope + inter);
      }
      break;
    case DType::kI16:
      for (std::size_t i = 0; i < n; ++i) {
        std::int16_t raw;
        std::memcpy(&raw, p + 2 * i, 2);
        data[i] = static_cast<float>(raw * slope + inter);
      }
      break;
    case DType::kF32:
      std::memcpy(data.data(), p, 4 * n);
      if (scaled) {
        for (auto& v : data) v = static_cast<float>(v * slope + inter);
      }
      break;
  }
  return Volume(dims, std::move(data), spacing, affine, dtype);
}

std::vector<std::byte> encode_nifti(const Volume& v, DType dtype,
                                    std::optional<IntensityScaling> scaling) {
  const auto [code, bitpix] = info_of(dtype);
  const std::size_t n = static_cast<std::size_t>(v.size());
  const std::size_t bpv = static_cast<std::size_t>(bitpix / 8);
  std::vector<std::byte> out(kVoxOffset + n * bpv, std::byte{0});

  store<std::int32_t>(out, off::sizeof_hdr, 348);
  const Dims& d = v.dims();
  store<std::int16_t>(out, off::dim, 3);
  for (int i = 0; i < 3; ++i) {
    if (d[i] > std::numeric_limits<std::int16_t>::max()) {
      throw Error(ErrorCode::kRangeOverflow, "dimension does not fit NIfTI-1 int16 dim field");
    }
    store<std::int16_t>(out, off::dim + 2 * (i + 1), static_cast<std::int16_t>(d[i]));
  }
  for (int i = 4; i < 8; ++i) store<std::int16_t>(out, off::dim + 2 * i, 1);
  store<std::int16_t>(out, off::datatype, code);
  store<std::int16_t>(out, off::bitpix, bitpix);
  store<float>(out, off::pixdim, 1.0f);
  for (int i = 0; i < 3; ++i) {
    store<float>(out, off::pixdim + 4 * (i + 1), static_cast<float>(v.spacing()[i]));
  }
  for (int i = 4; i < 8; ++i) store<float>(out, off::pixdim + 4 * i, 1.0f);
  store<float>(out, off::vox_offset, static_cast<float>(kVoxOffset));
  out[off::xyzt_units] = std::byte{2};  // mm
  const char descrip[] = "deepbet";
  std::memcpy(out.data() + off::descrip, descrip, sizeof(descrip));
  store<std::int16_t>(out, off::qform_code, 0);
  store<std::int16_t>(out, off::sform_code, 1);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 4; ++c) {
      store<float>(out, off::srow_x + 16 * r + 4 * c, static_cast<float>(v.affine()(r, c)));
    }
  }
  std::memcpy(out.data() + off::magic, "n+1\0", 4);

  const auto src = v.data();
  std::byte* dst = out.data() + kVoxOffset;
  if (dtype == DType::kF32) {
    const IntensityScaling s = scaling.value_or(IntensityScaling{});
    if (scaling) {
      store<float>(out, off::scl_slope, static_cast<float>(s.slope));
      store<float>(out, off::scl_inter, static_cast<float>(s.inter));
    }
    if (!scaling || (s.slope == 1.0 && s.inter == 0.0)) {
      std::memcpy(dst, src.data(), 4 * n);
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        const float raw = static_cast<float>((src[i] - s.inter) / s.slope);
        std::memcpy(dst + 4 * i, &raw, 4);
      }
    }
    return out;
  }

  const IntensityScaling s = scaling.value_or(IntensityScaling{});
  if (!(s.slope != 0.0) || !std::isfinite(s.slope) || !std::isfinite(s.inter)) {
    throw Error(ErrorCode::kInvalidArgument, "scaling slope must be finite and non-zero");
  }
  // The header stores float32; quantize against the value the reader will see.
  const double slope = static_cast<float>(s.slope);
  const double inter = static_cast<float>(s.inter);
  store<float>(out, off::scl_slope, static_cast<float>(slope));
  store<float>(out, off::scl_inter, static_cast<float>(inter));
  const double lo = dtype == DType::kU8 ? 0.0 : std::numeric_limits<std::int16_t>::min();
  const double hi = dtype == DType::kU8 ? 255.0 : std::numeric_limits<std::int16_t>::max();
  for (std::size_t i = 0; i < n; ++i) {
    const double raw = std::nearbyint((src[i] - inter) / slope);
    if (!std::isfinite(raw) || raw < lo || raw > hi) {
      throw Error(ErrorCode::kRangeOverflow,
                  "value " + std::to_string(src[i]) + " not representable in target dtype");
    }
    if (dtype == DType::kU8) {
      dst[i] = static_cast<std::byte>(static_cast<std::uint8_t>(raw));
    } else {
      const auto r16 = static_cast<std::int16_t>(raw);
      std::memcpy(dst + 2 * i, &r16, 2);
    }
  }
  return out;
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (f == nullptr) throw Error(ErrorCode::kIoFailure, "cannot open " + path.string());
  std::vector<std::byte> bytes;
  std::vector<std::byte> chunk(1 << 20);
  for (;;) {
    const int got = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (got < 0) {
      int errnum = 0;
      std::string msg = gzerror(f, &errnum);
      gzclose(f);
      throw Error(ErrorCode::kTruncatedData, "gzip stream error in " + path.string() + ": " + msg);
    }
    if (got == 0) break;
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + got);
  }
  gzclose(f);
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  if (has_suffix(path, ".gz")) {
    gzFile f = gzopen(path.c_str(), "wb6");
    if (f == nullptr) throw Error(ErrorCode::kIoFailure, "cannot create " + path.string());
    std::size_t done = 0;
    while (done < bytes.size()) {
      const auto len = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
      if (gzwrite(f, bytes.data() + done, len) != static_cast<int>(len)) {
        gzclose(f);
        throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
      }
      done += len;
    }
    if (gzclose(f) != Z_OK) throw Error(ErrorCode::kIoFailure, "close failed for " + path.string());
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoFailure, "cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIoFailure, "write failed for " + path.string());
}

Volume read_nifti(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_nifti(bytes);
}

void write_nifti(const Volume& v, const std::filesystem::path& path, DType dtype,
                 std::optional<IntensityScaling> scaling) {
  const auto bytes = encode_nifti(v, dtype, scaling);
  write_file_bytes(path, bytes);
}

}  // namespace deepbet
