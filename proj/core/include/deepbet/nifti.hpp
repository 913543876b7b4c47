#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "deepbet/volume.hpp"

namespace deepbet {

/// Linear intensity scaling stored in the header: value = raw * slope + inter.
struct IntensityScaling {
  double slope = 1.0;
  double inter = 0.0;
};

// NIfTI-1 single-file (.nii / .nii.gz) support for uint8, int16 and float32
// volumes. Little-endian only. Gzip is detected from the 0x1F8B prefix, not
// from the file extension.

/// Decodes an in-memory NIfTI-1 file (already decompressed).
Volume parse_nifti(std::span<const std::byte> bytes);

/// Encodes a volume as an uncompressed single-file NIfTI-1 image.
/// Integer targets are quantized with round((v - inter) / slope) and throw
/// RangeOverflow when a value does not fit.
std::vector<std::byte> encode_nifti(const Volume& v, DType dtype,
                                    std::optional<IntensityScaling> scaling = std::nullopt);

Volume read_nifti(const std::filesystem::path& path);

/// Writes gzip-compressed output when the path ends in ".gz".
void write_nifti(const Volume& v, const std::filesystem::path& path, DType dtype,
                 std::optional<IntensityScaling> scaling = std::nullopt);

/// Reads a file fully, transparently inflating gzip content.
std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);

/// Writes bytes, gzip-compressing when the path ends in ".gz".
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace deepbet
