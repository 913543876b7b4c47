#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "deepbet/network.hpp"

namespace deepbet {

// DBW1 weights files: "DBW1", u32 tensor count, then per tensor a u16 name
// length, the name, u8 dtype (0 = float32), u8 ndim, u32 dims and raw
// values, followed by a u32-length-prefixed "key=value\n" metadata block.
// All integers little-endian.

std::vector<std::byte> encode_weights(const NetworkWeights& w);
NetworkWeights decode_weights(std::span<const std::byte> bytes);

void save_weights(const NetworkWeights& w, const std::filesystem::path& path);
NetworkWeights load_weights(const std::filesystem::path& path);

/// Several networks stored in one file, keyed by role ("stage1", "stage2",
/// "sagittal", "coronal", "axial"). Tensor names and metadata keys are
/// prefixed with "role/".
using WeightsSet = std::map<std::string, NetworkWeights>;

NetworkWeights merge_weights(const WeightsSet& set);
WeightsSet split_weights(const NetworkWeights& merged);

void save_weights_set(const WeightsSet& set, const std::filesystem::path& path);
WeightsSet load_weights_set(const std::filesystem::path& path);

}  // namespace deepbet
