#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "seedet/tensor.hpp"

namespace seedet {

/// One named array of a checkpoint. Values are stored as float64 regardless
/// of the precision the network runs in.
struct StoredArray {
  Shape shape;
  std::vector<double> values;

  bool operator==(const StoredArray&) const = default;
};

/// Flat container of named arrays plus free-form JSON metadata.
///
/// On-disk layout (all integers little-endian):
///   "SDCK" | u16 version | u64 metadata length | metadata bytes |
///   u32 entry count | entries sorted by name, each:
///     u32 name length | name | u32 rank | u64 extents... | f64 values...
struct CheckpointFile {
  static constexpr std::uint16_t kVersion = 1;

  std::string metadata;
  std::map<std::string, StoredArray> arrays;

  bool operator==(const CheckpointFile&) const = default;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file);
CheckpointFile load_checkpoint(const std::filesystem::path& path);

std::string encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(const std::string& bytes);

}  // namespace seedet
