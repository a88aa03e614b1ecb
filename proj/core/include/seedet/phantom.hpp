#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "seedet/volume.hpp"

namespace seedet {

/// Synthetic scan generator settings. JSON keys match the field names.
struct PhantomConfig {
  std::array<std::size_t, 3> dims{96, 96, 96};
  std::size_t n_volumes = 20;
  std::size_t nodules_min = 1;
  std::size_t nodules_max = 4;
  double diameter_min = 4.0;
  double diameter_max = 20.0;
  /// Vessel-like tube segments per 64^3 voxels.
  double distractor_density = 1.0;
  std::uint64_t seed = 0;

  /// Throws ConfigError on inverted or non-positive ranges.
  void validate() const;
  bool operator==(const PhantomConfig&) const = default;
};

std::string to_json(const PhantomConfig& config);
PhantomConfig phantom_config_from_json(const std::string& text);

inline constexpr double kPhantomBackgroundHu = -900.0;
inline constexpr double kPhantomBackgroundStd = 50.0;

struct Phantom {
  Volume volume;
  std::vector<NoduleAnnotation> nodules;
};

/// Smooth lung-range background, soft-edged spherical nodules that never
/// overlap, and tube distractors of nodule-like intensity kept clear of
/// every nodule. Bit-identical for equal (seed, config, scan_id).
Phantom generate_phantom(std::uint64_t seed, const PhantomConfig& config, const std::string& scan_id = "phantom");

/// Stream seed for (base, a, b); splitmix64 mixing.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

std::string phantom_scan_id(std::size_t index);

/// Writes <id>.vol3 per volume, annotations.csv and manifest.json.
void write_phantom_dataset(const PhantomConfig& config, const std::filesystem::path& out_dir);

/// A dataset directory as written by write_phantom_dataset (any set of
/// .vol3 files plus annotations.csv).
struct Dataset {
  std::vector<std::filesystem::path> volumes;  // sorted
  std::vector<NoduleAnnotation> annotations;
};
Dataset open_dataset(const std::filesystem::path& dir);

}  // namespace seedet
