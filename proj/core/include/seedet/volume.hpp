#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace seedet {

/// A 3D scan. Values are pseudo-HU before preprocessing and lie in [0, 1]
/// after. Linear index (z * Y + y) * X + x.
struct Volume {
  std::string scan_id;
  std::size_t nx = 0, ny = 0, nz = 0;
  std::vector<float> values;
  std::optional<std::vector<std::uint8_t>> mask;

  Volume() = default;
  Volume(std::string id, std::size_t x, std::size_t y, std::size_t z, float fill = 0.0f);

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return (z * ny + y) * nx + x; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return values[index(x, y, z)]; }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return values[index(x, y, z)]; }
  std::size_t size() const { return nx * ny * nz; }
  /// Throws ConfigError on dims below 8 or non-finite values.
  void validate() const;
};

struct NoduleAnnotation {
  std::string scan_id;
  double x = 0, y = 0, z = 0;
  double diameter = 0;

  double radius() const { return diameter / 2.0; }
  bool operator==(const NoduleAnnotation&) const = default;
};

/// Intensity window mapped onto [0, 1].
inline constexpr double kClipLow = -1200.0;
inline constexpr double kClipHigh = 600.0;

/// Clip to [kClipLow, kClipHigh], rescale to [0, 1]; voxels outside an
/// attached lung mask become 0.
Volume preprocess(const Volume& volume, double low = kClipLow, double high = kClipHigh);
double normalize_intensity(double hu, double low = kClipLow, double high = kClipHigh);

// .vol3: "VOL3", u16 version, u32 X, Y, Z (little-endian), then X*Y*Z
// float32 little-endian values. Masks use the same header with u8 payload.
void write_volume(const std::filesystem::path& path, const Volume& volume);
/// The scan id defaults to the file stem.
Volume read_volume(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Volume& volume);
/// Attaches the mask at `path`; dims must match.
void read_mask(const std::filesystem::path& path, Volume& volume);

/// CSV with header scan_id,x,y,z,diameter.
void write_annotations(const std::filesystem::path& path, const std::vector<NoduleAnnotation>& rows);
std::vector<NoduleAnnotation> read_annotations(const std::filesystem::path& path);

std::vector<NoduleAnnotation> annotations_for(const std::vector<NoduleAnnotation>& all, const std::string& scan_id);

}  // namespace seedet
