#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "seedet/volume.hpp"

namespace seedet {

struct AugmentParams {
  std::array<bool, 3> flip{false, false, false};  // x, y, z
  double scale = 1.0;

  bool operator==(const AugmentParams&) const = default;
};

/// A cubic sub-volume of a preprocessed scan. Index (z * size + y) * size + x.
/// Annotations are in patch coordinates.
struct PatchSample {
  std::string scan_id;
  std::size_t size = 0;
  std::vector<float> values;
  std::array<long, 3> origin{0, 0, 0};  // x, y, z in volume coordinates
  std::vector<NoduleAnnotation> annotations;
  AugmentParams augmentation;
};

struct CropParams {
  std::size_t patch = 128;
  double nodule_probability = 0.7;
  // Keep sampled nodule centers at least this far inside the crop.
  std::size_t margin = 8;
};

/// Crops `patch`^3 voxels from a preprocessed volume. With probability
/// nodule_probability the crop contains a randomly chosen nodule; otherwise
/// the origin is uniform. Regions outside the volume read as 0.
PatchSample extract_train_patch(const Volume& volume, const std::vector<NoduleAnnotation>& annotations,
                                std::mt19937_64& rng, const CropParams& params);

/// Copies the cube at `origin` (x, y, z), padding with 0; keeps the
/// annotations whose centers fall inside.
PatchSample crop_patch(const Volume& volume, const std::vector<NoduleAnnotation>& annotations,
                       std::array<long, 3> origin, std::size_t patch);

/// Flips (about the patch center) then scales isotropically about the
/// center with trilinear resampling; annotations follow the same map and
/// are dropped if their center leaves the patch.
PatchSample apply_augmentation(const PatchSample& sample, const AugmentParams& params);

struct AugmentRanges {
  double flip_probability = 0.5;
  double scale_min = 0.75;
  double scale_max = 1.25;
};

AugmentParams draw_augmentation(std::mt19937_64& rng, const AugmentRanges& ranges = {});
PatchSample augment(const PatchSample& sample, std::mt19937_64& rng, const AugmentRanges& ranges = {});

/// Patch origins along one axis: stride patch - overlap, the last origin
/// clamped so the final patch ends at the extent. Extents up to `patch`
/// give the single origin 0.
std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t patch, std::size_t overlap);

/// All overlapping test patches of a preprocessed volume.
std::vector<PatchSample> tile_test_patches(const Volume& volume, std::size_t patch, std::size_t overlap,
                                           const std::vector<NoduleAnnotation>& annotations = {});

}  // namespace seedet
