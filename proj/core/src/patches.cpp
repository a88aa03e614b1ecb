#include "seedet/patches.hpp"

#include <algorithm>
#include <cmath>

#include "seedet/error.hpp"

namespace seedet {

namespace {

long uniform_long(std::mt19937_64& rng, long lo, long hi) {
  if (hi <= lo) return lo;
  return std::uniform_int_distribution<long>(lo, hi)(rng);
}

bool inside(double v, std::size_t size) { return v >= 0.0 && v <= static_cast<double>(size) - 1.0; }

}  // namespace

PatchSample crop_patch(const Volume& volume, const std::vector<NoduleAnnotation>& annotations,
                       std::array<long, 3> origin, std::size_t patch) {
  PatchSample s;
  s.scan_id = volume.scan_id;
  s.size = patch;
  s.origin = origin;
  s.values.assign(patch * patch * patch, 0.0f);
  const long dims[3] = {static_cast<long>(volume.nx), static_cast<long>(volume.ny), static_cast<long>(volume.nz)};
  const long P = static_cast<long>(patch);
  const long x0 = std::max(0L, -origin[0]);
  const long x1 = std::min(P, dims[0] - origin[0]);
  for (long z = 0; z < P; ++z) {
    const long vz = z + origin[2];
    if (vz < 0 || vz >= dims[2]) continue;
    for (long y = 0; y < P; ++y) {
      const long vy = y + origin[1];
      if (vy < 0 || vy >= dims[1] || x1 <= x0) continue;
      const float* src = volume.values.data() + volume.index(static_cast<std::size_t>(x0 + origin[0]),
                                                             static_cast<std::size_t>(vy),
                                                             static_cast<std::size_t>(vz));
      std::copy(src, src + (x1 - x0), s.values.data() + (z * P + y) * P + x0);
    }
  }
  for (const auto& a : annotations) {
    NoduleAnnotation m = a;
    m.x -= static_cast<double>(origin[0]);
    m.y -= static_cast<double>(origin[1]);
    m.z -= static_cast<double>(origin[2]);
    if (inside(m.x, patch) && inside(m.y, patch) && inside(m.z, patch)) s.annotations.push_back(m);
  }
  return s;
}

PatchSample extract_train_patch(const Volume& volume, const std::vector<NoduleAnnotation>& annotations,
                                std::mt19937_64& rng, const CropParams& params) {
  if (params.patch == 0) throw ConfigError("patch size must be positive");
  const long P = static_cast<long>(params.patch);
  const long dims[3] = {static_cast<long>(volume.nx), static_cast<long>(volume.ny), static_cast<long>(volume.nz)};
  std::array<long, 3> origin{};
  const bool centered = !annotations.empty() &&
                        std::uniform_real_distribution<double>(0.0, 1.0)(rng) < params.nodule_probability;
  if (centered) {
    const auto& a = annotations[static_cast<std::size_t>(
        uniform_long(rng, 0, static_cast<long>(annotations.size()) - 1))];
    const double c[3] = {a.x, a.y, a.z};
    const long m = std::min<long>(static_cast<long>(params.margin), (P - 1) / 2);
    for (int ax = 0; ax < 3; ++ax) {
      const long center = static_cast<long>(std::floor(c[ax]));
      const long offset = uniform_long(rng, m, P - 1 - m);
      origin[ax] = std::clamp(center - offset, 0L, std::max(0L, dims[ax] - P));
    }
  } else {
    for (int ax = 0; ax < 3; ++ax) origin[ax] = uniform_long(rng, 0, std::max(0L, dims[ax] - P));
  }
  return crop_patch(volume, annotations, origin, params.patch);
}

PatchSample apply_augmentation(const PatchSample& sample, const AugmentParams& params) {
  if (!(params.scale > 0)) throw ConfigError("augmentation scale must be positive");
  PatchSample out = sample;
  out.augmentation = params;
  const bool any_flip = params.flip[0] || params.flip[1] || params.flip[2];
  if (!any_flip && params.scale == 1.0) return out;

  const std::size_t P = sample.size;
  const double c = (static_cast<double>(P) - 1.0) / 2.0;
  const double hi = static_cast<double>(P) - 1.0;
  const double inv = 1.0 / params.scale;
  const auto src_coord = [&](std::size_t q, int axis) {
    double s = (static_cast<double>(q) - c) * inv + c;
    if (params.flip[static_cast<std::size_t>(axis)]) s = hi - s;
    return s;
  };
  const auto value = [&](long x, long y, long z) -> double {
    const long n = static_cast<long>(P);
    if (x < 0 || y < 0 || z < 0 || x >= n || y >= n || z >= n) return 0.0;
    return sample.values[static_cast<std::size_t>((z * n + y) * n + x)];
  };
  for (std::size_t z = 0; z < P; ++z) {
    const double sz = src_coord(z, 2);
    const long z0 = static_cast<long>(std::floor(sz));
    const double fz = sz - static_cast<double>(z0);
    for (std::size_t y = 0; y < P; ++y) {
      const double sy = src_coord(y, 1);
      const long y0 = static_cast<long>(std::floor(sy));
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < P; ++x) {
        const double sx = src_coord(x, 0);
        const long x0 = static_cast<long>(std::floor(sx));
        const double fx = sx - static_cast<double>(x0);
        double acc = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dz ? fz : 1 - fz) * (dy ? fy : 1 - fy) * (dx ? fx : 1 - fx);
              if (w != 0.0) acc += w * value(x0 + dx, y0 + dy, z0 + dz);
            }
        out.values[(z * P + y) * P + x] = static_cast<float>(acc);
      }
    }
  }
  out.annotations.clear();
  for (auto a : sample.annotations) {
    double* coord[3] = {&a.x, &a.y, &a.z};
    for (int ax = 0; ax < 3; ++ax) {
      if (params.flip[static_cast<std::size_t>(ax)]) *coord[ax] = hi - *coord[ax];
      *coord[ax] = (*coord[ax] - c) * params.scale + c;
    }
    a.diameter *= params.scale;
    if (inside(a.x, P) && inside(a.y, P) && inside(a.z, P)) out.annotations.push_back(a);
  }
  return out;
}

AugmentParams draw_augmentation(std::mt19937_64& rng, const AugmentRanges& ranges) {
  AugmentParams p;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (auto& f : p.flip) f = unit(rng) < ranges.flip_probability;
  p.scale = std::uniform_real_distribution<double>(ranges.scale_min, ranges.scale_max)(rng);
  return p;
}

PatchSample augment(const PatchSample& sample, std::mt19937_64& rng, const AugmentRanges& ranges) {
  return apply_augmentation(sample, draw_augmentation(rng, ranges));
}

std::vector<std::size_t> tile_origins(std::size_t extent, std::size_t patch, std::size_t overlap) {
  if (patch == 0 || overlap >= patch) throw ConfigError("tiling needs patch > overlap >= 0");
  std::vector<std::size_t> out{0};
  const std::size_t stride = patch - overlap;
  while (out.back() + patch < extent) out.push_back(std::min(out.back() + stride, extent - patch));
  return out;
}

std::vector<PatchSample> tile_test_patches(const Volume& volume, std::size_t patch, std::size_t overlap,
                                           const std::vector<NoduleAnnotation>& annotations) {
  const auto ox = tile_origins(volume.nx, patch, overlap);
  const auto oy = tile_origins(volume.ny, patch, overlap);
  const auto oz = tile_origins(volume.nz, patch, overlap);
  std::vector<PatchSample> out;
  out.reserve(ox.size() * oy.size() * oz.size());
  for (std::size_t z : oz)
    for (std::size_t y : oy)
      for (std::size_t x : ox)
        out.push_back(crop_patch(volume, annotations,
                                 {static_cast<long>(x), static_cast<long>(y), static_cast<long>(z)}, patch));
  return out;
}

}  // namespace seedet
