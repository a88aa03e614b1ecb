#include "seedet/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "json.hpp"
#include "seedet/error.hpp"

namespace seedet {

using nlohmann::json;

void PhantomConfig::validate() const {
  for (auto d : dims)
    if (d < 8) throw ConfigError("phantom: dims must be >= 8");
  if (nodules_min > nodules_max) throw ConfigError("phantom: nodules_min > nodules_max");
  if (!(diameter_min > 0) || diameter_min > diameter_max) throw ConfigError("phantom: invalid diameter range");
  if (!(distractor_density >= 0)) throw ConfigError("phantom: distractor_density must be >= 0");
  const double smallest = static_cast<double>(*std::min_element(dims.begin(), dims.end()));
  if (diameter_max + 8 > smallest) throw ConfigError("phantom: largest nodule does not fit the volume");
}

std::string to_json(const PhantomConfig& c) {
  json j{{"dims", c.dims},
         {"n_volumes", c.n_volumes},
         {"nodules_min", c.nodules_min},
         {"nodules_max", c.nodules_max},
         {"diameter_min", c.diameter_min},
         {"diameter_max", c.diameter_max},
         {"distractor_density", c.distractor_density},
         {"seed", c.seed}};
  return j.dump(2);
}

PhantomConfig phantom_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phantom config: ") + e.what());
  }
  PhantomConfig c;
  try {
    if (j.contains("dims")) {
      const auto& d = j.at("dims");
      if (d.is_number()) {
        c.dims.fill(d.get<std::size_t>());
      } else {
        c.dims = d.get<std::array<std::size_t, 3>>();
      }
    }
    c.n_volumes = j.value("n_volumes", c.n_volumes);
    c.nodules_min = j.value("nodules_min", c.nodules_min);
    c.nodules_max = j.value("nodules_max", c.nodules_max);
    c.diameter_min = j.value("diameter_min", c.diameter_min);
    c.diameter_max = j.value("diameter_max", c.diameter_max);
    c.distractor_density = j.value("distractor_density", c.distractor_density);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("phantom config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

std::string phantom_scan_id(std::size_t index) {
  std::ostringstream os;
  os << "phantom_" << std::setw(4) << std::setfill('0') << index;
  return os.str();
}

namespace {

struct Sphere {
  double x, y, z, r;
};

double segment_distance(const std::array<double, 3>& p, const std::array<double, 3>& a,
                        const std::array<double, 3>& b) {
  std::array<double, 3> ab{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  std::array<double, 3> ap{p[0] - a[0], p[1] - a[1], p[2] - a[2]};
  const double len2 = ab[0] * ab[0] + ab[1] * ab[1] + ab[2] * ab[2];
  double t = len2 > 0 ? (ap[0] * ab[0] + ap[1] * ab[1] + ap[2] * ab[2]) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  double d2 = 0;
  for (int i = 0; i < 3; ++i) {
    const double d = ap[static_cast<std::size_t>(i)] - t * ab[static_cast<std::size_t>(i)];
    d2 += d * d;
  }
  return std::sqrt(d2);
}

// Soft occupancy: ~1 inside, ~0 outside, transition width ~1 voxel.
double soft_edge(double distance, double radius) { return 1.0 / (1.0 + std::exp((distance - radius) / 0.5)); }

void smooth_background(Volume& v, std::mt19937_64& rng) {
  constexpr std::size_t kSpacing = 6;
  const std::size_t cx = v.nx / kSpacing + 2, cy = v.ny / kSpacing + 2, cz = v.nz / kSpacing + 2;
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<double> coarse(cx * cy * cz);
  for (auto& c : coarse) c = unit(rng);
  std::vector<double> field(v.size());
  double sum = 0, sum2 = 0;
  for (std::size_t z = 0; z < v.nz; ++z)
    for (std::size_t y = 0; y < v.ny; ++y)
      for (std::size_t x = 0; x < v.nx; ++x) {
        const double fx = static_cast<double>(x) / kSpacing, fy = static_cast<double>(y) / kSpacing,
                     fz = static_cast<double>(z) / kSpacing;
        const std::size_t x0 = static_cast<std::size_t>(fx), y0 = static_cast<std::size_t>(fy),
                          z0 = static_cast<std::size_t>(fz);
        const double tx = fx - static_cast<double>(x0), ty = fy - static_cast<double>(y0),
                     tz = fz - static_cast<double>(z0);
        double acc = 0;
        for (int dz = 0; dz < 2; ++dz)
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const double w = (dz ? tz : 1 - tz) * (dy ? ty : 1 - ty) * (dx ? tx : 1 - tx);
              acc += w * coarse[((z0 + static_cast<std::size_t>(dz)) * cy + y0 + static_cast<std::size_t>(dy)) * cx +
                                x0 + static_cast<std::size_t>(dx)];
            }
        field[v.index(x, y, z)] = acc;
        sum += acc;
        sum2 += acc * acc;
      }
  const double n = static_cast<double>(v.size());
  const double mean = sum / n;
  const double sd = std::sqrt(std::max(1e-12, sum2 / n - mean * mean));
  // 40 HU smooth component plus 30 HU white noise: total sd 50.
  std::normal_distribution<double> white(0.0, 30.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v.values[i] = static_cast<float>(kPhantomBackgroundHu + 40.0 * (field[i] - mean) / sd + white(rng));
  }
}

template <class Fn>
void paint(Volume& v, const std::array<double, 3>& lo, const std::array<double, 3>& hi, Fn&& occupancy,
           double level) {
  const auto clampi = [](double a, std::size_t n) {
    return static_cast<std::size_t>(std::clamp(a, 0.0, static_cast<double>(n) - 1.0));
  };
  for (std::size_t z = clampi(std::floor(lo[2]), v.nz); z <= clampi(std::ceil(hi[2]), v.nz); ++z)
    for (std::size_t y = clampi(std::floor(lo[1]), v.ny); y <= clampi(std::ceil(hi[1]), v.ny); ++y)
      for (std::size_t x = clampi(std::floor(lo[0]), v.nx); x <= clampi(std::ceil(hi[0]), v.nx); ++x) {
        const double w = occupancy(static_cast<double>(x), static_cast<double>(y), static_cast<double>(z));
        if (w < 1e-4) continue;
        float& dst = v.at(x, y, z);
        dst = static_cast<float>((1.0 - w) * dst + w * level);
      }
}

}  // namespace

Phantom generate_phantom(std::uint64_t seed, const PhantomConfig& config, const std::string& scan_id) {
  config.validate();
  std::mt19937_64 rng(seed);
  Phantom out;
  out.volume = Volume(scan_id, config.dims[0], config.dims[1], config.dims[2]);
  smooth_background(out.volume, rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const std::size_t count = std::uniform_int_distribution<std::size_t>(config.nodules_min, config.nodules_max)(rng);

  std::vector<Sphere> spheres;
  for (std::size_t k = 0; k < count; ++k) {
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double r = uniform(config.diameter_min, config.diameter_max) / 2.0;
      Sphere s{0, 0, 0, r};
      double* c[3] = {&s.x, &s.y, &s.z};
      for (std::size_t a = 0; a < 3; ++a) *c[a] = uniform(r + 3.0, static_cast<double>(config.dims[a]) - r - 4.0);
      bool clear = true;
      for (const auto& o : spheres) {
        const double d = std::sqrt((o.x - s.x) * (o.x - s.x) + (o.y - s.y) * (o.y - s.y) + (o.z - s.z) * (o.z - s.z));
        if (d <= o.r + s.r + 3.0) clear = false;
      }
      if (!clear) continue;
      spheres.push_back(s);
      break;
    }
  }
  if (spheres.size() < config.nodules_min) throw ConfigError("phantom: could not place the requested nodules");

  for (const auto& s : spheres) {
    const double level = uniform(-150.0, -50.0);
    paint(
        out.volume, {s.x - s.r - 3, s.y - s.r - 3, s.z - s.r - 3}, {s.x + s.r + 3, s.y + s.r + 3, s.z + s.r + 3},
        [&](double x, double y, double z) {
          return soft_edge(std::sqrt((x - s.x) * (x - s.x) + (y - s.y) * (y - s.y) + (z - s.z) * (z - s.z)), s.r);
        },
        level);
    out.nodules.push_back(NoduleAnnotation{scan_id, s.x, s.y, s.z, 2.0 * s.r});
  }

  const double blocks = static_cast<double>(config.dims[0] * config.dims[1] * config.dims[2]) / (64.0 * 64.0 * 64.0);
  const auto tubes = static_cast<std::size_t>(std::floor(config.distractor_density * blocks + unit(rng)));
  for (std::size_t t = 0; t < tubes; ++t) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double radius = uniform(1.0, 2.5);
      const double length = uniform(15.0, 50.0);
      std::array<double, 3> a{}, dir{};
      for (std::size_t i = 0; i < 3; ++i) a[i] = uniform(2.0, static_cast<double>(config.dims[i]) - 3.0);
      double norm = 0;
      std::normal_distribution<double> g(0.0, 1.0);
      for (auto& d : dir) {
        d = g(rng);
        norm += d * d;
      }
      norm = std::sqrt(std::max(norm, 1e-12));
      std::array<double, 3> b{};
      for (std::size_t i = 0; i < 3; ++i) {
        b[i] = std::clamp(a[i] + dir[i] / norm * length, 2.0, static_cast<double>(config.dims[i]) - 3.0);
      }
      bool clear = true;
      for (const auto& s : spheres)
        if (segment_distance({s.x, s.y, s.z}, a, b) <= s.r + radius + 3.0) clear = false;
      if (!clear) continue;
      const double level = uniform(-200.0, -50.0);
      std::array<double, 3> lo{}, hi{};
      for (std::size_t i = 0; i < 3; ++i) {
        lo[i] = std::min(a[i], b[i]) - radius - 3;
        hi[i] = std::max(a[i], b[i]) + radius + 3;
      }
      paint(
          out.volume, lo, hi, [&](double x, double y, double z) { return soft_edge(segment_distance({x, y, z}, a, b), radius); },
          level);
      break;
    }
  }
  return out;
}

void write_phantom_dataset(const PhantomConfig& config, const std::filesystem::path& out_dir) {
  config.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
  std::vector<NoduleAnnotation> all;
  json scans = json::array();
  for (std::size_t i = 0; i < config.n_volumes; ++i) {
    const std::string id = phantom_scan_id(i);
    const std::uint64_t s = derive_seed(config.seed, i);
    const Phantom p = generate_phantom(s, config, id);
    write_volume(out_dir / (id + ".vol3"), p.volume);
    all.insert(all.end(), p.nodules.begin(), p.nodules.end());
    scans.push_back(json{{"scan_id", id}, {"seed", s}, {"nodules", p.nodules.size()}});
  }
  write_annotations(out_dir / "annotations.csv", all);
  json manifest{{"generator", "seedet-phantom"}, {"seed", config.seed}, {"config", json::parse(to_json(config))},
                {"scans", scans}};
  std::ofstream os(out_dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest in " + out_dir.string());
  os << manifest.dump(2) << '\n';
}

Dataset open_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a dataset directory: " + dir.string());
  Dataset d;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".vol3") d.volumes.push_back(entry.path());
  }
  std::sort(d.volumes.begin(), d.volumes.end());
  const auto ann = dir / "annotations.csv";
  if (std::filesystem::exists(ann)) d.annotations = read_annotations(ann);
  return d;
}

}  // namespace seedet
