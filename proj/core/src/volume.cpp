#include "seedet/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "csv.hpp"
#include "seedet/error.hpp"

namespace seedet {

Volume::Volume(std::string id, std::size_t x, std::size_t y, std::size_t z, float fill)
    : scan_id(std::move(id)), nx(x), ny(y), nz(z), values(x * y * z, fill) {}

void Volume::validate() const {
  if (nx < 8 || ny < 8 || nz < 8) throw ConfigError("volume '" + scan_id + "': dims must be >= 8 per axis");
  if (values.size() != size()) throw ConfigError("volume '" + scan_id + "': value count does not match dims");
  if (mask && mask->size() != size()) throw ConfigError("volume '" + scan_id + "': mask size does not match dims");
  for (float v : values)
    if (!std::isfinite(v)) throw ConfigError("volume '" + scan_id + "': non-finite voxel value");
}

double normalize_intensity(double hu, double low, double high) {
  return (std::clamp(hu, low, high) - low) / (high - low);
}

Volume preprocess(const Volume& volume, double low, double high) {
  if (!(high > low)) throw ConfigError("preprocess: clip range is empty");
  Volume out = volume;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = static_cast<float>(normalize_intensity(volume.values[i], low, high));
    if (volume.mask && (*volume.mask)[i] == 0) out.values[i] = 0.0f;
  }
  return out;
}

namespace {

constexpr std::uint16_t kVolVersion = 1;

template <class U>
void put_le(std::ostream& os, U v) {
  char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(buf, sizeof(U));
}

template <class U>
U get_le(std::istream& is, const std::filesystem::path& path) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw IoError("truncated file " + path.string());
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

void write_header(std::ostream& os, const Volume& v) {
  os.write("VOL3", 4);
  put_le<std::uint16_t>(os, kVolVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.nx));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.ny));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(v.nz));
}

std::array<std::size_t, 3> read_header(std::istream& is, const std::filesystem::path& path) {
  char magic[4];
  if (!is.read(magic, 4) || std::string(magic, 4) != "VOL3") throw IoError("not a .vol3 file: " + path.string());
  const auto version = get_le<std::uint16_t>(is, path);
  if (version != kVolVersion) throw IoError("unsupported .vol3 version in " + path.string());
  std::array<std::size_t, 3> dims{};
  for (auto& d : dims) d = get_le<std::uint32_t>(is, path);
  return dims;
}

}  // namespace

void write_volume(const std::filesystem::path& path, const Volume& volume) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_header(os, volume);
  for (float v : volume.values) put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw IoError("write failed for " + path.string());
}

Volume read_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const auto dims = read_header(is, path);
  Volume v(path.stem().string(), dims[0], dims[1], dims[2]);
  for (auto& x : v.values) x = std::bit_cast<float>(get_le<std::uint32_t>(is, path));
  return v;
}

void write_mask(const std::filesystem::path& path, const Volume& volume) {
  if (!volume.mask) throw ConfigError("volume '" + volume.scan_id + "' has no mask");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_header(os, volume);
  os.write(reinterpret_cast<const char*>(volume.mask->data()), static_cast<std::streamsize>(volume.mask->size()));
  if (!os) throw IoError("write failed for " + path.string());
}

void read_mask(const std::filesystem::path& path, Volume& volume) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const auto dims = read_header(is, path);
  if (dims[0] != volume.nx || dims[1] != volume.ny || dims[2] != volume.nz) {
    throw IoError("mask dims do not match volume in " + path.string());
  }
  std::vector<std::uint8_t> mask(volume.size());
  if (!is.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()))) {
    throw IoError("truncated file " + path.string());
  }
  volume.mask = std::move(mask);
}

void write_annotations(const std::filesystem::path& path, const std::vector<NoduleAnnotation>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "scan_id,x,y,z,diameter\n" << std::setprecision(17);
  for (const auto& r : rows) os << r.scan_id << ',' << r.x << ',' << r.y << ',' << r.z << ',' << r.diameter << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

std::vector<NoduleAnnotation> read_annotations(const std::filesystem::path& path) {
  std::vector<NoduleAnnotation> out;
  for (const auto& row : csv::read_table(path, {"scan_id", "x", "y", "z", "diameter"})) {
    NoduleAnnotation a;
    a.scan_id = row[0];
    a.x = csv::to_double(row[1], path);
    a.y = csv::to_double(row[2], path);
    a.z = csv::to_double(row[3], path);
    a.diameter = csv::to_double(row[4], path);
    if (!(a.diameter > 0)) throw IoError("non-positive diameter in " + path.string());
    out.push_back(std::move(a));
  }
  return out;
}

std::vector<NoduleAnnotation> annotations_for(const std::vector<NoduleAnnotation>& all, const std::string& scan_id) {
  std::vector<NoduleAnnotation> out;
  for (const auto& a : all)
    if (a.scan_id == scan_id) out.push_back(a);
  return out;
}

}  // namespace seedet
