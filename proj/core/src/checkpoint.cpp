#include "seedet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "seedet/error.hpp"

namespace seedet {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'C', 'K'};

template <class U>
void put_le(std::string& out, U value) {
  static_assert(std::is_unsigned_v<U>);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <class U>
  U get() {
    need(sizeof(U));
    U value = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      value |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return value;
  }

  std::string take(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw IoError("checkpoint: truncated file");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const CheckpointFile& file) {
  std::string out(kMagic, kMagic + 4);
  put_le<std::uint16_t>(out, CheckpointFile::kVersion);
  put_le<std::uint64_t>(out, file.metadata.size());
  out += file.metadata;
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(file.arrays.size()));
  for (const auto& [name, array] : file.arrays) {
    if (array.values.size() != shape_numel(array.shape)) {
      throw ShapeError("checkpoint: entry '" + name + "' has " + std::to_string(array.values.size()) +
                       " values for shape " + shape_str(array.shape));
    }
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(array.shape.size()));
    for (std::size_t e : array.shape) put_le<std::uint64_t>(out, e);
    for (double v : array.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

CheckpointFile decode_checkpoint(const std::string& bytes) {
  Reader in(bytes);
  if (in.take(4) != std::string(kMagic, 4)) throw IoError("checkpoint: bad magic bytes");
  const auto version = in.get<std::uint16_t>();
  if (version != CheckpointFile::kVersion) {
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  }
  CheckpointFile file;
  file.metadata = in.take(in.get<std::uint64_t>());
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = in.take(in.get<std::uint32_t>());
    StoredArray array;
    const auto rank = in.get<std::uint32_t>();
    for (std::uint32_t a = 0; a < rank; ++a) array.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
    const std::size_t n = shape_numel(array.shape);
    array.values.resize(n);
    for (std::size_t k = 0; k < n; ++k) array.values[k] = std::bit_cast<double>(in.get<std::uint64_t>());
    if (!file.arrays.emplace(std::move(name), std::move(array)).second) {
      throw IoError("checkpoint: duplicate entry");
    }
  }
  if (!in.done()) throw IoError("checkpoint: trailing bytes");
  return file;
}

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  const std::string bytes = encode_checkpoint(file);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  std::ostringstream buf;
  buf << is.rdbuf();
  return decode_checkpoint(buf.str());
}

}  // namespace seedet
