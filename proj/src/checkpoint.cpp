#include "tribench/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace tribench {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

void put_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& is, const fs::path& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated checkpoint: " + path.string());
  return v;
}

}  // namespace

void write_checkpoint(const fs::path& path, const TensorMap& tensors) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint: " + tmp.string());
    os.write("CUTB", 4);
    put_u32(os, kCheckpointVersion);
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
      put_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) put_u32(os, static_cast<std::uint32_t>(d));
      for (Eigen::Index i = 0; i < t.data.size(); ++i) {
        const float f = static_cast<float>(t.data[i]);
        os.write(reinterpret_cast<const char*>(&f), 4);
      }
    }
    if (!os) throw IoError("checkpoint write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

TensorMap read_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CUTB", 4) != 0)
    throw IoError("bad checkpoint magic: " + path.string());
  const auto version = get_u32(is, path);
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  const auto count = get_u32(is, path);
  TensorMap out;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(get_u32(is, path), '\0');
    if (!is.read(name.data(), static_cast<std::streamsize>(name.size())))
      throw IoError("truncated checkpoint: " + path.string());
    ad::Shape shape(get_u32(is, path));
    for (auto& d : shape) d = static_cast<int>(get_u32(is, path));
    ad::Tensor t(shape);
    for (Eigen::Index i = 0; i < t.data.size(); ++i) {
      float f = 0.0f;
      if (!is.read(reinterpret_cast<char*>(&f), 4)) throw IoError("truncated checkpoint: " + path.string());
      t.data[i] = f;
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

}  // namespace tribench
