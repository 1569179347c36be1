#include "scanfill/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace scanfill {

namespace {

void put_u32(std::ofstream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

bool get_u32(std::ifstream& is, std::uint32_t& v) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path.string());
  os.write("PCCF", 4);
  put_u32(os, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
    for (float f : t.data()) put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

NamedTensors load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || std::memcmp(magic.data(), "PCCF", 4) != 0) {
    throw IoError("not a checkpoint file (bad magic): " + path.string());
  }
  std::uint32_t version = 0;
  if (!get_u32(is, version) || version != kCheckpointVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + ": " + path.string());
  }
  NamedTensors out;
  std::uint32_t name_len = 0;
  while (get_u32(is, name_len)) {
    std::string name(name_len, '\0');
    std::uint32_t rank = 0;
    if (!is.read(name.data(), name_len) || !get_u32(is, rank)) {
      throw IoError("truncated checkpoint entry in " + path.string());
    }
    ad::Shape shape(rank);
    for (auto& d : shape) {
      std::uint32_t v = 0;
      if (!get_u32(is, v)) throw IoError("truncated shape of '" + name + "' in " + path.string());
      d = v;
    }
    std::vector<float> values(ad::numel(shape));
    for (auto& f : values) {
      std::uint32_t bits = 0;
      if (!get_u32(is, bits)) throw IoError("truncated values of '" + name + "' in " + path.string());
      f = std::bit_cast<float>(bits);
    }
    out.emplace_back(std::move(name), ad::Tensorf(std::move(shape), std::move(values)));
  }
  return out;
}

const ad::Tensorf& find_tensor(const NamedTensors& tensors, const std::string& name) {
  for (const auto& [n, t] : tensors)
    if (n == name) return t;
  throw IoError("checkpoint has no entry named '" + name + "'");
}

}  // namespace scanfill
