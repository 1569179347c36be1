#include "scanfill/image_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace scanfill {

namespace {

std::ifstream open_in(const std::filesystem::path& path, const char* kind) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError(std::string("cannot open ") + kind + " file: " + path.string());
  return is;
}

std::ofstream open_out(const std::filesystem::path& path, const char* kind) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError(std::string("cannot open ") + kind + " file for writing: " + path.string());
  return os;
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string token(std::istream& is) {
  std::string t;
  for (;;) {
    is >> std::ws;
    if (is.peek() == '#') {
      std::string skip;
      std::getline(is, skip);
      continue;
    }
    is >> t;
    return t;
  }
}

std::size_t parse_size(const std::string& t, const std::filesystem::path& path, const char* what) {
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(t, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != t.size() || t.empty() || v == 0) throw IoError(path.string() + ": invalid " + what + " '" + t + "'");
  return v;
}

std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

}  // namespace

void write_pfm(const std::filesystem::path& path, const Image& image) {
  auto os = open_out(path, "PFM");
  os << "Pf\n" << image.width << ' ' << image.height << "\n-1.0\n";
  for (std::size_t r = image.height; r-- > 0;) {
    for (std::size_t u = 0; u < image.width; ++u) {
      std::uint32_t bits = std::bit_cast<std::uint32_t>(image.at(u, r));
      if constexpr (std::endian::native == std::endian::big) bits = byteswap32(bits);
      os.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
  if (!os) throw IoError("failed while writing PFM file: " + path.string());
}

Image read_pfm(const std::filesystem::path& path) {
  auto is = open_in(path, "PFM");
  const std::string magic = token(is);
  if (magic == "PF") throw IoError(path.string() + ": colour PFM is not supported");
  if (magic != "Pf") throw IoError(path.string() + ": missing 'Pf' magic");
  const std::size_t w = parse_size(token(is), path, "width");
  const std::size_t h = parse_size(token(is), path, "height");
  const std::string scale_tok = token(is);
  double scale = 0;
  try {
    scale = std::stod(scale_tok);
  } catch (const std::exception&) {
    throw IoError(path.string() + ": invalid scale '" + scale_tok + "'");
  }
  if (scale == 0) throw IoError(path.string() + ": scale must be non-zero");
  is.get();  // single whitespace byte before the raster
  const bool little = scale < 0;
  const bool swap = little != (std::endian::native == std::endian::little);
  Image img(w, h);
  for (std::size_t r = h; r-- > 0;) {
    for (std::size_t u = 0; u < w; ++u) {
      std::uint32_t bits = 0;
      if (!is.read(reinterpret_cast<char*>(&bits), 4)) {
        throw IoError(path.string() + ": truncated raster (expected " + std::to_string(w * h) + " floats)");
      }
      if (swap) bits = byteswap32(bits);
      img.at(u, r) = std::bit_cast<float>(bits);
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image& mask) {
  auto os = open_out(path, "PGM");
  os << "P5\n" << mask.width << ' ' << mask.height << "\n255\n";
  std::string row(mask.data.size(), '\0');
  for (std::size_t i = 0; i < mask.data.size(); ++i) row[i] = mask.data[i] > 0 ? static_cast<char>(255) : '\0';
  os.write(row.data(), static_cast<std::streamsize>(row.size()));
  if (!os) throw IoError("failed while writing PGM file: " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  auto is = open_in(path, "PGM");
  if (token(is) != "P5") throw IoError(path.string() + ": missing 'P5' magic");
  const std::size_t w = parse_size(token(is), path, "width");
  const std::size_t h = parse_size(token(is), path, "height");
  const std::size_t maxval = parse_size(token(is), path, "maxval");
  if (maxval > 255) throw IoError(path.string() + ": 16-bit PGM is not supported");
  is.get();
  std::string raw(w * h, '\0');
  if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) throw IoError(path.string() + ": truncated raster");
  Image img(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    img.data[i] = static_cast<float>(static_cast<unsigned char>(raw[i])) / static_cast<float>(maxval);
  }
  return img;
}

nlohmann::json camera_to_json(const Camera& c) {
  nlohmann::json j;
  j["focal"] = c.focal;
  j["principal"] = {c.cx, c.cy};
  std::vector<double> r;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) r.push_back(c.rotation(a, b));
  j["rotation"] = r;
  j["translation"] = {c.translation.x(), c.translation.y(), c.translation.z()};
  j["width"] = c.width;
  j["height"] = c.height;
  return j;
}

Camera camera_from_json(const nlohmann::json& j) {
  auto field = [&](const char* name) -> const nlohmann::json& {
    if (!j.contains(name)) throw IoError(std::string("camera: missing field '") + name + "'");
    return j.at(name);
  };
  try {
    Camera c;
    c.focal = field("focal").get<double>();
    const auto p = field("principal").get<std::vector<double>>();
    const auto r = field("rotation").get<std::vector<double>>();
    const auto t = field("translation").get<std::vector<double>>();
    if (p.size() != 2) throw IoError("camera: 'principal' needs 2 values");
    if (r.size() != 9) throw IoError("camera: 'rotation' needs 9 values");
    if (t.size() != 3) throw IoError("camera: 'translation' needs 3 values");
    c.cx = p[0];
    c.cy = p[1];
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) c.rotation(a, b) = r[a * 3 + b];
    c.translation = Vec3(t[0], t[1], t[2]);
    c.width = field("width").get<std::size_t>();
    c.height = field("height").get<std::size_t>();
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("camera: malformed field: ") + e.what());
  } catch (const InvalidInput& e) {
    throw IoError(std::string("camera: ") + e.what());
  }
}

void write_camera(const std::filesystem::path& path, const Camera& camera) {
  auto os = open_out(path, "camera");
  os << camera_to_json(camera).dump(2) << '\n';
  if (!os) throw IoError("failed while writing camera file: " + path.string());
}

Camera read_camera(const std::filesystem::path& path) {
  auto is = open_in(path, "camera");
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
  try {
    return camera_from_json(j);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace scanfill
