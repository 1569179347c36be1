#include "scanfill/ply.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace scanfill {

namespace {

[[noreturn]] void fail(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  throw IoError(path.string() + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

bool parse_double(const std::string& tok, double& v) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  auto [ptr, ec] = std::from_chars(b, e, v);
  return ec == std::errc() && ptr == e;
}

bool is_float_type(const std::string& t) {
  return t == "float" || t == "float32" || t == "double" || t == "float64";
}

}  // namespace

PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open PLY file: " + path.string());

  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> bool {
    if (!std::getline(is, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next() || line != "ply") fail(path, 1, "missing 'ply' magic line");
  std::size_t vertex_count = 0;
  bool saw_vertex = false, saw_format = false;
  std::vector<std::string> props;
  while (true) {
    if (!next()) fail(path, line_no, "unexpected end of header");
    const auto tok = split_ws(line);
    if (tok.empty() || tok[0] == "comment" || tok[0] == "obj_info") continue;
    if (tok[0] == "end_header") break;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii") fail(path, line_no, "only 'format ascii' is supported");
      saw_format = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) fail(path, line_no, "malformed element line");
      if (tok[1] != "vertex") fail(path, line_no, "unsupported element '" + tok[1] + "'");
      double n = 0;
      if (!parse_double(tok[2], n) || n < 0 || n != static_cast<double>(static_cast<std::size_t>(n))) {
        fail(path, line_no, "invalid vertex count '" + tok[2] + "'");
      }
      vertex_count = static_cast<std::size_t>(n);
      saw_vertex = true;
    } else if (tok[0] == "property") {
      if (!saw_vertex) fail(path, line_no, "property before element");
      if (tok.size() != 3 || !is_float_type(tok[1])) {
        fail(path, line_no, "expected 'property float <name>', got '" + line + "'");
      }
      props.push_back(tok[2]);
    } else {
      fail(path, line_no, "unrecognized header line '" + line + "'");
    }
  }
  if (!saw_format) fail(path, line_no, "missing format line");
  if (!saw_vertex) fail(path, line_no, "missing vertex element");

  auto find = [&](const char* name) -> int {
    for (std::size_t i = 0; i < props.size(); ++i)
      if (props[i] == name) return static_cast<int>(i);
    return -1;
  };
  const std::array<int, 3> xyz{find("x"), find("y"), find("z")};
  const std::array<int, 3> nxyz{find("nx"), find("ny"), find("nz")};
  if (xyz[0] < 0 || xyz[1] < 0 || xyz[2] < 0) fail(path, line_no, "vertex element lacks x, y, z");
  const bool with_normals = nxyz[0] >= 0 && nxyz[1] >= 0 && nxyz[2] >= 0;

  PointCloud cloud;
  cloud.positions.reserve(vertex_count);
  std::size_t rows = 0;
  while (next()) {
    const auto tok = split_ws(line);
    if (tok.empty()) continue;
    if (rows == vertex_count) {
      fail(path, line_no, "declared " + std::to_string(vertex_count) + " vertices but found more rows");
    }
    if (tok.size() != props.size()) {
      fail(path, line_no, "expected " + std::to_string(props.size()) + " values, got " +
                              std::to_string(tok.size()));
    }
    std::vector<double> v(tok.size());
    for (std::size_t i = 0; i < tok.size(); ++i) {
      if (!parse_double(tok[i], v[i])) fail(path, line_no, "non-numeric value '" + tok[i] + "'");
    }
    cloud.positions.emplace_back(v[xyz[0]], v[xyz[1]], v[xyz[2]]);
    if (with_normals) cloud.normals.emplace_back(v[nxyz[0]], v[nxyz[1]], v[nxyz[2]]);
    ++rows;
  }
  if (rows != vertex_count) {
    fail(path, line_no, "declared " + std::to_string(vertex_count) + " vertices but found " +
                            std::to_string(rows));
  }
  return cloud;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  cloud.validate();
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open PLY file for writing: " + path.string());
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
     << "\nproperty float x\nproperty float y\nproperty float z\n";
  if (cloud.has_normals()) os << "property float nx\nproperty float ny\nproperty float nz\n";
  os << "end_header\n";
  char buf[160];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.positions[i];
    int n = std::snprintf(buf, sizeof buf, "%.17g %.17g %.17g", p.x(), p.y(), p.z());
    os.write(buf, n);
    if (cloud.has_normals()) {
      const auto& q = cloud.normals[i];
      n = std::snprintf(buf, sizeof buf, " %.17g %.17g %.17g", q.x(), q.y(), q.z());
      os.write(buf, n);
    }
    os << '\n';
  }
  if (!os) throw IoError("failed writing PLY file: " + path.string());
}

}  // namespace scanfill
