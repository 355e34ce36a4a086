#include "surfelmap/ply_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "text_util.hpp"

static_assert(std::endian::native == std::endian::little,
              "PLY writer assumes a little-endian host");

namespace surfelmap {

namespace {

constexpr const char* kHeaderProps =
    "property float x\n"
    "property float y\n"
    "property float z\n"
    "property float nx\n"
    "property float ny\n"
    "property float nz\n"
    "property uchar gray\n"
    "property float radius\n"
    "property float weight\n"
    "property int update_count\n"
    "property int keyframe_id\n";

constexpr std::size_t kRecordSize = 4 * 8 + 1 + 4 * 2;  // 41 bytes

template <typename T>
void put(std::string& buf, T value) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T take(const char*& cursor) {
  T value;
  std::memcpy(&value, cursor, sizeof(T));
  cursor += sizeof(T);
  return value;
}

void append_record(std::string& buf, const Surfel& s) {
  put(buf, static_cast<float>(s.position.x()));
  put(buf, static_cast<float>(s.position.y()));
  put(buf, static_cast<float>(s.position.z()));
  put(buf, static_cast<float>(s.normal.x()));
  put(buf, static_cast<float>(s.normal.y()));
  put(buf, static_cast<float>(s.normal.z()));
  put(buf, static_cast<std::uint8_t>(
               std::clamp(std::lround(s.intensity), 0L, 255L)));
  put(buf, static_cast<float>(s.radius));
  put(buf, static_cast<float>(s.weight));
  put(buf, static_cast<std::int32_t>(s.update_count));
  put(buf, static_cast<std::int32_t>(s.attached_keyframe));
}

void write_ply(const std::filesystem::path& path, std::size_t count,
               const std::string& payload) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out << "ply\nformat binary_little_endian 1.0\nelement vertex " << count
      << "\n"
      << kHeaderProps << "end_header\n";
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) {
    throw std::runtime_error("write failed for " + path.string());
  }
}

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

struct PlyHeader {
  bool binary = false;
  std::vector<PlyElement> elements;
  std::size_t data_offset = 0;
};

std::size_t scalar_size(const std::string& type) {
  static const std::map<std::string, std::size_t> sizes = {
      {"char", 1},  {"int8", 1},    {"uchar", 1},  {"uint8", 1},
      {"short", 2}, {"int16", 2},   {"ushort", 2}, {"uint16", 2},
      {"int", 4},   {"int32", 4},   {"uint", 4},   {"uint32", 4},
      {"float", 4}, {"float32", 4}, {"double", 8}, {"float64", 8}};
  auto it = sizes.find(type);
  if (it == sizes.end()) {
    throw std::runtime_error("unsupported PLY property type: " + type);
  }
  return it->second;
}

double decode_scalar(const char* bytes, const std::string& type) {
  const char* c = bytes;
  if (type == "float" || type == "float32") return take<float>(c);
  if (type == "double" || type == "float64") return take<double>(c);
  if (type == "char" || type == "int8") return take<std::int8_t>(c);
  if (type == "uchar" || type == "uint8") return take<std::uint8_t>(c);
  if (type == "short" || type == "int16") return take<std::int16_t>(c);
  if (type == "ushort" || type == "uint16") return take<std::uint16_t>(c);
  if (type == "int" || type == "int32") return take<std::int32_t>(c);
  if (type == "uint" || type == "uint32") {
    return take<std::uint32_t>(c);
  }
  throw std::runtime_error("unsupported PLY property type: " + type);
}

PlyHeader parse_header(const std::string& content,
                       const std::filesystem::path& path) {
  PlyHeader header;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    if (pos >= content.size()) {
      throw std::runtime_error("truncated PLY header in " + path.string());
    }
    std::size_t end = content.find('\n', pos);
    if (end == std::string::npos) {
      end = content.size();
    }
    std::string line = content.substr(pos, end - pos);
    pos = end + 1;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    return line;
  };

  if (next_line() != "ply") {
    throw std::runtime_error(path.string() + " is not a PLY file");
  }
  bool have_format = false;
  while (true) {
    const std::string line = next_line();
    const auto tokens = textutil::split_ws(line);
    if (tokens.empty()) {
      continue;
    }
    if (tokens[0] == "comment" || tokens[0] == "obj_info") {
      continue;
    }
    if (tokens[0] == "format") {
      if (tokens.size() < 2) {
        throw std::runtime_error("bad PLY format line in " + path.string());
      }
      if (tokens[1] == "binary_little_endian") {
        header.binary = true;
      } else if (tokens[1] == "ascii") {
        header.binary = false;
      } else {
        throw std::runtime_error("unsupported PLY format in " + path.string());
      }
      have_format = true;
      continue;
    }
    if (tokens[0] == "element") {
      if (tokens.size() != 3) {
        throw std::runtime_error("bad PLY element line in " + path.string());
      }
      PlyElement el;
      el.name = std::string(tokens[1]);
      el.count = static_cast<std::size_t>(
          textutil::parse_int(tokens[2], "PLY element count"));
      header.elements.push_back(std::move(el));
      continue;
    }
    if (tokens[0] == "property") {
      if (header.elements.empty() || tokens.size() < 3) {
        throw std::runtime_error("bad PLY property line in " + path.string());
      }
      PlyProperty prop;
      if (tokens[1] == "list") {
        prop.is_list = true;
        prop.name = std::string(tokens.back());
      } else {
        prop.type = std::string(tokens[1]);
        prop.name = std::string(tokens[2]);
      }
      header.elements.back().properties.push_back(std::move(prop));
      continue;
    }
    if (tokens[0] == "end_header") {
      break;
    }
    throw std::runtime_error("unexpected PLY header line '" + line + "' in " +
                             path.string());
  }
  if (!have_format) {
    throw std::runtime_error("PLY header missing format line in " +
                             path.string());
  }
  header.data_offset = pos;
  return header;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

}  // namespace

void export_ply(std::span<const Surfel> surfels,
                const std::filesystem::path& path) {
  std::string payload;
  payload.reserve(surfels.size() * kRecordSize);
  for (const Surfel& s : surfels) {
    append_record(payload, s);
  }
  write_ply(path, surfels.size(), payload);
}

void export_ply(const MapDatabase& map, const std::filesystem::path& path) {
  std::string payload;
  payload.reserve(map.size() * kRecordSize);
  for (const auto& [kf, group] : map.groups()) {
    for (const Surfel& s : group) {
      append_record(payload, s);
    }
  }
  write_ply(path, map.size(), payload);
}

std::vector<Surfel> import_ply(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  const PlyHeader header = parse_header(content, path);
  if (!header.binary) {
    throw std::runtime_error("surfel PLY must be binary little-endian: " +
                             path.string());
  }
  if (header.elements.size() != 1 || header.elements[0].name != "vertex") {
    throw std::runtime_error("surfel PLY must contain a single vertex element: " +
                             path.string());
  }
  const PlyElement& vertex = header.elements[0];
  static const char* kExpected[] = {"x",      "y",      "z",
                                    "nx",     "ny",     "nz",
                                    "gray",   "radius", "weight",
                                    "update_count", "keyframe_id"};
  if (vertex.properties.size() != 11) {
    throw std::runtime_error("unexpected surfel PLY layout: " + path.string());
  }
  for (std::size_t i = 0; i < 11; ++i) {
    if (vertex.properties[i].name != kExpected[i] ||
        vertex.properties[i].is_list) {
      throw std::runtime_error("unexpected surfel PLY layout: " +
                               path.string());
    }
  }
  if (content.size() - header.data_offset < vertex.count * kRecordSize) {
    throw std::runtime_error("truncated surfel PLY: " + path.string());
  }

  std::vector<Surfel> surfels;
  surfels.reserve(vertex.count);
  const char* cursor = content.data() + header.data_offset;
  for (std::size_t i = 0; i < vertex.count; ++i) {
    Surfel s;
    const float x = take<float>(cursor);
    const float y = take<float>(cursor);
    const float z = take<float>(cursor);
    const float nx = take<float>(cursor);
    const float ny = take<float>(cursor);
    const float nz = take<float>(cursor);
    s.position = Vec3(x, y, z);
    s.normal = Vec3(nx, ny, nz);
    s.intensity = take<std::uint8_t>(cursor);
    s.radius = take<float>(cursor);
    s.weight = take<float>(cursor);
    s.update_count = take<std::int32_t>(cursor);
    s.attached_keyframe = take<std::int32_t>(cursor);
    surfels.push_back(s);
  }
  return surfels;
}

std::vector<Vec3> load_ply_points(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  const PlyHeader header = parse_header(content, path);

  std::size_t vertex_index = header.elements.size();
  for (std::size_t i = 0; i < header.elements.size(); ++i) {
    if (header.elements[i].name == "vertex") {
      vertex_index = i;
      break;
    }
  }
  if (vertex_index == header.elements.size()) {
    throw std::runtime_error("PLY has no vertex element: " + path.string());
  }
  if (header.binary && vertex_index != 0) {
    throw std::runtime_error(
        "binary PLY with elements before vertex is unsupported: " +
        path.string());
  }
  const PlyElement& vertex = header.elements[vertex_index];
  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
    const PlyProperty& p = vertex.properties[i];
    if (p.is_list) {
      throw std::runtime_error("vertex list properties are unsupported: " +
                               path.string());
    }
    if (p.name == "x") ix = static_cast<int>(i);
    if (p.name == "y") iy = static_cast<int>(i);
    if (p.name == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) {
    throw std::runtime_error("vertex element lacks x/y/z: " + path.string());
  }

  std::vector<Vec3> points;
  points.reserve(vertex.count);

  if (header.binary) {
    std::vector<std::size_t> offsets(vertex.properties.size(), 0);
    std::size_t record = 0;
    for (std::size_t i = 0; i < vertex.properties.size(); ++i) {
      offsets[i] = record;
      record += scalar_size(vertex.properties[i].type);
    }
    if (content.size() - header.data_offset < vertex.count * record) {
      throw std::runtime_error("truncated PLY data: " + path.string());
    }
    const char* base = content.data() + header.data_offset;
    for (std::size_t i = 0; i < vertex.count; ++i) {
      const char* rec = base + i * record;
      points.emplace_back(
          decode_scalar(rec + offsets[ix], vertex.properties[ix].type),
          decode_scalar(rec + offsets[iy], vertex.properties[iy].type),
          decode_scalar(rec + offsets[iz], vertex.properties[iz].type));
    }
    return points;
  }

  // ascii: skip rows of elements preceding vertex, then read vertex rows.
  std::size_t pos = header.data_offset;
  auto next_data_line = [&]() -> std::string_view {
    while (pos < content.size()) {
      std::size_t end = content.find('\n', pos);
      if (end == std::string::npos) {
        end = content.size();
      }
      std::string_view line(content.data() + pos, end - pos);
      pos = end + 1;
      if (!line.empty()) {
        return line;
      }
    }
    throw std::runtime_error("truncated PLY data: " + path.string());
  };
  for (std::size_t e = 0; e < vertex_index; ++e) {
    for (std::size_t i = 0; i < header.elements[e].count; ++i) {
      next_data_line();
    }
  }
  for (std::size_t i = 0; i < vertex.count; ++i) {
    const auto tokens = textutil::split_ws(next_data_line());
    if (tokens.size() < vertex.properties.size()) {
      throw std::runtime_error("short PLY vertex row in " + path.string());
    }
    points.emplace_back(
        textutil::parse_double(tokens[ix], "PLY vertex"),
        textutil::parse_double(tokens[iy], "PLY vertex"),
        textutil::parse_double(tokens[iz], "PLY vertex"));
  }
  return points;
}

}  // namespace surfelmap
