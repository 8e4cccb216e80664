#include "echofusion/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace echofusion {

namespace fs = std::filesystem;

namespace {

[[noreturn]] void fail(IoErrorCode code, const std::string& what) { throw IoError(code, what); }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(IoErrorCode::FileNotFound, "file not found: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(IoErrorCode::WriteFailed, "cannot open for writing: " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) fail(IoErrorCode::WriteFailed, "write failed: " + path.string());
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end;
}

template <typename T, std::size_t N>
std::array<T, N> parse_list(const std::string& key, const std::string& value) {
  std::array<T, N> out{};
  std::istringstream ss(value);
  std::string tok;
  std::size_t n = 0;
  while (ss >> tok) {
    if (n == N || !parse_number(tok, out[n]))
      fail(IoErrorCode::MalformedHeader, "malformed header: bad value for " + key);
    ++n;
  }
  if (n != N) fail(IoErrorCode::MalformedHeader, "malformed header: " + key + " needs " + std::to_string(N) + " values");
  return out;
}

std::string_view element_type_name(ElementKind kind) {
  switch (kind) {
    case ElementKind::UInt8: return "MET_UCHAR";
    case ElementKind::Int16: return "MET_SHORT";
    case ElementKind::Float32: return "MET_FLOAT";
  }
  return "MET_UCHAR";
}

ElementKind element_kind_from(const std::string& name) {
  if (name == "MET_UCHAR") return ElementKind::UInt8;
  if (name == "MET_SHORT") return ElementKind::Int16;
  if (name == "MET_FLOAT") return ElementKind::Float32;
  fail(IoErrorCode::UnsupportedElementType, "unsupported element type: " + name);
}

// Payload bytes are little-endian on disk; swap element-wise on big-endian hosts.
void to_little_endian(std::span<std::byte> bytes, std::size_t elem) {
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i + elem <= bytes.size(); i += elem) std::reverse(bytes.begin() + i, bytes.begin() + i + elem);
  } else {
    (void)bytes;
    (void)elem;
  }
}

std::string join3(const Vec3& v) {
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

// Splits "P5 <w> <h> <maxval>" plus one whitespace byte; returns payload offset.
std::size_t parse_pgm_header(const std::string& data, const std::string& name, int& w, int& h, int& maxval) {
  std::size_t pos = 0;
  auto next_token = [&](const char* what) {
    for (;;) {
      while (pos < data.size() && std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
      if (pos < data.size() && data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos]))) ++pos;
    if (start == pos) fail(IoErrorCode::ParseError, name + ": offset " + std::to_string(start) + ": missing " + what);
    return std::pair{std::string_view(data).substr(start, pos - start), start};
  };
  const auto [magic, moff] = next_token("magic");
  if (magic != "P5") fail(IoErrorCode::ParseError, name + ": offset " + std::to_string(moff) + ": expected P5");
  auto read_int = [&](const char* what) {
    const auto [tok, off] = next_token(what);
    int v = 0;
    if (!parse_number(tok, v) || v <= 0)
      fail(IoErrorCode::ParseError, name + ": offset " + std::to_string(off) + ": bad " + what);
    return v;
  };
  w = read_int("width");
  h = read_int("height");
  maxval = read_int("maxval");
  if (pos >= data.size()) fail(IoErrorCode::ParseError, name + ": offset " + std::to_string(pos) + ": missing payload");
  return pos + 1;
}

}  // namespace

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string format_float(float v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

// ---------------------------------------------------------------------------
// Volumes

void write_volume(const VoxelVolume& vol, const fs::path& path) {
  const bool local = path.extension() == ".mha";
  fs::path raw = path;
  raw.replace_extension(".raw");
  std::string header;
  header += "NDims = 3\n";
  const auto& d = vol.dims();
  header += "DimSize = " + std::to_string(d[0]) + " " + std::to_string(d[1]) + " " + std::to_string(d[2]) + "\n";
  header += "ElementSpacing = " + join3(vol.spacing()) + "\n";
  header += "Offset = " + join3(vol.origin()) + "\n";
  header += "ElementType = " + std::string(element_type_name(vol.kind())) + "\n";
  header += "ElementDataFile = " + (local ? std::string("LOCAL") : raw.filename().string()) + "\n";

  std::string payload(reinterpret_cast<const char*>(vol.bytes().data()), vol.bytes().size());
  to_little_endian(std::as_writable_bytes(std::span(payload.data(), payload.size())), element_size(vol.kind()));
  if (local) {
    write_file(path, header + payload);
  } else {
    write_file(path, header);
    write_file(raw, payload);
  }
}

VoxelVolume read_volume(const fs::path& path) {
  const std::string data = read_file(path);
  std::map<std::string, std::string> keys;
  std::size_t pos = 0;
  std::size_t payload_start = std::string::npos;
  while (pos < data.size()) {
    std::size_t eol = data.find('\n', pos);
    if (eol == std::string::npos) eol = data.size();
    const std::string line = trim(std::string_view(data).substr(pos, eol - pos));
    pos = std::min(eol + 1, data.size());
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(IoErrorCode::MalformedHeader, "malformed header: expected 'Key = Value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    keys[key] = trim(std::string_view(line).substr(eq + 1));
    if (key == "ElementDataFile") {
      payload_start = pos;
      break;
    }
  }
  for (const char* k : {"NDims", "DimSize", "ElementType", "ElementDataFile"})
    if (!keys.count(k)) fail(IoErrorCode::MalformedHeader, std::string("malformed header: missing ") + k);
  int ndims = 0;
  if (!parse_number(std::string_view(keys["NDims"]), ndims) || ndims != 3)
    fail(IoErrorCode::MalformedHeader, "malformed header: NDims must be 3");
  if (keys.count("BinaryDataByteOrderMSB") && keys["BinaryDataByteOrderMSB"] == "True")
    fail(IoErrorCode::MalformedHeader, "malformed header: big-endian payloads are not supported");
  const auto dims = parse_list<int, 3>("DimSize", keys["DimSize"]);
  const auto spacing = keys.count("ElementSpacing") ? parse_list<double, 3>("ElementSpacing", keys["ElementSpacing"])
                                                    : std::array<double, 3>{1.0, 1.0, 1.0};
  const auto offset =
      keys.count("Offset") ? parse_list<double, 3>("Offset", keys["Offset"]) : std::array<double, 3>{0.0, 0.0, 0.0};
  const ElementKind kind = element_kind_from(keys["ElementType"]);
  if (dims[0] <= 0 || dims[1] <= 0 || dims[2] <= 0)
    fail(IoErrorCode::MalformedHeader, "malformed header: DimSize must be positive");
  if (!(spacing[0] > 0.0 && spacing[1] > 0.0 && spacing[2] > 0.0))
    fail(IoErrorCode::MalformedHeader, "malformed header: ElementSpacing must be positive");

  std::string raw_data;
  std::string_view payload;
  if (keys["ElementDataFile"] == "LOCAL") {
    payload = std::string_view(data).substr(payload_start);
  } else {
    raw_data = read_file(path.parent_path() / keys["ElementDataFile"]);
    payload = raw_data;
  }
  VoxelVolume vol(Index3{dims[0], dims[1], dims[2]}, Vec3(spacing[0], spacing[1], spacing[2]),
                  Vec3(offset[0], offset[1], offset[2]), kind);
  if (payload.size() != vol.bytes().size())
    fail(IoErrorCode::PayloadLengthMismatch, "payload length mismatch: expected " + std::to_string(vol.bytes().size()) +
                                                 " bytes, found " + std::to_string(payload.size()));
  std::memcpy(vol.bytes().data(), payload.data(), payload.size());
  to_little_endian(vol.bytes(), element_size(kind));
  return vol;
}

// ---------------------------------------------------------------------------
// PGM

void write_depth_pgm(const DepthImage& depth, const fs::path& path) {
  std::string out = "P5\n" + std::to_string(depth.width) + " " + std::to_string(depth.height) + "\n65535\n";
  out.reserve(out.size() + depth.depth.size() * 2);
  for (float d : depth.depth) {
    const double q = d > 0.0f && std::isfinite(d) ? std::round(static_cast<double>(d) * kDepthScale) : 0.0;
    const auto v = static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
    out.push_back(static_cast<char>(v >> 8));
    out.push_back(static_cast<char>(v & 0xff));
  }
  write_file(path, out);
}

DepthImage read_depth_pgm(const fs::path& path) {
  const std::string data = read_file(path);
  int w = 0, h = 0, maxval = 0;
  const std::size_t off = parse_pgm_header(data, path.string(), w, h, maxval);
  if (maxval != 65535) fail(IoErrorCode::ParseError, path.string() + ": maxval must be 65535");
  const std::size_t need = static_cast<std::size_t>(w) * h * 2;
  if (data.size() - off != need)
    fail(IoErrorCode::ParseError, path.string() + ": offset " + std::to_string(off) + ": expected " +
                                      std::to_string(need) + " payload bytes, found " + std::to_string(data.size() - off));
  DepthImage img(w, h);
  for (std::size_t i = 0; i < img.depth.size(); ++i) {
    const auto hi = static_cast<unsigned char>(data[off + 2 * i]);
    const auto lo = static_cast<unsigned char>(data[off + 2 * i + 1]);
    img.depth[i] = static_cast<float>(static_cast<double>((hi << 8) | lo) / kDepthScale);
  }
  return img;
}

void write_gray_pgm(const GrayImage& image, const fs::path& path) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  float lo = 0.0f, hi = 0.0f;
  if (!image.data.empty()) {
    const auto [mn, mx] = std::minmax_element(image.data.begin(), image.data.end());
    lo = *mn;
    hi = *mx;
  }
  const double range = static_cast<double>(hi) - lo;
  for (float v : image.data) {
    const double n = range > 0.0 ? (static_cast<double>(v) - lo) / range : 0.0;
    out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(n * 255.0))));
  }
  write_file(path, out);
}

Image2D<std::uint8_t> read_gray_pgm(const fs::path& path) {
  const std::string data = read_file(path);
  int w = 0, h = 0, maxval = 0;
  const std::size_t off = parse_pgm_header(data, path.string(), w, h, maxval);
  if (maxval > 255) fail(IoErrorCode::ParseError, path.string() + ": maxval must be at most 255");
  const std::size_t need = static_cast<std::size_t>(w) * h;
  if (data.size() - off != need)
    fail(IoErrorCode::ParseError, path.string() + ": offset " + std::to_string(off) + ": expected " +
                                      std::to_string(need) + " payload bytes");
  Image2D<std::uint8_t> img(w, h);
  std::memcpy(img.data.data(), data.data() + off, need);
  return img;
}

// ---------------------------------------------------------------------------
// PLY

void write_ply(const TriangleMesh& mesh, const fs::path& path) {
  if (mesh.normals.size() != mesh.vertices.size())
    throw std::invalid_argument("mesh normals and vertices differ in count");
  std::string out;
  out += "ply\nformat ascii 1.0\ncomment echofusion " + std::string(kVersion) + "\n";
  out += "element vertex " + std::to_string(mesh.vertices.size()) + "\n";
  for (const char* p : {"x", "y", "z", "nx", "ny", "nz"}) out += std::string("property float ") + p + "\n";
  out += "element face " + std::to_string(mesh.triangles.size()) + "\n";
  out += "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t i = 0; i < mesh.vertices.size(); ++i) {
    const Vec3f& v = mesh.vertices[i];
    const Vec3f& n = mesh.normals[i];
    out += format_float(v.x()) + " " + format_float(v.y()) + " " + format_float(v.z()) + " " + format_float(n.x()) +
           " " + format_float(n.y()) + " " + format_float(n.z()) + "\n";
  }
  for (const auto& t : mesh.triangles)
    out += "3 " + std::to_string(t[0]) + " " + std::to_string(t[1]) + " " + std::to_string(t[2]) + "\n";
  write_file(path, out);
}

TriangleMesh read_ply(const fs::path& path) {
  const std::string data = read_file(path);
  std::istringstream in(data);
  std::string line;
  int line_no = 0;
  auto bad = [&](const std::string& what) {
    fail(IoErrorCode::ParseError, path.string() + ": line " + std::to_string(line_no) + ": " + what);
  };
  auto next_line = [&]() {
    if (!std::getline(in, line)) bad("unexpected end of file");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };

  next_line();
  if (line != "ply") bad("expected 'ply'");
  next_line();
  if (line != "format ascii 1.0") bad("only 'format ascii 1.0' is supported");
  std::size_t nv = 0, nf = 0;
  std::vector<std::string> vprops;
  std::string current;
  for (;;) {
    next_line();
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "comment" || word == "obj_info" || word.empty()) continue;
    if (word == "element") {
      std::string count;
      ls >> current >> count;
      std::size_t n = 0;
      if (!parse_number(std::string_view(count), n)) bad("bad element count");
      if (current == "vertex") nv = n;
      else if (current == "face") nf = n;
      else bad("unsupported element '" + current + "'");
    } else if (word == "property") {
      if (current == "vertex") {
        std::string type, name;
        ls >> type >> name;
        if (type != "float") bad("vertex properties must be float");
        vprops.push_back(name);
      } else if (current != "face") {
        bad("property outside an element");
      }
    } else {
      bad("unexpected header line");
    }
  }
  if (vprops != std::vector<std::string>{"x", "y", "z", "nx", "ny", "nz"})
    fail(IoErrorCode::ParseError, path.string() + ": vertex properties must be x y z nx ny nz");

  TriangleMesh mesh;
  mesh.vertices.reserve(nv);
  mesh.normals.reserve(nv);
  for (std::size_t i = 0; i < nv; ++i) {
    next_line();
    std::istringstream ls(line);
    std::array<float, 6> f{};
    std::string tok;
    std::size_t k = 0;
    while (ls >> tok) {
      if (k == 6 || !parse_number(std::string_view(tok), f[k])) bad("bad vertex record");
      ++k;
    }
    if (k != 6) bad("vertex record needs 6 values");
    mesh.vertices.emplace_back(f[0], f[1], f[2]);
    mesh.normals.emplace_back(f[3], f[4], f[5]);
  }
  mesh.triangles.reserve(nf);
  for (std::size_t i = 0; i < nf; ++i) {
    next_line();
    std::istringstream ls(line);
    std::string tok;
    std::vector<std::int64_t> vals;
    while (ls >> tok) {
      std::int64_t v = 0;
      if (!parse_number(std::string_view(tok), v)) bad("bad face record");
      vals.push_back(v);
    }
    if (vals.size() != 4 || vals[0] != 3) bad("faces must be triangles");
    std::array<std::uint32_t, 3> t{};
    for (int k = 0; k < 3; ++k) {
      if (vals[k + 1] < 0 || static_cast<std::size_t>(vals[k + 1]) >= nv) bad("face index out of range");
      t[k] = static_cast<std::uint32_t>(vals[k + 1]);
    }
    mesh.triangles.push_back(t);
  }
  return mesh;
}

// ---------------------------------------------------------------------------
// Trajectories

std::string format_trajectory_line(const TrajectoryRecord& rec) {
  nlohmann::ordered_json j;
  j["frame"] = rec.frame;
  j["status"] = rec.status == TrackStatus::Tracked ? "tracked" : "lost";
  auto rot = nlohmann::ordered_json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(rec.pose.rotation()(r, c));
  j["rotation"] = rot;
  const Vec3& t = rec.pose.translation();
  j["translation_mm"] = {t.x(), t.y(), t.z()};
  j["inlier_ratio"] = rec.inlier_ratio;
  j["mean_residual_mm"] = rec.mean_residual_mm;
  return j.dump();
}

TrajectoryRecord parse_trajectory_line(std::string_view line, int line_number) {
  auto bad = [&](const std::string& what) -> IoError {
    return IoError(IoErrorCode::ParseError, "line " + std::to_string(line_number) + ": " + what);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw bad(std::string("invalid JSON at byte ") + std::to_string(e.byte));
  }
  if (!j.is_object()) throw bad("expected a JSON object");
  auto number = [&](const nlohmann::json& v, const char* key) {
    if (!v.is_number()) throw bad(std::string(key) + " must be numeric");
    return v.get<double>();
  };
  try {
    TrajectoryRecord rec;
    if (!j.contains("frame") || !j["frame"].is_number_integer()) throw bad("frame must be an integer");
    rec.frame = j["frame"].get<int>();
    if (!j.contains("status") || !j["status"].is_string()) throw bad("status must be a string");
    const std::string status = j["status"].get<std::string>();
    if (status == "tracked") rec.status = TrackStatus::Tracked;
    else if (status == "lost") rec.status = TrackStatus::Lost;
    else throw bad("status must be \"tracked\" or \"lost\"");
    if (!j.contains("rotation") || !j["rotation"].is_array()) throw bad("rotation must be an array");
    if (j["rotation"].size() != 9) throw bad("rotation must have 9 entries");
    if (!j.contains("translation_mm") || !j["translation_mm"].is_array()) throw bad("translation_mm must be an array");
    if (j["translation_mm"].size() != 3) throw bad("translation_mm must have 3 entries");
    Mat3 r;
    for (int k = 0; k < 9; ++k) r(k / 3, k % 3) = number(j["rotation"][k], "rotation");
    Vec3 t;
    for (int k = 0; k < 3; ++k) t[k] = number(j["translation_mm"][k], "translation_mm");
    if (!is_rotation(r)) throw bad("rotation is not orthonormal");
    rec.pose = RigidPose(r, t);
    rec.inlier_ratio = j.contains("inlier_ratio") ? number(j["inlier_ratio"], "inlier_ratio") : 0.0;
    rec.mean_residual_mm = j.contains("mean_residual_mm") ? number(j["mean_residual_mm"], "mean_residual_mm") : 0.0;
    return rec;
  } catch (const nlohmann::json::exception& e) {
    throw bad(e.what());
  }
}

std::vector<TrajectoryRecord> read_trajectory(const fs::path& path) {
  const std::string data = read_file(path);
  std::vector<TrajectoryRecord> out;
  std::istringstream in(data);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    try {
      out.push_back(parse_trajectory_line(line, n));
    } catch (const IoError& e) {
      throw IoError(e.code(), path.string() + ": " + e.what());
    }
  }
  return out;
}

void write_trajectory(const std::vector<TrajectoryRecord>& records, const fs::path& path) {
  std::string out;
  for (const auto& r : records) out += format_trajectory_line(r) + "\n";
  write_file(path, out);
}

// ---------------------------------------------------------------------------
// TSDF snapshots

namespace {
fs::path with_suffix(const fs::path& stem, const std::string& suffix) {
  return stem.parent_path() / (stem.filename().string() + suffix);
}
}  // namespace

void write_tsdf_snapshot(const TsdfGrid& grid, const fs::path& stem) {
  const Vec3 spacing = Vec3::Constant(grid.voxel_size());
  VoxelVolume tsdf(grid.dims(), spacing, grid.origin(), ElementKind::Float32);
  VoxelVolume weight(grid.dims(), spacing, grid.origin(), ElementKind::Float32);
  std::copy(grid.tsdf().begin(), grid.tsdf().end(), tsdf.f32().begin());
  std::copy(grid.weight().begin(), grid.weight().end(), weight.f32().begin());
  write_volume(tsdf, with_suffix(stem, "_tsdf.mha"));
  write_volume(weight, with_suffix(stem, "_weight.mha"));
}

TsdfGrid read_tsdf_snapshot(const fs::path& stem, double truncation, float max_weight) {
  const VoxelVolume tsdf = read_volume(with_suffix(stem, "_tsdf.mha"));
  const VoxelVolume weight = read_volume(with_suffix(stem, "_weight.mha"));
  if (tsdf.kind() != ElementKind::Float32 || weight.kind() != ElementKind::Float32 || tsdf.dims() != weight.dims())
    fail(IoErrorCode::MalformedHeader, "malformed header: tsdf snapshot channels disagree");
  TsdfGrid grid(tsdf.dims(), tsdf.spacing().x(), tsdf.origin(), truncation, max_weight);
  std::copy(tsdf.f32().begin(), tsdf.f32().end(), grid.tsdf().begin());
  std::copy(weight.f32().begin(), weight.f32().end(), grid.weight().begin());
  return grid;
}

}  // namespace echofusion
