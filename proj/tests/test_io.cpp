#include "echofusion/io.hpp"
#include "echofusion/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <string>

using namespace echofusion;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("echofusion_io_" + std::to_string(Rng(std::random_device{}()).next_u64()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& name) const { return path / name; }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

template <typename Fn>
IoErrorCode error_code_of(Fn fn) {
  try {
    fn();
  } catch (const IoError& e) {
    return e.code();
  }
  FAIL("expected an IoError");
  return IoErrorCode::WriteFailed;
}

VoxelVolume random_volume(Rng& rng, ElementKind kind) {
  const Index3 dims{1 + static_cast<int>(rng.uniform(0, 6)), 1 + static_cast<int>(rng.uniform(0, 6)),
                    1 + static_cast<int>(rng.uniform(0, 6))};
  VoxelVolume v(dims, Vec3(rng.uniform(0.1, 3), rng.uniform(0.1, 3), rng.uniform(0.1, 3)),
                Vec3(rng.uniform(-100, 100), rng.uniform(-100, 100), rng.uniform(-100, 100)), kind);
  for (std::size_t i = 0; i < v.size(); ++i) v.set_value(i, rng.uniform(-40000, 40000));
  return v;
}

}  // namespace

TEST_CASE("volume round trips") {
  TempDir dir;
  SUBCASE("2x2x2 uint8") {
    VoxelVolume v({2, 2, 2}, Vec3(0.5, 1, 2), Vec3(-1, 0, 3.25), ElementKind::UInt8);
    for (std::size_t i = 0; i < v.size(); ++i) v.set_value(i, 30.0 * i);
    write_volume(v, dir / "a.mha");
    const VoxelVolume back = read_volume(dir / "a.mha");
    CHECK(back == v);
  }
  SUBCASE("random volumes in both layouts") {
    Rng rng(12);
    for (int k = 0; k < 12; ++k) {
      const ElementKind kind = static_cast<ElementKind>(k % 3);
      const VoxelVolume v = random_volume(rng, kind);
      const fs::path p = dir / (k % 2 ? "v.mhd" : "v.mha");
      write_volume(v, p);
      CHECK(read_volume(p) == v);
    }
    CHECK(fs::exists(dir / "v.raw"));
  }
  SUBCASE("writers are deterministic") {
    Rng rng(1);
    const VoxelVolume v = random_volume(rng, ElementKind::Float32);
    write_volume(v, dir / "x.mha");
    write_volume(v, dir / "y.mha");
    CHECK(slurp(dir / "x.mha") == slurp(dir / "y.mha"));
  }
}

TEST_CASE("volume read errors") {
  TempDir dir;
  VoxelVolume v({2, 2, 2}, Vec3::Ones(), Vec3::Zero(), ElementKind::UInt8);
  write_volume(v, dir / "ok.mha");
  const std::string good = slurp(dir / "ok.mha");

  SUBCASE("short payload") {
    spit(dir / "short.mha", good.substr(0, good.size() - 1));
    CHECK(error_code_of([&] { read_volume(dir / "short.mha"); }) == IoErrorCode::PayloadLengthMismatch);
    CHECK_THROWS_WITH(read_volume(dir / "short.mha"), doctest::Contains("payload length mismatch"));
  }
  SUBCASE("unsupported element type") {
    std::string bad = good;
    bad.replace(bad.find("MET_UCHAR"), 9, "MET_DOUBLE");
    spit(dir / "double.mha", bad);
    CHECK(error_code_of([&] { read_volume(dir / "double.mha"); }) == IoErrorCode::UnsupportedElementType);
    CHECK_THROWS_WITH(read_volume(dir / "double.mha"), doctest::Contains("unsupported element type"));
  }
  SUBCASE("missing required key") {
    std::string bad = good;
    const auto at = bad.find("DimSize");
    bad.erase(at, bad.find('\n', at) - at + 1);
    spit(dir / "nodims.mha", bad);
    CHECK(error_code_of([&] { read_volume(dir / "nodims.mha"); }) == IoErrorCode::MalformedHeader);
    CHECK_THROWS_WITH(read_volume(dir / "nodims.mha"), doctest::Contains("missing DimSize"));
  }
  SUBCASE("optional spacing defaults to 1") {
    std::string lax = good;
    const auto at = lax.find("ElementSpacing");
    lax.erase(at, lax.find('\n', at) - at + 1);
    spit(dir / "nospacing.mha", lax);
    CHECK(read_volume(dir / "nospacing.mha").spacing() == Vec3::Ones());
  }
  SUBCASE("missing file") {
    CHECK(error_code_of([&] { read_volume(dir / "absent.mha"); }) == IoErrorCode::FileNotFound);
  }
}

TEST_CASE("depth PGM") {
  TempDir dir;
  DepthImage d(3, 2);
  d.at(0, 0) = 100.0f;
  d.at(1, 0) = 0.0f;
  d.at(2, 1) = 12.34375f;
  write_depth_pgm(d, dir / "d.pgm");
  const std::string bytes = slurp(dir / "d.pgm");
  // 100 mm at 32 counts per mm is 3200 = 0x0C80, stored big-endian.
  const std::size_t payload = bytes.size() - 2 * 6;
  CHECK(static_cast<unsigned char>(bytes[payload]) == 0x0C);
  CHECK(static_cast<unsigned char>(bytes[payload + 1]) == 0x80);
  const DepthImage back = read_depth_pgm(dir / "d.pgm");
  CHECK(back == d);

  spit(dir / "bad.pgm", "P2\n3 2\n65535\n");
  CHECK_THROWS_WITH(read_depth_pgm(dir / "bad.pgm"), doctest::Contains("offset"));
}

TEST_CASE("gray PGM is min-max normalized") {
  TempDir dir;
  GrayImage g(4, 1);
  g.data = {10.0f, 20.0f, 30.0f, 10.0f};
  write_gray_pgm(g, dir / "g.pgm");
  const auto back = read_gray_pgm(dir / "g.pgm");
  CHECK(back.data == std::vector<std::uint8_t>{0, 128, 255, 0});
  write_gray_pgm(GrayImage(2, 2, 7.0f), dir / "c.pgm");
  CHECK(read_gray_pgm(dir / "c.pgm").data == std::vector<std::uint8_t>(4, 0));
}

TEST_CASE("PLY") {
  TempDir dir;
  TriangleMesh m;
  m.vertices = {Vec3f(0, 0, 0), Vec3f(1.5f, 0, 0), Vec3f(0, 2.25f, -1e-7f)};
  m.normals = {Vec3f(0, 0, 1), Vec3f(0, 0, 1), Vec3f(0.6f, 0, 0.8f)};
  m.triangles = {{0, 1, 2}};
  write_ply(m, dir / "m.ply");
  CHECK(read_ply(dir / "m.ply") == m);
  CHECK(slurp(dir / "m.ply").find("comment echofusion " + std::string(kVersion)) != std::string::npos);

  std::string text = slurp(dir / "m.ply");
  text.replace(text.rfind("3 0 1 2"), 7, "3 0 1 9");
  spit(dir / "bad.ply", text);
  CHECK_THROWS_WITH(read_ply(dir / "bad.ply"), doctest::Contains("line"));
}

TEST_CASE("trajectory JSONL") {
  TempDir dir;
  const RigidPose p = RigidPose::from_axis_angle(Vec3(1, 2, 3), 0.7, Vec3(1.0 / 3.0, -2.5, 1e-9));
  const std::vector<TrajectoryRecord> recs{{0, TrackStatus::Tracked, RigidPose::identity(), 1.0, 0.0},
                                           {1, TrackStatus::Lost, p, 0.125, 3.75}};
  write_trajectory(recs, dir / "t.jsonl");
  CHECK(read_trajectory(dir / "t.jsonl") == recs);

  const std::string line = format_trajectory_line(recs[1]);
  CHECK(line.rfind("{\"frame\":1,\"status\":\"lost\",\"rotation\":[", 0) == 0);
  CHECK(parse_trajectory_line(line) == recs[1]);

  CHECK_THROWS_WITH(parse_trajectory_line(R"({"frame":0,"status":"tracked","rotation":[1,0,0,0,1,0,0,0],"translation_mm":[0,0,0],"inlier_ratio":1,"mean_residual_mm":0})", 4),
                    doctest::Contains("rotation must have 9 entries"));
  CHECK_THROWS_WITH(parse_trajectory_line("{not json", 7), doctest::Contains("line 7"));
}

TEST_CASE("tsdf snapshot") {
  TempDir dir;
  TsdfGrid g({4, 5, 6}, 0.75, Vec3(-1, 2, 3), 3.0, 16.0f);
  Rng rng(6);
  for (std::size_t i = 0; i < g.size(); ++i) {
    g.tsdf()[i] = static_cast<float>(rng.uniform(-1, 1));
    g.weight()[i] = static_cast<float>(rng.uniform(0, 16));
  }
  write_tsdf_snapshot(g, dir / "model");
  CHECK(fs::exists(dir / "model_tsdf.mha"));
  CHECK(fs::exists(dir / "model_weight.mha"));
  CHECK(read_tsdf_snapshot(dir / "model", 3.0, 16.0f) == g);
}

TEST_CASE("number formatting round trips") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double d = rng.normal() * std::pow(10.0, rng.uniform(-12, 12));
    CHECK(std::stod(format_double(d)) == d);
    const float f = static_cast<float>(d);
    CHECK(std::stof(format_float(f)) == f);
  }
}
