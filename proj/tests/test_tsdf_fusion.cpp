#include "echofusion/rng.hpp"
#include "echofusion/tsdf_fusion.hpp"
#include "echofusion/virtual_camera.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

using namespace echofusion;

namespace {

constexpr double kPi = std::numbers::pi;

// Camera at `eye` whose optical axis points at `target`.
RigidPose look_at(const Vec3& eye, const Vec3& target) {
  const Vec3 z = (target - eye).normalized();
  const Vec3 helper = std::abs(z.y()) < 0.9 ? Vec3::UnitY() : Vec3::UnitX();
  const Vec3 x = helper.cross(z).normalized();
  const Vec3 y = z.cross(x);
  Mat3 r;
  r.col(0) = x;
  r.col(1) = y;
  r.col(2) = z;
  return RigidPose(r, eye);
}

CameraModel camera_at(const RigidPose& pose, int size = 96, double angle = 60.0) {
  return build_camera(CameraPlacement{0.0, angle}, size, size, 500.0).with_pose(pose);
}

DepthImage plane_depth(int size, float z) {
  DepthImage d(size, size);
  std::fill(d.depth.begin(), d.depth.end(), z);
  return d;
}

DepthImage sphere_depth(const CameraModel& cam, const Vec3& center, double radius) {
  DepthImage d(cam.width, cam.height);
  const Vec3 c = cam.pose.inverse().apply(center);
  for (int v = 0; v < cam.height; ++v)
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 r = cam.ray(u, v);
      const double a = r.squaredNorm(), b = -2.0 * r.dot(c), k = c.squaredNorm() - radius * radius;
      const double disc = b * b - 4.0 * a * k;
      if (disc >= 0.0) d.at(u, v) = static_cast<float>((-b - std::sqrt(disc)) / (2.0 * a));
    }
  return d;
}

// Grid centred on the world origin.
TsdfGrid centred_grid(int n, double voxel, float max_weight = 64.0f) {
  return TsdfGrid({n, n, n}, voxel, Vec3::Constant(-0.5 * voxel * (n - 1)), 4.0 * voxel, max_weight);
}

// Loads a signed distance function directly as a fully observed tsdf.
template <typename Fn>
TsdfGrid grid_from_sdf(int n, double voxel, Fn sdf) {
  TsdfGrid g = centred_grid(n, voxel);
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const std::size_t i = g.linear_index(x, y, z);
        g.tsdf()[i] = static_cast<float>(std::clamp(sdf(g.voxel_center(x, y, z)) / g.truncation(), -1.0, 1.0));
        g.weight()[i] = 1.0f;
      }
  return g;
}

double mesh_area(const TriangleMesh& m) {
  double area = 0.0;
  for (const auto& t : m.triangles) {
    const Vec3 a = m.vertices[t[0]].cast<double>(), b = m.vertices[t[1]].cast<double>(),
               c = m.vertices[t[2]].cast<double>();
    area += 0.5 * (b - a).cross(c - a).norm();
  }
  return area;
}

}  // namespace

TEST_CASE("plane integration") {
  // Camera at z = -30 looking along +z at the plane z = 10.
  const CameraModel cam = camera_at(look_at(Vec3(0, 0, -30), Vec3::Zero()));
  TsdfGrid g = centred_grid(48, 1.0);
  integrate(g, plane_depth(cam.width, 40.0f), cam);

  SUBCASE("zero crossing along the central ray") {
    double prev = 0.0;
    bool have_prev = false, crossed = false;
    for (double t = 20.0; t <= 60.0; t += 0.05) {
      double f;
      if (!g.sample(cam.pose.apply(Vec3(0, 0, t)), f)) continue;
      if (have_prev && prev > 0.0 && f <= 0.0) {
        CHECK(std::abs(t - 40.0) <= g.voxel_size());
        crossed = true;
        break;
      }
      prev = f;
      have_prev = true;
    }
    CHECK(crossed);
  }
  SUBCASE("raycast reproduces the input depth") {
    const VertexNormalMaps m = raycast(g, cam);
    std::size_t valid = 0, close = 0;
    for (std::size_t i = 0; i < m.valid.size(); ++i) {
      if (!m.valid[i]) continue;
      ++valid;
      close += std::abs(m.vertices[i].z() - 40.0f) <= g.voxel_size();
    }
    // Pixels whose rays leave the grid before the plane cannot hit.
    REQUIRE(valid > 0);
    CHECK(static_cast<double>(close) >= 0.95 * static_cast<double>(valid));
  }
}

TEST_CASE("invalid depth leaves the grid untouched") {
  const CameraModel cam = camera_at(look_at(Vec3(0, 0, -30), Vec3::Zero()));
  TsdfGrid g = centred_grid(24, 1.0);
  integrate(g, plane_depth(cam.width, 35.0f), cam);
  const TsdfGrid before = g;
  integrate(g, DepthImage(cam.width, cam.height), cam);
  CHECK(g == before);
}

TEST_CASE("integrating the same frame twice") {
  const CameraModel cam = camera_at(look_at(Vec3(0, 0, -30), Vec3::Zero()));
  TsdfGrid once = centred_grid(24, 1.0, 1.0f), twice = centred_grid(24, 1.0, 64.0f);
  const DepthImage d = sphere_depth(cam, Vec3::Zero(), 8.0);
  integrate(once, d, cam);
  integrate(twice, d, cam);
  TsdfGrid single = twice;
  integrate(twice, d, cam);
  integrate(once, d, cam);
  for (std::size_t i = 0; i < twice.size(); ++i) {
    CHECK(twice.tsdf()[i] == single.tsdf()[i]);
    CHECK(twice.weight()[i] == 2.0f * single.weight()[i]);
    // Weights saturate at the cap.
    CHECK(once.weight()[i] <= 1.0f);
  }
}

TEST_CASE("integration order does not matter below the weight cap") {
  const Vec3 c = Vec3::Zero();
  const CameraModel a = camera_at(look_at(Vec3(0, 0, -35), c)), b = camera_at(look_at(Vec3(30, 5, -20), c));
  TsdfGrid ab = centred_grid(32, 1.0), ba = ab;
  const DepthImage da = sphere_depth(a, c, 10.0), db = sphere_depth(b, c, 10.0);
  integrate(ab, da, a);
  integrate(ab, db, b);
  integrate(ba, db, b);
  integrate(ba, da, a);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    CHECK(ab.weight()[i] == ba.weight()[i]);
    CHECK(std::abs(ab.tsdf()[i] - ba.tsdf()[i]) <= 1e-6);
  }
}

TEST_CASE("tsdf stays clamped under random integration") {
  Rng rng(21);
  TsdfGrid g = centred_grid(24, 1.0, 8.0f);
  for (int k = 0; k < 12; ++k) {
    const Vec3 eye(rng.uniform(-30, 30), rng.uniform(-30, 30), rng.uniform(-40, -20));
    const CameraModel cam = camera_at(look_at(eye, Vec3::Zero()), 32);
    DepthImage d(32, 32);
    for (auto& z : d.depth) z = rng.bernoulli(0.8) ? static_cast<float>(rng.uniform(5, 80)) : 0.0f;
    integrate(g, d, cam);
  }
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(g.tsdf()[i] >= -1.0f);
    CHECK(g.tsdf()[i] <= 1.0f);
    CHECK(g.weight()[i] <= 8.0f);
  }
}

TEST_CASE("zero-weight grid") {
  const TsdfGrid g = centred_grid(16, 1.0);
  const CameraModel cam = camera_at(look_at(Vec3(0, 0, -30), Vec3::Zero()), 32);
  CHECK(raycast(g, cam).valid_count() == 0);
  CHECK(extract_mesh(g).empty());
}

TEST_CASE("sphere fused from 20 views") {
  const double radius = 15.0;
  TsdfGrid g = centred_grid(96, 0.5);
  std::vector<CameraModel> cams;
  for (int k = 0; k < 20; ++k) {
    // Fibonacci directions cover the sphere evenly.
    const double zc = 1.0 - 2.0 * (k + 0.5) / 20.0, r = std::sqrt(1.0 - zc * zc), phi = k * kPi * (3.0 - std::sqrt(5.0));
    cams.push_back(camera_at(look_at(60.0 * Vec3(r * std::cos(phi), r * std::sin(phi), zc), Vec3::Zero()), 128, 45.0));
    integrate(g, sphere_depth(cams.back(), Vec3::Zero(), radius), cams.back());
  }
  double sq = 0.0;
  std::size_t n = 0;
  for (int k : {0, 7, 13}) {
    const VertexNormalMaps m = raycast(g, cams[k]);
    for (std::size_t i = 0; i < m.valid.size(); ++i) {
      if (!m.valid[i]) continue;
      const double e = cams[k].pose.apply(m.vertices[i].cast<double>()).norm() - radius;
      sq += e * e;
      ++n;
    }
  }
  REQUIRE(n > 1000);
  CHECK(std::sqrt(sq / n) < g.voxel_size());
}

TEST_CASE("marching cubes on analytic fields") {
  SUBCASE("sphere vertices lie on the sphere") {
    const double radius = 9.3;
    const TsdfGrid g = grid_from_sdf(32, 1.0, [&](const Vec3& p) { return p.norm() - radius; });
    const TriangleMesh m = extract_mesh(g);
    REQUIRE(!m.empty());
    double sq = 0.0;
    for (const auto& v : m.vertices) sq += std::pow(v.cast<double>().norm() - radius, 2);
    CHECK(std::sqrt(sq / m.vertices.size()) < 0.2 * g.voxel_size());

    // Counter-clockwise winding seen from outside: face normals point away from the centre.
    std::size_t outward = 0;
    for (const auto& t : m.triangles) {
      const Vec3 a = m.vertices[t[0]].cast<double>(), b = m.vertices[t[1]].cast<double>(),
                 c = m.vertices[t[2]].cast<double>();
      outward += (b - a).cross(c - a).dot(a + b + c) > 0.0;
    }
    CHECK(outward == m.triangles.size());
    for (std::size_t i = 0; i < m.vertices.size(); ++i)
      CHECK(m.normals[i].dot(m.vertices[i].normalized()) > 0.9f);
  }
  SUBCASE("box area") {
    const Vec3 half(8.3, 5.6, 6.7);
    const TsdfGrid g = grid_from_sdf(32, 1.0, [&](const Vec3& p) {
      const Vec3 q = p.cwiseAbs() - half;
      return q.cwiseMax(0.0).norm() + std::min(q.maxCoeff(), 0.0);
    });
    const double analytic = 8.0 * (half.x() * half.y() + half.y() * half.z() + half.x() * half.z());
    CHECK(mesh_area(extract_mesh(g)) == doctest::Approx(analytic).epsilon(0.05));
  }
  SUBCASE("closed surface shares every edge between two triangles") {
    const TsdfGrid g = grid_from_sdf(24, 1.0, [](const Vec3& p) { return p.norm() - 6.2; });
    const TriangleMesh m = extract_mesh(g);
    std::map<std::pair<std::uint32_t, std::uint32_t>, int> directed;
    for (const auto& t : m.triangles)
      for (int k = 0; k < 3; ++k) ++directed[{t[k], t[(k + 1) % 3]}];
    for (const auto& [edge, count] : directed) {
      CHECK(count == 1);
      CHECK(directed.count({edge.second, edge.first}) == 1);
    }
  }
}

TEST_CASE("make_fitted_grid covers the foreground") {
  SegmentationVolume seg({20, 20, 20}, Vec3::Constant(2.0), Vec3::Zero());
  for (int z = 5; z < 15; ++z)
    for (int y = 4; y < 10; ++y)
      for (int x = 6; x < 12; ++x) seg.set(x, y, z, true);
  TsdfConfig cfg;
  cfg.dims = {32, 32, 32};
  const TsdfGrid g = make_fitted_grid(seg, RigidPose::identity(), cfg);
  const double extent = g.voxel_size() * 31;
  CHECK(extent == doctest::Approx(18.0 * cfg.fit_scale));
  const Vec3 center = g.origin() + Vec3::Constant(0.5 * extent);
  CHECK(center.isApprox(Vec3(17, 13, 19)));
  CHECK(g.truncation() == doctest::Approx(cfg.truncation_voxels * g.voxel_size()));
  CHECK_THROWS_AS(make_fitted_grid(SegmentationVolume({4, 4, 4}, Vec3::Ones(), Vec3::Zero()), RigidPose::identity(), cfg),
                  std::invalid_argument);
}
