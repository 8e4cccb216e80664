#include "echofusion/tsdf_fusion.hpp"

#include "echofusion/parallel.hpp"
#include "marching_cubes_tables.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <unordered_map>

namespace echofusion {

TsdfGrid::TsdfGrid(Index3 dims, double voxel_size, Vec3 origin, double truncation, float max_weight)
    : dims_(dims), voxel_size_(voxel_size), origin_(origin), truncation_(truncation), max_weight_(max_weight) {
  for (int d : dims_)
    if (d < 2) throw std::invalid_argument("tsdf grid needs at least 2 voxels per axis");
  if (!(voxel_size_ > 0.0) || !(truncation_ > 0.0)) throw std::invalid_argument("tsdf voxel size and truncation must be positive");
  const std::size_t n = static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2];
  tsdf_.assign(n, 1.0f);
  weight_.assign(n, 0.0f);
}

bool TsdfGrid::sample(const Vec3& world, double& out) const {
  const Vec3 f = (world - origin_) / voxel_size_;
  const double flx = std::floor(f.x()), fly = std::floor(f.y()), flz = std::floor(f.z());
  const int x0 = static_cast<int>(flx), y0 = static_cast<int>(fly), z0 = static_cast<int>(flz);
  if (x0 < 0 || y0 < 0 || z0 < 0 || x0 + 1 >= dims_[0] || y0 + 1 >= dims_[1] || z0 + 1 >= dims_[2]) return false;
  const double ax = f.x() - flx, ay = f.y() - fly, az = f.z() - flz;
  const std::size_t sy = dims_[0], sz = static_cast<std::size_t>(dims_[0]) * dims_[1];
  const std::size_t base = linear_index(x0, y0, z0);
  const std::size_t idx[8] = {base, base + 1, base + sy, base + sy + 1,
                              base + sz, base + sz + 1, base + sz + sy, base + sz + sy + 1};
  for (std::size_t i : idx)
    if (weight_[i] <= 0.0f) return false;
  const double c00 = tsdf_[idx[0]] + ax * (tsdf_[idx[1]] - tsdf_[idx[0]]);
  const double c10 = tsdf_[idx[2]] + ax * (tsdf_[idx[3]] - tsdf_[idx[2]]);
  const double c01 = tsdf_[idx[4]] + ax * (tsdf_[idx[5]] - tsdf_[idx[4]]);
  const double c11 = tsdf_[idx[6]] + ax * (tsdf_[idx[7]] - tsdf_[idx[6]]);
  const double c0 = c00 + ay * (c10 - c00);
  const double c1 = c01 + ay * (c11 - c01);
  out = c0 + az * (c1 - c0);
  return true;
}

std::optional<Vec3> TsdfGrid::gradient(const Vec3& world) const {
  Vec3 g;
  for (int k = 0; k < 3; ++k) {
    Vec3 h = Vec3::Zero();
    h[k] = voxel_size_;
    double fp = 0.0, fm = 0.0;
    if (!sample(world + h, fp) || !sample(world - h, fm)) return std::nullopt;
    g[k] = (fp - fm) / (2.0 * voxel_size_);
  }
  return g;
}

TsdfGrid make_fitted_grid(const SegmentationVolume& seg, const RigidPose& to_global, const TsdfConfig& cfg) {
  const VoxelVolume& vol = seg.volume();
  const auto& d = vol.dims();
  Index3 lo{d[0], d[1], d[2]}, hi{-1, -1, -1};
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x)
        if (seg.foreground(x, y, z)) {
          lo = {std::min(lo[0], x), std::min(lo[1], y), std::min(lo[2], z)};
          hi = {std::max(hi[0], x), std::max(hi[1], y), std::max(hi[2], z)};
        }
  if (hi[0] < 0) throw std::invalid_argument("cannot fit a tsdf grid to an empty segmentation");
  Vec3 bmin = Vec3::Constant(std::numeric_limits<double>::max());
  Vec3 bmax = Vec3::Constant(std::numeric_limits<double>::lowest());
  for (int c = 0; c < 8; ++c) {
    const Vec3 idx((c & 1) ? hi[0] : lo[0], (c & 2) ? hi[1] : lo[1], (c & 4) ? hi[2] : lo[2]);
    const Vec3 p = to_global.apply(vol.voxel_to_world(idx));
    bmin = bmin.cwiseMin(p);
    bmax = bmax.cwiseMax(p);
  }
  const Vec3 center = 0.5 * (bmin + bmax);
  const int max_dim = std::max({cfg.dims[0], cfg.dims[1], cfg.dims[2]});
  const double voxel = cfg.voxel_size > 0.0 ? cfg.voxel_size
                                            : (bmax - bmin).maxCoeff() * cfg.fit_scale / (max_dim - 1);
  const Vec3 half = 0.5 * voxel * Vec3(cfg.dims[0] - 1, cfg.dims[1] - 1, cfg.dims[2] - 1);
  return TsdfGrid(cfg.dims, voxel, center - half, cfg.truncation_voxels * voxel, cfg.max_weight);
}

void integrate(TsdfGrid& grid, const DepthImage& depth, const CameraModel& cam) {
  const RigidPose world_to_cam = cam.pose.inverse();
  const Mat3& r = world_to_cam.rotation();
  const Index3 dims = grid.dims();
  const double trunc = grid.truncation();
  const float max_w = grid.max_weight();
  auto tsdf = grid.tsdf();
  auto weight = grid.weight();
  const Vec3 step_x = r.col(0) * grid.voxel_size();

  parallel_for(0, dims[2], [&](int z) {
    for (int y = 0; y < dims[1]; ++y) {
      Vec3 p = world_to_cam.apply(grid.voxel_center(0, y, z));
      for (int x = 0; x < dims[0]; ++x, p += step_x) {
        if (p.z() <= 0.0) continue;
        const double inv_z = 1.0 / p.z();
        const long u = std::lround(cam.fx * p.x() * inv_z + cam.cx);
        const long v = std::lround(cam.fy * p.y() * inv_z + cam.cy);
        if (u < 0 || v < 0 || u >= depth.width || v >= depth.height) continue;
        const float d = depth.at(static_cast<int>(u), static_cast<int>(v));
        if (d <= 0.0f) continue;
        const double sdf = d - p.z();
        if (sdf < -trunc) continue;
        const float value = static_cast<float>(std::clamp(sdf / trunc, -1.0, 1.0));
        const std::size_t i = grid.linear_index(x, y, z);
        const float w = weight[i];
        tsdf[i] = static_cast<float>((double(tsdf[i]) * w + value) / (w + 1.0));
        weight[i] = std::min(w + 1.0f, max_w);
      }
    }
  });
}

VertexNormalMaps raycast(const TsdfGrid& grid, const CameraModel& cam) {
  VertexNormalMaps maps(cam.width, cam.height);
  const Mat3& r = cam.pose.rotation();
  const Vec3 c = cam.pose.translation();
  const double vs = grid.voxel_size();
  const Vec3 lo = grid.origin();
  const Vec3 hi = grid.origin() + vs * Vec3(grid.dims()[0] - 1, grid.dims()[1] - 1, grid.dims()[2] - 1);
  const double trunc = grid.truncation();

  parallel_for(0, cam.height, [&](int v) {
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 ray = cam.ray(u, v);
      const Vec3 dir = r * ray;
      const double ray_len = ray.norm();
      double t0 = cam.near_mm, t1 = cam.far_mm;
      bool hit_box = true;
      for (int k = 0; k < 3 && hit_box; ++k) {
        if (std::abs(dir[k]) < 1e-15) {
          hit_box = c[k] >= lo[k] && c[k] <= hi[k];
          continue;
        }
        double ta = (lo[k] - c[k]) / dir[k], tb = (hi[k] - c[k]) / dir[k];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
      }
      if (!hit_box || t0 > t1) continue;

      double t = t0, prev_t = 0.0, prev_f = 0.0;
      bool prev_valid = false;
      while (t <= t1) {
        double f = 0.0;
        const bool ok = grid.sample(c + t * dir, f);
        if (ok && prev_valid) {
          if (prev_f > 0.0 && f <= 0.0) {
            const double ts = prev_t + (t - prev_t) * prev_f / (prev_f - f);
            const Vec3 pw = c + ts * dir;
            if (auto g = grid.gradient(pw); g && g->norm() > 1e-12) {
              const std::size_t i = maps.index(u, v);
              maps.vertices[i] = (ts * ray).cast<float>();
              maps.normals[i] = (r.transpose() * g->normalized()).cast<float>();
              maps.valid[i] = 1;
            }
            break;
          }
          if (prev_f < 0.0 && f > 0.0) break;  // back face
        }
        prev_valid = ok;
        prev_f = f;
        prev_t = t;
        const double step_mm = (ok && f > 0.0) ? std::max(vs, 0.8 * f * trunc) : vs;
        t += step_mm / ray_len;
      }
    }
  });
  return maps;
}

TriangleMesh extract_mesh(const TsdfGrid& grid) {
  static constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                                        {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
  static constexpr int kEdge[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                       {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};
  TriangleMesh mesh;
  const Index3 d = grid.dims();
  const auto tsdf = grid.tsdf();
  const auto weight = grid.weight();
  std::unordered_map<std::uint64_t, std::uint32_t> edge_vertex;

  auto vertex_on_edge = [&](int x, int y, int z, int e) -> std::uint32_t {
    const int* ca = kCorner[kEdge[e][0]];
    const int* cb = kCorner[kEdge[e][1]];
    const int ax = x + std::min(ca[0], cb[0]), ay = y + std::min(ca[1], cb[1]), az = z + std::min(ca[2], cb[2]);
    const int axis = ca[0] != cb[0] ? 0 : (ca[1] != cb[1] ? 1 : 2);
    const std::uint64_t key = static_cast<std::uint64_t>(grid.linear_index(ax, ay, az)) * 3 + axis;
    if (auto it = edge_vertex.find(key); it != edge_vertex.end()) return it->second;

    int bx = ax, by = ay, bz = az;
    (axis == 0 ? bx : axis == 1 ? by : bz) += 1;
    const double fa = tsdf[grid.linear_index(ax, ay, az)];
    const double fb = tsdf[grid.linear_index(bx, by, bz)];
    const double s = fa / (fa - fb);
    const Vec3 pa = grid.voxel_center(ax, ay, az);
    const Vec3 p = pa + s * (grid.voxel_center(bx, by, bz) - pa);
    Vec3 n;
    if (auto g = grid.gradient(p); g && g->norm() > 1e-12) {
      n = g->normalized();
    } else {
      n = Vec3::Zero();
      n[axis] = fb > fa ? 1.0 : -1.0;
    }
    const auto idx = static_cast<std::uint32_t>(mesh.vertices.size());
    mesh.vertices.push_back(p.cast<float>());
    mesh.normals.push_back(n.cast<float>());
    edge_vertex.emplace(key, idx);
    return idx;
  };

  for (int z = 0; z + 1 < d[2]; ++z)
    for (int y = 0; y + 1 < d[1]; ++y)
      for (int x = 0; x + 1 < d[0]; ++x) {
        int cube = 0;
        bool observed = true;
        for (int k = 0; k < 8 && observed; ++k) {
          const std::size_t i = grid.linear_index(x + kCorner[k][0], y + kCorner[k][1], z + kCorner[k][2]);
          observed = weight[i] > 0.0f;
          if (tsdf[i] < 0.0f) cube |= 1 << k;
        }
        if (!observed || cube == 0 || cube == 255) continue;
        const auto& tri = detail::kTriTable[cube];
        for (int k = 0; tri[k] != -1; k += 3) {
          const std::uint32_t a = vertex_on_edge(x, y, z, tri[k]);
          const std::uint32_t b = vertex_on_edge(x, y, z, tri[k + 1]);
          const std::uint32_t c = vertex_on_edge(x, y, z, tri[k + 2]);
          if (a == b || b == c || a == c) continue;
          // Table winding is clockwise seen from outside; store counter-clockwise.
          mesh.triangles.push_back({a, c, b});
        }
      }
  return mesh;
}

}  // namespace echofusion
