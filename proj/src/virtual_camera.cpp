#include "echofusion/virtual_camera.hpp"

#include "echofusion/parallel.hpp"
#include "sampling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace echofusion {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Parameter interval of a ray p(t) = a + t b inside the box [0, hi] per axis.
bool clip_to_box(const Vec3& a, const Vec3& b, const Vec3& hi, double& t0, double& t1) {
  for (int i = 0; i < 3; ++i) {
    if (std::abs(b[i]) < 1e-15) {
      if (a[i] < 0.0 || a[i] > hi[i]) return false;
      continue;
    }
    double ta = (0.0 - a[i]) / b[i];
    double tb = (hi[i] - a[i]) / b[i];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t0 <= t1;
}

}  // namespace

std::optional<Eigen::Vector2d> CameraModel::project(const Vec3& p) const {
  if (p.z() <= 0.0) return std::nullopt;
  return Eigen::Vector2d(fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy);
}

CameraModel CameraModel::level(int l) const {
  CameraModel c = *this;
  const double s = std::ldexp(1.0, -l);
  c.width = width >> l;
  c.height = height >> l;
  c.fx = fx * s;
  c.fy = fy * s;
  c.cx = (cx + 0.5) * s - 0.5;
  c.cy = (cy + 0.5) * s - 0.5;
  return c;
}

std::size_t DepthImage::valid_count() const {
  return static_cast<std::size_t>(std::count_if(depth.begin(), depth.end(), [](float d) { return d > 0.0f; }));
}

std::size_t VertexNormalMaps::valid_count() const {
  return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

double focal_length_px(int width, double view_angle_deg) {
  // tan(45 deg + d) = (1 + tan d) / (1 - tan d) is exact at 90 degrees, where fx = width / 2.
  const double t = std::tan((view_angle_deg / 2.0 - 45.0) * kDeg);
  return (width / 2.0) * (1.0 - t) / (1.0 + t);
}

RigidPose probe_camera_pose(double distance) {
  Mat3 r;
  // Columns: camera x -> +x, camera y -> -z, camera z (optical axis) -> +y.
  r << 1, 0, 0,
       0, 0, 1,
       0, -1, 0;
  return RigidPose(r, Vec3(0.0, -distance, 0.0));
}

CameraModel build_camera(const CameraPlacement& placement, int width, int height, double scene_extent_mm) {
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = focal_length_px(width, placement.view_angle_deg);
  cam.cx = (width - 1) / 2.0;
  cam.cy = (height - 1) / 2.0;
  cam.pose = probe_camera_pose(placement.distance);
  cam.near_mm = 1.0;
  cam.far_mm = placement.distance + (scene_extent_mm > 0.0 ? scene_extent_mm : 1000.0);
  return cam;
}

CameraModel build_camera(const CameraPlacement& placement, const VoxelVolume& extent_of, int width, int height) {
  const auto& d = extent_of.dims();
  const Vec3 size(d[0] * extent_of.spacing().x(), d[1] * extent_of.spacing().y(), d[2] * extent_of.spacing().z());
  return build_camera(placement, width, height, size.norm());
}

namespace {

// First crossing of the trilinear occupancy through 0.5 along each pixel ray.
template <typename T>
DepthImage march_occupancy(const T* data, const VoxelVolume& vol, const CameraModel& cam) {
  DepthImage out(cam.width, cam.height);
  const Index3 dims = vol.dims();
  const Vec3 hi(dims[0] - 1, dims[1] - 1, dims[2] - 1);
  const double step = 0.5 * vol.spacing().minCoeff();
  const Vec3 a = vol.world_to_voxel(cam.pose.translation());

  auto occupancy = [&](const Vec3& idx) {
    double v = 0.0;
    return detail::trilinear_at_index(data, dims, idx.x(), idx.y(), idx.z(), v) ? v : 0.0;
  };

  parallel_for(0, cam.height, [&](int v) {
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 dir_cam = cam.ray(u, v);
      const Vec3 b = cam.pose.rotate(dir_cam).cwiseQuotient(vol.spacing());
      const double dt = step / dir_cam.norm();
      double t0 = cam.near_mm, t1 = cam.far_mm;
      if (!clip_to_box(a, b, hi, t0, t1)) continue;
      // Keep the sample lattice anchored at `near` so results do not depend on clipping.
      double t = cam.near_mm + std::ceil((t0 - cam.near_mm) / dt) * dt;
      double prev_t = -1.0, prev_v = 0.0;
      for (; t <= t1; t += dt) {
        const double occ = occupancy(a + t * b);
        if (occ >= 0.5) {
          double hit = t;
          if (prev_t >= 0.0) {
            double ta = prev_t, va = prev_v, tb = t, vb = occ;
            const double tm = 0.5 * (ta + tb);
            const double vm = occupancy(a + tm * b);
            if (vm >= 0.5) {
              tb = tm;
              vb = vm;
            } else {
              ta = tm;
              va = vm;
            }
            hit = ta + (0.5 - va) / (vb - va) * (tb - ta);
          }
          if (hit > cam.near_mm && hit < cam.far_mm) out.at(u, v) = static_cast<float>(hit);
          break;
        }
        prev_t = t;
        prev_v = occ;
      }
    }
  });
  return out;
}

// In-place 1D Gaussian pass along `axis`; samples outside the grid count as 0.
void gaussian_pass(std::vector<float>& data, const Index3& dims, int axis, const std::vector<double>& kernel) {
  const int r = static_cast<int>(kernel.size() / 2);
  const std::size_t stride[3] = {1, std::size_t(dims[0]), std::size_t(dims[0]) * dims[1]};
  const int n = dims[axis];
  const int o1 = axis == 0 ? 1 : 0, o2 = axis == 2 ? 1 : 2;
  std::vector<float> src = data;
  parallel_for(0, dims[o2], [&](int j) {
    std::vector<float> line(n);
    for (int i = 0; i < dims[o1]; ++i) {
      const std::size_t base = std::size_t(i) * stride[o1] + std::size_t(j) * stride[o2];
      for (int k = 0; k < n; ++k) line[k] = src[base + k * stride[axis]];
      for (int k = 0; k < n; ++k) {
        double acc = 0.0;
        for (int m = -r; m <= r; ++m) {
          const int q = k + m;
          if (q >= 0 && q < n) acc += kernel[m + r] * line[q];
        }
        data[base + k * stride[axis]] = static_cast<float>(acc);
      }
    }
  });
}

}  // namespace

DepthImage render_depth(const SegmentationVolume& seg, const CameraModel& cam) {
  return march_occupancy(seg.data().data(), seg.volume(), cam);
}

DepthImage render_depth(const VoxelVolume& occupancy, const CameraModel& cam) {
  if (occupancy.kind() != ElementKind::Float32) throw std::invalid_argument("occupancy volume must be float32");
  return march_occupancy(occupancy.f32().data(), occupancy, cam);
}

VoxelVolume smooth_occupancy(const SegmentationVolume& seg, double sigma_vox) {
  const VoxelVolume& src = seg.volume();
  VoxelVolume out(src.dims(), src.spacing(), src.origin(), ElementKind::Float32);
  std::vector<float> data(seg.data().begin(), seg.data().end());
  if (sigma_vox > 0.0) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma_vox));
    std::vector<double> kernel(2 * r + 1);
    double sum = 0.0;
    for (int m = -r; m <= r; ++m) sum += kernel[m + r] = std::exp(-0.5 * m * m / (sigma_vox * sigma_vox));
    for (double& k : kernel) k /= sum;
    for (int axis = 0; axis < 3; ++axis) gaussian_pass(data, src.dims(), axis, kernel);
  }
  std::copy(data.begin(), data.end(), out.f32().begin());
  return out;
}

GrayImage render_intensity(const VoxelVolume& intensity, const DepthImage& depth, const CameraModel& cam) {
  GrayImage out(depth.width, depth.height, 0.0f);
  for (int v = 0; v < depth.height; ++v)
    for (int u = 0; u < depth.width; ++u) {
      const float d = depth.at(u, v);
      if (d <= 0.0f) continue;
      const Vec3 p = cam.pose.apply(cam.ray(u, v) * double(d));
      if (auto s = intensity.trilinear_sample(p)) out(u, v) = static_cast<float>(*s);
    }
  return out;
}

VertexNormalMaps compute_vertex_normal_maps(const DepthImage& depth, const CameraModel& cam) {
  const int w = depth.width, h = depth.height;
  VertexNormalMaps maps(w, h);
  std::vector<std::uint8_t> has_vertex(std::size_t(w) * h, 0);
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const float d = depth.at(u, v);
      if (d <= 0.0f) continue;
      const std::size_t i = maps.index(u, v);
      maps.vertices[i] = (cam.ray(u, v) * double(d)).cast<float>();
      has_vertex[i] = 1;
    }
  for (int v = 0; v + 1 < h; ++v)
    for (int u = 0; u + 1 < w; ++u) {
      const std::size_t i = maps.index(u, v);
      const std::size_t ir = maps.index(u + 1, v);
      const std::size_t id = maps.index(u, v + 1);
      if (!has_vertex[i] || !has_vertex[ir] || !has_vertex[id]) continue;
      const Vec3 p = maps.vertices[i].cast<double>();
      const Vec3 du = maps.vertices[ir].cast<double>() - p;
      const Vec3 dv = maps.vertices[id].cast<double>() - p;
      Vec3 n = du.cross(dv);
      const double len = n.norm();
      if (!(len > 0.0)) continue;
      n /= len;
      if (n.dot(p) > 0.0) n = -n;  // face the camera
      maps.normals[i] = n.cast<float>();
      maps.valid[i] = 1;
    }
  return maps;
}

DepthImage bilateral_filter(const DepthImage& depth, double sigma_space_px, double sigma_depth_mm) {
  const int w = depth.width, h = depth.height;
  DepthImage out(w, h);
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma_space_px)));
  std::vector<double> spatial(std::size_t(2 * radius + 1) * (2 * radius + 1));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      spatial[std::size_t(dy + radius) * (2 * radius + 1) + (dx + radius)] =
          std::exp(-0.5 * (dx * dx + dy * dy) / (sigma_space_px * sigma_space_px));
  const double inv_sd2 = 1.0 / (sigma_depth_mm * sigma_depth_mm);
  parallel_for(0, h, [&](int v) {
    for (int u = 0; u < w; ++u) {
      const double d0 = depth.at(u, v);
      if (d0 <= 0.0) continue;
      double acc = 0.0, wsum = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int vv = v + dy;
        if (vv < 0 || vv >= h) continue;
        for (int dx = -radius; dx <= radius; ++dx) {
          const int uu = u + dx;
          if (uu < 0 || uu >= w) continue;
          const double d = depth.at(uu, vv);
          if (d <= 0.0) continue;
          const double diff = d - d0;
          const double wt = spatial[std::size_t(dy + radius) * (2 * radius + 1) + (dx + radius)] *
                            std::exp(-0.5 * diff * diff * inv_sd2);
          acc += wt * d;
          wsum += wt;
        }
      }
      out.at(u, v) = static_cast<float>(acc / wsum);
    }
  });
  return out;
}

DepthImage downsample_depth(const DepthImage& depth, double max_jump_mm) {
  DepthImage out(depth.width / 2, depth.height / 2);
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) {
      float nearest = std::numeric_limits<float>::max();
      for (int k = 0; k < 4; ++k) {
        const float d = depth.at(2 * u + (k & 1), 2 * v + (k >> 1));
        if (d > 0.0f) nearest = std::min(nearest, d);
      }
      if (nearest == std::numeric_limits<float>::max()) continue;
      double acc = 0.0;
      int n = 0;
      for (int k = 0; k < 4; ++k) {
        const float d = depth.at(2 * u + (k & 1), 2 * v + (k >> 1));
        if (d > 0.0f && d - nearest <= max_jump_mm) {
          acc += d;
          ++n;
        }
      }
      out.at(u, v) = static_cast<float>(acc / n);
    }
  return out;
}

VertexNormalMaps downsample_maps(const VertexNormalMaps& maps, double max_jump_mm) {
  VertexNormalMaps out(maps.width / 2, maps.height / 2);
  for (int v = 0; v < out.height; ++v)
    for (int u = 0; u < out.width; ++u) {
      float nearest = std::numeric_limits<float>::max();
      for (int k = 0; k < 4; ++k) {
        const std::size_t i = maps.index(2 * u + (k & 1), 2 * v + (k >> 1));
        if (maps.valid[i]) nearest = std::min(nearest, maps.vertices[i].z());
      }
      if (nearest == std::numeric_limits<float>::max()) continue;
      Vec3 vs = Vec3::Zero(), ns = Vec3::Zero();
      int n = 0;
      for (int k = 0; k < 4; ++k) {
        const std::size_t i = maps.index(2 * u + (k & 1), 2 * v + (k >> 1));
        if (maps.valid[i] && maps.vertices[i].z() - nearest <= max_jump_mm) {
          vs += maps.vertices[i].cast<double>();
          ns += maps.normals[i].cast<double>();
          ++n;
        }
      }
      const double len = ns.norm();
      if (len < 1e-9) continue;
      const std::size_t o = out.index(u, v);
      out.vertices[o] = (vs / n).cast<float>();
      out.normals[o] = (ns / len).cast<float>();
      out.valid[o] = 1;
    }
  return out;
}

}  // namespace echofusion
