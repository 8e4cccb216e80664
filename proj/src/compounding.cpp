#include "echofusion/compounding.hpp"

#include "echofusion/io.hpp"
#include "echofusion/parallel.hpp"
#include "echofusion/phantom_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace echofusion {

SegmentationVolume sector_support(const VoxelVolume& intensity, const CompoundConfig& cfg) {
  VoxelVolume mask(intensity.dims(), intensity.spacing(), intensity.origin(), ElementKind::UInt8);
  for (std::size_t i = 0; i < intensity.size(); ++i) mask.u8()[i] = intensity.value(i) > cfg.support_threshold;
  return close_volume(SegmentationVolume(std::move(mask)), cfg.support_closing_kernel);
}

CompoundGridSpec auto_grid_spec(std::span<const CompoundFrame> frames, const CompoundConfig& cfg) {
  if (frames.empty()) throw std::invalid_argument("compounding needs at least one frame");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& f : frames) {
    const auto& d = f.intensity->dims();
    for (int c = 0; c < 8; ++c) {
      const Vec3 idx((c & 1) ? d[0] - 1 : 0, (c & 2) ? d[1] - 1 : 0, (c & 4) ? d[2] - 1 : 0);
      const Vec3 p = f.pose.apply(f.intensity->voxel_to_world(idx));
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  }
  double spacing = cfg.spacing_mm > 0.0 ? cfg.spacing_mm : frames.front().intensity->spacing().minCoeff();
  const Vec3 extent = hi - lo;
  if (cfg.max_dim > 1) spacing = std::max(spacing, extent.maxCoeff() / (cfg.max_dim - 1));
  CompoundGridSpec spec;
  spec.spacing_mm = spacing;
  spec.origin = lo;
  for (int a = 0; a < 3; ++a) spec.dims[a] = static_cast<int>(std::floor(extent[a] / spacing + 1e-9)) + 1;
  return spec;
}

CompoundResult compound(std::span<const CompoundFrame> frames, const CompoundGridSpec& grid,
                        const CompoundConfig& cfg) {
  if (frames.empty()) throw std::invalid_argument("compounding needs at least one frame");
  const Vec3 spacing = Vec3::Constant(grid.spacing_mm);
  CompoundResult out{VoxelVolume(grid.dims, spacing, grid.origin, ElementKind::Float32),
                     VoxelVolume(grid.dims, spacing, grid.origin, ElementKind::Float32)};

  struct Prepared {
    const VoxelVolume* vol;
    SegmentationVolume support;
    Mat3 step;  // global-to-voxel-index linear part, pre-scaled by the output spacing
    Vec3 base;  // voxel index of the output origin
  };
  std::vector<Prepared> prep;
  prep.reserve(frames.size());
  for (const auto& f : frames) {
    const RigidPose inv = f.pose.inverse();
    const Vec3 inv_spacing = f.intensity->spacing().cwiseInverse();
    const Mat3 lin = inv_spacing.asDiagonal() * inv.rotation();
    const Vec3 base = inv_spacing.cwiseProduct(inv.apply(grid.origin) - f.intensity->origin());
    prep.push_back({f.intensity, sector_support(*f.intensity, cfg), lin * grid.spacing_mm, base});
  }

  auto dst = out.intensity.f32();
  auto wgt = out.weight.f32();
  const auto& gd = grid.dims;
  parallel_for(0, gd[2], [&](int z) {
    for (int y = 0; y < gd[1]; ++y) {
      for (int x = 0; x < gd[0]; ++x) {
        double sum = 0.0;
        int count = 0;
        const Vec3 g(x, y, z);
        for (const auto& p : prep) {
          const Vec3 idx = p.base + p.step * g;
          const int nx = static_cast<int>(std::lround(idx.x()));
          const int ny = static_cast<int>(std::lround(idx.y()));
          const int nz = static_cast<int>(std::lround(idx.z()));
          if (!p.vol->contains_index(nx, ny, nz) || !p.support.foreground(nx, ny, nz)) continue;
          const auto v = p.vol->trilinear_sample(p.vol->voxel_to_world(idx));
          if (!v) continue;
          sum += *v;
          ++count;
        }
        const std::size_t i = out.intensity.linear_index(x, y, z);
        dst[i] = count ? static_cast<float>(sum / count) : 0.0f;
        wgt[i] = static_cast<float>(count);
      }
    }
  });
  return out;
}

Index3 slice_indices(const VoxelVolume& vol) {
  const auto& d = vol.dims();
  return {d[0] / 2, d[1] / 2, d[2] / 2};
}

std::array<GrayImage, 3> orthogonal_slices(const VoxelVolume& vol) {
  const auto& d = vol.dims();
  const Index3 c = slice_indices(vol);
  GrayImage xy(d[0], d[1]), yz(d[2], d[1]), xz(d[0], d[2]);
  for (int y = 0; y < d[1]; ++y)
    for (int x = 0; x < d[0]; ++x) xy(x, y) = static_cast<float>(vol.at(x, y, c[2]));
  for (int y = 0; y < d[1]; ++y)
    for (int z = 0; z < d[2]; ++z) yz(z, y) = static_cast<float>(vol.at(c[0], y, z));
  for (int z = 0; z < d[2]; ++z)
    for (int x = 0; x < d[0]; ++x) xz(x, z) = static_cast<float>(vol.at(x, c[1], z));
  return {std::move(xy), std::move(yz), std::move(xz)};
}

void write_orthogonal_slices(const VoxelVolume& vol, const std::filesystem::path& stem) {
  const auto slices = orthogonal_slices(vol);
  const std::string base = stem.filename().string();
  const auto dir = stem.parent_path();
  write_gray_pgm(slices[0], dir / (base + "_xy.pgm"));
  write_gray_pgm(slices[1], dir / (base + "_yz.pgm"));
  write_gray_pgm(slices[2], dir / (base + "_xz.pgm"));
}

}  // namespace echofusion
