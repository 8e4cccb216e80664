#pragma once

#include "echofusion/core_types.hpp"
#include "echofusion/sector_geometry.hpp"

#include <array>
#include <filesystem>
#include <span>

namespace echofusion {

struct CompoundFrame {
  const VoxelVolume* intensity = nullptr;
  RigidPose pose;  // frame to global
};

/// Output lattice in the global frame.
struct CompoundGridSpec {
  Index3 dims{0, 0, 0};
  double spacing_mm = 1.0;
  Vec3 origin{0.0, 0.0, 0.0};
};

struct CompoundConfig {
  // Sector support: intensity > threshold, then a cubic closing.
  double support_threshold = 1.0;
  int support_closing_kernel = 5;
  // Auto grid: 0 uses the first frame's smallest spacing.
  double spacing_mm = 0.0;
  int max_dim = 256;
};

struct CompoundResult {
  VoxelVolume intensity;  // float32, 0 where weight is 0
  VoxelVolume weight;     // float32 count of contributing frames
};

SegmentationVolume sector_support(const VoxelVolume& intensity, const CompoundConfig& cfg = {});

// Bounding box of all transformed frame corners; spacing grows if a side would exceed max_dim.
CompoundGridSpec auto_grid_spec(std::span<const CompoundFrame> frames, const CompoundConfig& cfg = {});

/// Uniform-weight average of every frame whose sector support contains the
/// voxel's nearest source sample. Throws std::invalid_argument on an empty list.
CompoundResult compound(std::span<const CompoundFrame> frames, const CompoundGridSpec& grid,
                        const CompoundConfig& cfg = {});

/// Central planes at integer dims/2: xy (col x, row y) at z, yz (col z, row y)
/// at x, xz (col x, row z) at y.
std::array<GrayImage, 3> orthogonal_slices(const VoxelVolume& vol);
// (x, y, z) plane indices used by orthogonal_slices.
Index3 slice_indices(const VoxelVolume& vol);

// Writes <stem>_xy.pgm, <stem>_yz.pgm, <stem>_xz.pgm.
void write_orthogonal_slices(const VoxelVolume& vol, const std::filesystem::path& stem);

}  // namespace echofusion
