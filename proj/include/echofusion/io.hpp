#pragma once

#include "echofusion/core_types.hpp"
#include "echofusion/icp_tracking.hpp"
#include "echofusion/sector_geometry.hpp"
#include "echofusion/tsdf_fusion.hpp"
#include "echofusion/virtual_camera.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace echofusion {

inline constexpr std::string_view kVersion = "0.1.0";

enum class IoErrorCode {
  FileNotFound,
  MalformedHeader,
  PayloadLengthMismatch,
  UnsupportedElementType,
  ParseError,
  WriteFailed,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  IoErrorCode code() const { return code_; }

 private:
  IoErrorCode code_;
};

// MetaImage-style volume: `Key = Value` header (NDims, DimSize, ElementSpacing,
// Offset, ElementType, ElementDataFile) and a little-endian payload, x fastest.
// A ".mha" path embeds the payload (ElementDataFile = LOCAL); any other
// extension writes the payload to a sibling ".raw" file.
VoxelVolume read_volume(const std::filesystem::path& path);
void write_volume(const VoxelVolume& vol, const std::filesystem::path& path);

// 16-bit binary PGM, big-endian samples, value = round(depth_mm * 32), 0 = invalid.
inline constexpr double kDepthScale = 32.0;
DepthImage read_depth_pgm(const std::filesystem::path& path);
void write_depth_pgm(const DepthImage& depth, const std::filesystem::path& path);

// 8-bit binary PGM after min-max normalization (constant images map to 0).
void write_gray_pgm(const GrayImage& image, const std::filesystem::path& path);
Image2D<std::uint8_t> read_gray_pgm(const std::filesystem::path& path);

// ASCII PLY with per-vertex x y z nx ny nz and triangle faces.
TriangleMesh read_ply(const std::filesystem::path& path);
void write_ply(const TriangleMesh& mesh, const std::filesystem::path& path);

struct TrajectoryRecord {
  int frame = 0;
  TrackStatus status = TrackStatus::Tracked;
  RigidPose pose;
  double inlier_ratio = 0.0;
  double mean_residual_mm = 0.0;

  friend bool operator==(const TrajectoryRecord& a, const TrajectoryRecord& b) {
    return a.frame == b.frame && a.status == b.status && a.pose.rotation() == b.pose.rotation() &&
           a.pose.translation() == b.pose.translation() && a.inlier_ratio == b.inlier_ratio &&
           a.mean_residual_mm == b.mean_residual_mm;
  }
};

// One JSON object per line: frame, status, rotation (9 row-major), translation_mm,
// inlier_ratio, mean_residual_mm.
std::string format_trajectory_line(const TrajectoryRecord& rec);
TrajectoryRecord parse_trajectory_line(std::string_view line, int line_number = 1);
std::vector<TrajectoryRecord> read_trajectory(const std::filesystem::path& path);
void write_trajectory(const std::vector<TrajectoryRecord>& records, const std::filesystem::path& path);

// Writes <stem>_tsdf.mha and <stem>_weight.mha (float32).
void write_tsdf_snapshot(const TsdfGrid& grid, const std::filesystem::path& stem);
TsdfGrid read_tsdf_snapshot(const std::filesystem::path& stem, double truncation, float max_weight = 64.0f);

// Shortest decimal text that parses back to the same value.
std::string format_double(double v);
std::string format_float(float v);

}  // namespace echofusion
