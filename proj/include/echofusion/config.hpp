#pragma once

#include "echofusion/compounding.hpp"
#include "echofusion/icp_tracking.hpp"
#include "echofusion/phantom_sim.hpp"
#include "echofusion/sector_geometry.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace echofusion {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class CameraMode { Auto, Manual };
enum class SegmentationMode { External, Threshold };

struct CameraSettings {
  CameraMode mode = CameraMode::Auto;
  double distance_mm = 0.0;
  double view_angle_deg = 0.0;
  int image_size = 480;
};

struct SegmentationSettings {
  SegmentationMode mode = SegmentationMode::External;
  // Midway between the default medium (40) and head (120) intensities.
  double threshold = 80.0;
  int closing_kernel = 3;
};

/// Every tunable of the pipeline. INI sections: [scene] [trajectory]
/// [artifacts] [sector] [camera] [tsdf] [icp] [compound]; unknown keys are errors.
struct PipelineConfig {
  PhantomScene scene = default_fetal_head();
  FanSpec fan;
  VolumeSpec volume;
  TrajectorySpec trajectory;
  ArtifactSpec artifacts;
  std::vector<int> dropout_frames;  // frames forced to drop out
  SectorConfig sector;
  CameraSettings camera;
  SegmentationSettings segmentation;
  TrackerConfig tracker;
  CompoundConfig compound;
};

PipelineConfig parse_config(std::string_view ini_text);
// Throws ConfigError("config not found: <path>") when the file is missing.
PipelineConfig load_config(const std::filesystem::path& path);

}  // namespace echofusion
