#pragma once

#include "echofusion/compounding.hpp"
#include "echofusion/config.hpp"
#include "echofusion/icp_tracking.hpp"
#include "echofusion/io.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace echofusion {

namespace fs = std::filesystem;

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// sim

std::string frame_stem(int index);  // "frame_0007"

struct SimSummary {
  int frames = 0;
  int dropouts = 0;
  int shadowed = 0;
};

// Writes frame_NNNN_intensity.mha, frame_NNNN_seg.mha and gt.jsonl into out_dir.
SimSummary run_sim(const PipelineConfig& cfg, const fs::path& out_dir);

// ---------------------------------------------------------------------------
// track

struct FramePaths {
  fs::path intensity;
  fs::path segmentation;  // empty when no *_seg.mha sibling exists
};

// Every *_intensity.mha in `dir`, in lexicographic filename order.
std::vector<FramePaths> list_frames(const fs::path& dir);

struct TrackSummary {
  CameraPlacement placement;
  std::vector<std::string> warnings;
  std::vector<TrajectoryRecord> trajectory;
  RobustnessMetrics robustness;
  std::size_t mesh_vertices = 0;
  std::size_t mesh_triangles = 0;
};

// Writes trajectory.jsonl, model_tsdf.mha, model_weight.mha and mesh.ply.
// Per-frame failures become losses; only an empty frame list or an
// unusable camera placement throws.
TrackSummary run_track(const PipelineConfig& cfg, const fs::path& frames_dir, const fs::path& out_dir);

// ---------------------------------------------------------------------------
// fuse

struct FuseSummary {
  int frames_used = 0;
  CompoundGridSpec grid;
};

// Compounds tracked frames into `out_volume` and writes <stem>_{xy,yz,xz}.pgm beside it.
FuseSummary run_fuse(const PipelineConfig& cfg, const fs::path& frames_dir, const fs::path& trajectory,
                     const fs::path& out_volume);

// ---------------------------------------------------------------------------
// eval

/// Summary across sequences. `std` is the sample standard deviation (0 for one value).
struct SeriesStats {
  int count = 0;
  double mean = 0.0;
  double std = 0.0;
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};
SeriesStats summarize(std::vector<double> values);

struct PoseErrors {
  int frames = 0;
  double rotation_rmse_deg = 0.0;
  double translation_rmse_mm = 0.0;
  double rotation_max_deg = 0.0;
  double translation_max_mm = 0.0;
};

// Both trajectories are re-expressed relative to the first frame tracked in
// `estimate`; errors are taken over tracked frames present in both.
PoseErrors pose_errors(const std::vector<TrajectoryRecord>& estimate, const std::vector<TrajectoryRecord>& truth);

struct SequenceReport {
  std::string name;
  RobustnessMetrics robustness;
  std::optional<PoseErrors> pose;
};

struct EvalReport {
  std::vector<SequenceReport> sequences;
  SeriesStats total_frames;
  SeriesStats losses;
  SeriesStats longest_run;
  std::vector<double> dice;
  std::optional<SeriesStats> dice_stats;
};

struct EvalOptions {
  std::vector<fs::path> trajectories;
  std::optional<fs::path> ground_truth;
  std::optional<fs::path> seg_pairs;  // directory of <name>_pred.mha / <name>_gt.mha
};

EvalReport run_eval(const EvalOptions& opts);
std::string format_report_text(const EvalReport& report);
std::string format_report_json(const EvalReport& report);

// "98.11(54.65)"
std::string format_mean_std(double mean, double std, int decimals);

}  // namespace echofusion
